//! train and finetune: periodic checkpoints, held-out selection, loss CSV.

use std::io::Write;
use std::path::{Path, PathBuf};

use coinbot::evalkit::{action_mse, CheckpointEndpoint};
use coinbot::policy::{PolicyCheckpoint, SamplerConfig, TrainConfig, Trainer};
use coinbot::recorder::AlignedEpisode;
use serde::Serialize;

use crate::error::CliError;
use crate::write_json;

pub struct TrainOpts {
    pub cfg: TrainConfig,
    pub sampler: SamplerConfig,
    pub ckpt_every: usize,
    pub out: PathBuf,
}

/// Episodes are in seed order; the last tenth is held out for checkpoint
/// selection. Datasets under ten episodes are used whole.
pub fn split_heldout(mut eps: Vec<AlignedEpisode>) -> (Vec<AlignedEpisode>, Vec<AlignedEpisode>) {
    let n_held = eps.len() / 10;
    let held = eps.split_off(eps.len() - n_held);
    (eps, held)
}

#[derive(Debug, Serialize)]
struct Saved {
    epoch: usize,
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    heldout_mse: Option<f64>,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    kind: coinbot::policy::PolicyKind,
    epochs: usize,
    train_episodes: usize,
    heldout_episodes: usize,
    final_loss: Option<f64>,
    checkpoints: &'a [Saved],
    best: &'a Saved,
    fingerprint: String,
    provenance: &'a coinbot::policy::Provenance,
}

fn heldout_mse(ckpt: &PolicyCheckpoint, held: &[AlignedEpisode], o: &TrainOpts) -> Result<Option<f64>, CliError> {
    if held.is_empty() {
        return Ok(None);
    }
    let norm = ckpt.normalizer.action.clone();
    let mut ep = CheckpointEndpoint::new(ckpt.clone(), o.sampler)?;
    let r = action_mse(&mut ep, held, o.cfg.seed, Some(&norm))?;
    Ok(r.aggregate_normalized)
}

fn link_best(out: &Path, target: &str) -> std::io::Result<()> {
    let link = out.join("best.json");
    if link.symlink_metadata().is_ok() {
        std::fs::remove_file(&link)?;
    }
    #[cfg(unix)]
    {
        std::os::unix::fs::symlink(target, &link)
    }
    #[cfg(not(unix))]
    {
        std::fs::copy(out.join(target), &link).map(|_| ())
    }
}

/// Run `trainer` for the configured epochs, writing:
///
/// ```text
/// checkpoints/epoch_NNNNN.json   every `ckpt_every` epochs and at the end
/// best.json                      symlink to the lowest held-out action MSE
/// checkpoint.json                final weights
/// loss.csv                       epoch,loss
/// report.json
/// ```
pub fn run(mut trainer: Trainer, held: &[AlignedEpisode], train_episodes: usize, o: &TrainOpts) -> Result<PolicyCheckpoint, CliError> {
    let ckpt_dir = o.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let every = o.ckpt_every.max(1);
    let mut saved: Vec<Saved> = Vec::new();
    let mut save = |ckpt: &PolicyCheckpoint, epoch: usize, loss: Option<f64>| -> Result<(), CliError> {
        let rel = format!("checkpoints/epoch_{epoch:05}.json");
        ckpt.save(&o.out.join(&rel))?;
        let mse = heldout_mse(ckpt, held, o)?;
        let loss = loss.map_or_else(|| "-".to_string(), |l| format!("{l:.5}"));
        match mse {
            Some(m) => eprintln!("epoch {epoch}: loss {loss} held-out mse {m:.5}"),
            None => eprintln!("epoch {epoch}: loss {loss}"),
        }
        saved.push(Saved { epoch, path: rel, heldout_mse: mse });
        Ok(())
    };

    for e in 1..=o.cfg.epochs {
        let loss = trainer.run_epoch();
        if e % every == 0 || e == o.cfg.epochs {
            save(&trainer.checkpoint(), e, Some(loss))?;
        }
    }
    let last = trainer.checkpoint();
    if o.cfg.epochs == 0 {
        save(&last, 0, None)?;
    }
    last.save(&o.out.join("checkpoint.json"))?;

    // lowest held-out MSE, earliest on ties; without a held-out split the last one
    let best = saved
        .iter()
        .filter(|s| s.heldout_mse.is_some_and(f64::is_finite))
        .min_by(|a, b| a.heldout_mse.partial_cmp(&b.heldout_mse).unwrap().then(a.epoch.cmp(&b.epoch)))
        .unwrap_or_else(|| saved.last().expect("at least one checkpoint"));
    link_best(&o.out, &best.path)?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(o.out.join("loss.csv"))?);
    writeln!(csv, "epoch,loss")?;
    for (i, l) in trainer.losses().iter().enumerate() {
        writeln!(csv, "{},{l}", i + 1)?;
    }
    csv.flush()?;

    let report = TrainReport {
        kind: last.kind,
        epochs: o.cfg.epochs,
        train_episodes,
        heldout_episodes: held.len(),
        final_loss: trainer.losses().last().copied(),
        checkpoints: &saved,
        best,
        fingerprint: last.fingerprint(),
        provenance: &last.provenance,
    };
    write_json(&o.out.join("report.json"), &report)?;
    println!("best {} (epoch {})", o.out.join(&best.path).display(), best.epoch);
    Ok(last)
}

pub fn train(dataset: Vec<AlignedEpisode>, o: &TrainOpts) -> Result<PolicyCheckpoint, CliError> {
    let (train, held) = split_heldout(dataset);
    let trainer = Trainer::new(&train, &o.cfg)?;
    let ckpt = run(trainer, &held, train.len(), o)?;
    println!("checkpoint {} fingerprint {}", o.out.join("checkpoint.json").display(), ckpt.fingerprint());
    Ok(ckpt)
}

pub fn finetune(parent: &PolicyCheckpoint, dataset: Vec<AlignedEpisode>, o: &TrainOpts) -> Result<PolicyCheckpoint, CliError> {
    let (train, held) = split_heldout(dataset);
    let trainer = Trainer::from_parent(parent, &train, &o.cfg)?;
    let ckpt = run(trainer, &held, train.len(), o)?;
    println!("provenance: {}", chain(&ckpt, parent));
    Ok(ckpt)
}

/// `child [tasks] <- parent [tasks] <- grandparent`.
pub fn chain(child: &PolicyCheckpoint, parent: &PolicyCheckpoint) -> String {
    let mut s = format!(
        "{} [{}] <- {} [{}]",
        child.fingerprint(),
        child.provenance.tasks.join(","),
        parent.fingerprint(),
        parent.provenance.tasks.join(",")
    );
    if let Some(gp) = &parent.provenance.parent_checkpoint {
        s.push_str(&format!(" <- {gp}"));
    }
    s
}
