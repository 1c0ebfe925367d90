//! eval and rollout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use coinbot::bridge::{FieldSpec, Hello, RemotePolicy, PROTOCOL};
use coinbot::evalkit::{
    action_mse, dump_trajectories, mode_coverage, rollout, sample_initial_chunks, CheckpointEndpoint, DumpFormat,
    EvalError, EvalReport, ExpertEndpoint, PolicyEndpoint, Rollout, RolloutConfig, RolloutSummary, ACTION_DIM,
};
use coinbot::policy::{ChunkConfig, PolicyCheckpoint, SamplerConfig};
use coinbot::recorder::AlignedEpisode;
use coinbot::simworld::{observe, reset, TaskSpec, ViewTransform};

use crate::error::CliError;

pub fn load_checkpoint(path: &Path) -> Result<PolicyCheckpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::config(format!("no checkpoint at {}", path.display())));
    }
    PolicyCheckpoint::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Who produces the actions.
pub enum Source {
    Checkpoint(PolicyCheckpoint),
    /// A bridge server. The checkpoint, if given, only supplies the handshake.
    Bridge { addr: String, ckpt: Option<PolicyCheckpoint>, chunk: ChunkConfig },
    Expert { noise_sigma: f32, t_a: usize },
}

/// Handshake for a client that sends what the simulator observes.
pub fn task_hello(task: &TaskSpec, view: &ViewTransform, chunk: ChunkConfig) -> Hello {
    let obs = observe(&reset(task, 0), view, false);
    Hello {
        protocol: PROTOCOL.into(),
        obs_fields: obs
            .iter()
            .map(|(k, v)| (k.clone(), FieldSpec { dtype: "f32".into(), shape: v.shape().to_vec() }))
            .collect::<BTreeMap<_, _>>(),
        action_dim: ACTION_DIM,
        t_o: chunk.t_o,
        t_p: chunk.t_p,
        t_a: chunk.t_a,
    }
}

pub fn endpoint(
    source: Source,
    sampler: SamplerConfig,
    task: &TaskSpec,
    view: &ViewTransform,
) -> Result<Box<dyn PolicyEndpoint>, CliError> {
    Ok(match source {
        Source::Checkpoint(ckpt) => Box::new(CheckpointEndpoint::new(ckpt, sampler)?),
        Source::Bridge { addr, ckpt, chunk } => {
            let hello = match ckpt {
                Some(c) => Hello::from_checkpoint(&c),
                None => task_hello(task, view, chunk),
            };
            Box::new(RemotePolicy::connect(addr.as_str(), hello)?)
        }
        Source::Expert { noise_sigma, t_a } => Box::new(ExpertEndpoint::new(task.clone(), noise_sigma, t_a)),
    })
}

pub struct EvalOpts {
    pub task: TaskSpec,
    pub view: ViewTransform,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Held-out episodes for action MSE.
    pub heldout: Option<Vec<AlignedEpisode>>,
    /// Number of initial-observation samples for mode coverage.
    pub coverage: Option<usize>,
    pub normalizer: Option<coinbot::policy::RangeNormalizer>,
}

fn write_outputs(out: &Path, report: &EvalReport, r: &Rollout) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), report.to_json())?;
    dump_trajectories(&r.trajectories, &out.join("trajectories.csv"), DumpFormat::Csv)?;
    dump_trajectories(&r.trajectories, &out.join("trajectories.svg"), DumpFormat::Svg)?;
    Ok(())
}

/// Rollout plus the optional offline metrics. Writes `report.json`,
/// `trajectories.csv` and `trajectories.svg`; wall time goes to stderr only.
/// A lost endpoint still writes the finished episodes, flagged partial.
pub fn eval(ep: &mut dyn PolicyEndpoint, o: &EvalOpts) -> Result<EvalReport, CliError> {
    let start = Instant::now();
    let mut report = EvalReport { action_mse: None, rollout: None, mode_coverage: None, wall_time_s: 0.0 };

    let cfg = RolloutConfig { view: o.view.clone(), ..RolloutConfig::new(o.task.clone(), o.n, o.seed) };
    let r = match rollout(ep, &cfg) {
        Ok(r) => r,
        Err(EvalError::EndpointUnavailable { reason, partial }) => {
            let partial = partial.map(|b| *b).unwrap_or(Rollout {
                task: o.task.name.to_string(),
                seed: o.seed,
                episodes: vec![],
                trajectories: vec![],
            });
            report.rollout = Some(RolloutSummary::of(&partial, true));
            report.wall_time_s = start.elapsed().as_secs_f64();
            write_outputs(&o.out, &report, &partial)?;
            eprintln!("wall_time_s {:.3}", report.wall_time_s);
            return Err(CliError::Endpoint(format!(
                "{reason} after {} of {} episodes; partial report in {}",
                partial.n(),
                o.n,
                o.out.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    report.rollout = Some(RolloutSummary::of(&r, false));

    if let Some(held) = &o.heldout {
        report.action_mse = Some(action_mse(ep, held, o.seed, o.normalizer.as_ref())?);
    }
    if let Some(k) = o.coverage {
        let chunks = sample_initial_chunks(ep, &o.task, &o.view, o.seed, k, o.seed)?;
        report.mode_coverage = Some(mode_coverage(&chunks, ep.spec().t_a));
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    write_outputs(&o.out, &report, &r)?;

    let s = report.rollout.as_ref().expect("rollout ran");
    println!("{}: {}/{} successes ({:.1}%) failures {:?}", s.task, s.successes, s.n, 100.0 * s.success_rate, s.failures);
    if let Some(m) = &report.action_mse {
        println!("action mse {:.6} per dim {:?}", m.aggregate, m.per_dim);
    }
    if let Some(c) = &report.mode_coverage {
        println!("mode coverage {:?}", c.0);
    }
    eprintln!("wall_time_s {:.3}", report.wall_time_s);
    Ok(report)
}
