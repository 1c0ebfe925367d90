mod config;
mod data;
mod error;
mod eval;
mod plot;
mod serve;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coinbot::bridge::{default_addr, ADDR_ENV};
use coinbot::policy::TrainConfig;

use config::{resolve, AlignArgs, ChunkArgs, ModelArgs, RunConfig, SamplerArgs, SessionArgs};
use error::CliError;
use eval::{EvalOpts, Source};
use train::TrainOpts;

/// Desk-scale robot learning: collect demonstrations, train diffusion
/// policies, evaluate them in simulation or over the bridge.
#[derive(Parser)]
#[command(name = "coinbot", version)]
struct Cli {
    /// TOML run config; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted demonstrations through the full capture path
    Collect {
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        align: AlignArgs,
        #[arg(long)]
        n_demos: Option<usize>,
        /// Sessions recorded in parallel
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check stream frequencies of recorded episodes
    Validate {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Also write report.json here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-align recorded episodes at another tick rate
    Align {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        align: AlignArgs,
        /// Write here instead of in place
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy from scratch
    Train {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save a checkpoint every k epochs
        #[arg(long)]
        ckpt_every: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Continue training a checkpoint on a new dataset
    Finetune {
        #[arg(long)]
        parent: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ckpt_every: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Closed-loop success rate, plus optional action MSE and mode coverage
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        n: Option<usize>,
        /// Query a bridge server instead of running the checkpoint in-process
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        bridge: Option<String>,
        /// Held-out episodes for action MSE
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Initial-observation samples for mode coverage
        #[arg(long)]
        coverage: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        chunk: ChunkArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Closed-loop rollouts and trajectory dumps for a checkpoint or the scripted expert
    Rollout {
        #[arg(long, conflicts_with = "expert")]
        ckpt: Option<PathBuf>,
        /// Roll out the scripted demonstrator
        #[arg(long)]
        expert: bool,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Serve a checkpoint over the bridge protocol until interrupted
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        /// Listen address [default: $COIN_BRIDGE_ADDR or 127.0.0.1:7878]
        #[arg(long)]
        addr: Option<String>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Render trajectories.csv or loss.csv as SVG
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    s.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = RunConfig::load(cli.config.as_deref())?;
    let out = |flag: &Option<PathBuf>| config::require_out(flag, &file);
    match cli.cmd {
        Cmd::Collect { session, align, n_demos, jobs, out: o } => data::collect(&data::CollectOpts {
            base: session.session(&file)?,
            align: align.resolve(&file)?,
            n_demos: resolve(&n_demos, &file.n_demos, 100),
            jobs: resolve(&jobs, &file.jobs, 1),
            out: out(&o)?,
        }),
        Cmd::Validate { data: d, out: o } => data::validate(&d, o.as_deref()),
        Cmd::Align { data: d, align, out: o } => data::realign(&d, &align.resolve(&file)?, o.as_deref()),
        Cmd::Train { data: d, epochs, seed, out: o, ckpt_every, model, sampler } => {
            let epochs = resolve(&epochs, &file.epochs, 100);
            let opts = TrainOpts {
                cfg: model.resolve(&file, epochs, resolve(&seed, &file.seed, 0))?,
                sampler: sampler.resolve(&file),
                ckpt_every: resolve(&ckpt_every, &file.ckpt_every, (epochs / 10).max(1)),
                out: out(&o)?,
            };
            train::train(data::load_dataset(&d)?, &opts).map(drop)
        }
        Cmd::Finetune { parent, data: d, epochs, seed, out: o, ckpt_every, batch_size, lr, sampler } => {
            let parent = eval::load_checkpoint(&parent)?;
            let epochs = resolve(&epochs, &file.epochs, 20);
            // architecture, chunking and schedule always come from the parent
            let def = TrainConfig::default();
            let cfg = TrainConfig {
                epochs,
                seed: resolve(&seed, &file.seed, 0),
                batch_size: resolve(&batch_size, &file.batch_size, def.batch_size),
                lr: resolve(&lr, &file.lr, def.lr),
                ..def
            };
            if cfg.batch_size == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
                return Err(CliError::config("batch_size and lr must be positive"));
            }
            let opts = TrainOpts {
                cfg,
                sampler: sampler.resolve(&file),
                ckpt_every: resolve(&ckpt_every, &file.ckpt_every, (epochs / 10).max(1)),
                out: out(&o)?,
            };
            train::finetune(&parent, data::load_dataset(&d)?, &opts).map(drop)
        }
        Cmd::Eval { ckpt, session, n, bridge, data: d, coverage, out: o, chunk, sampler } => {
            let task = session.task(&file)?;
            let view = session.view(&file)?;
            let ckpt = ckpt.as_deref().map(eval::load_checkpoint).transpose()?;
            let normalizer = ckpt.as_ref().map(|c| c.normalizer.action.clone());
            let source = match (bridge, ckpt) {
                (Some(addr), ckpt) => {
                    let addr = if addr.is_empty() { file.addr.clone().unwrap_or_else(default_addr) } else { addr };
                    Source::Bridge { addr, ckpt, chunk: chunk.resolve(&file)? }
                }
                (None, Some(c)) => Source::Checkpoint(c),
                (None, None) => return Err(CliError::config("eval needs --ckpt or --bridge")),
            };
            let mut ep = eval::endpoint(source, sampler.resolve(&file), &task, &view)?;
            let opts = EvalOpts {
                task,
                view,
                n: resolve(&n, &file.n, 50),
                seed: session.seed(&file),
                out: out(&o)?,
                heldout: if d.is_empty() { None } else { Some(data::load_dataset(&d)?) },
                coverage,
                normalizer,
            };
            eval::eval(&mut *ep, &opts).map(drop)
        }
        Cmd::Rollout { ckpt, expert, session, n, out: o, sampler } => {
            let task = session.task(&file)?;
            let view = session.view(&file)?;
            let source = match (ckpt, expert) {
                (_, true) => Source::Expert { noise_sigma: session.session(&file)?.noise_sigma, t_a: 1 },
                (Some(p), false) => Source::Checkpoint(eval::load_checkpoint(&p)?),
                (None, false) => return Err(CliError::config("rollout needs --ckpt or --expert")),
            };
            let mut ep = eval::endpoint(source, sampler.resolve(&file), &task, &view)?;
            let opts = EvalOpts {
                task,
                view,
                n: resolve(&n, &file.n, 50),
                seed: session.seed(&file),
                out: out(&o)?,
                heldout: None,
                coverage: None,
                normalizer: None,
            };
            eval::eval(&mut *ep, &opts).map(drop)
        }
        Cmd::Serve { ckpt, addr, sampler } => {
            let ckpt = eval::load_checkpoint(&ckpt)?;
            let addr = addr.or_else(|| file.addr.clone()).unwrap_or_else(default_addr);
            serve::serve(ckpt, sampler.resolve(&file), &addr)
        }
        Cmd::Plot { input, out } => plot::plot(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coinbot: {e}");
            if matches!(e, CliError::Endpoint(_)) {
                eprintln!("(bridge address defaults to ${ADDR_ENV})");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

