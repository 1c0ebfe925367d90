//! Run configuration. Every setting resolves as flag, then config file, then
//! built-in default.

use std::path::{Path, PathBuf};

use clap::Args;
use coinbot::policy::{
    ChunkConfig, DenoiserSpec, PolicyKind, SamplerConfig, ScheduleSpec, TrainConfig, DEFAULT_BETA_MAX,
    DEFAULT_BETA_MIN, DEFAULT_T,
};
use coinbot::recorder::{AlignConfig, DEFAULT_ALIGN_HZ};
use coinbot::simworld::{SessionConfig, StreamRates, TaskSpec, ViewTransform};
use serde::Deserialize;

use crate::error::CliError;

/// Contents of a `--config` TOML file. All keys are optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub operator: Option<String>,
    pub view: Option<String>,
    pub n_demos: Option<usize>,
    pub jobs: Option<usize>,
    pub align_hz: Option<f64>,
    pub noise_sigma: Option<f32>,
    pub grid: Option<bool>,
    pub state_hz: Option<f64>,
    pub cmd_hz: Option<f64>,
    pub obs_hz: Option<f64>,

    pub kind: Option<PolicyKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub ckpt_every: Option<usize>,
    #[serde(rename = "T_o")]
    pub t_o: Option<usize>,
    #[serde(rename = "T_p")]
    pub t_p: Option<usize>,
    #[serde(rename = "T_a")]
    pub t_a: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub diffusion_steps: Option<usize>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,

    pub sampler_steps: Option<usize>,
    pub eta: Option<f64>,

    pub n: Option<usize>,
    pub addr: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

#[derive(Debug, Clone, Default, Args)]
pub struct SessionArgs {
    /// Built-in task name or task file (.toml or .json)
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Operator tag stored with each episode
    #[arg(long)]
    pub operator: Option<String>,
    /// Camera view: A, B or C
    #[arg(long)]
    pub view: Option<String>,
    /// Gaussian noise added to the scripted operator's commands
    #[arg(long)]
    pub noise_sigma: Option<f32>,
    /// Also record the rendered occupancy grid
    #[arg(long)]
    pub grid: Option<bool>,
    #[arg(long)]
    pub state_hz: Option<f64>,
    #[arg(long)]
    pub cmd_hz: Option<f64>,
    #[arg(long)]
    pub obs_hz: Option<f64>,
}

impl SessionArgs {
    pub fn task(&self, file: &RunConfig) -> Result<TaskSpec, CliError> {
        let name = self
            .task
            .clone()
            .or_else(|| file.task.clone())
            .ok_or_else(|| CliError::config("no task given (--task or `task` in the config file)"))?;
        Ok(TaskSpec::load(&name)?)
    }

    pub fn seed(&self, file: &RunConfig) -> u64 {
        pick(&self.seed, &file.seed, 0)
    }

    pub fn view(&self, file: &RunConfig) -> Result<ViewTransform, CliError> {
        Ok(ViewTransform::named(&pick(&self.view, &file.view, "A".to_string()))?)
    }

    pub fn session(&self, file: &RunConfig) -> Result<SessionConfig, CliError> {
        let mut cfg = SessionConfig::new(self.task(file)?, self.seed(file));
        cfg.view = self.view(file)?;
        cfg.operator = pick(&self.operator, &file.operator, cfg.operator.clone());
        cfg.noise_sigma = pick(&self.noise_sigma, &file.noise_sigma, cfg.noise_sigma);
        cfg.grid = pick(&self.grid, &file.grid, cfg.grid);
        let r = cfg.rates;
        cfg.rates = StreamRates {
            state_hz: pick(&self.state_hz, &file.state_hz, r.state_hz),
            cmd_hz: pick(&self.cmd_hz, &file.cmd_hz, r.cmd_hz),
            obs_hz: pick(&self.obs_hz, &file.obs_hz, r.obs_hz),
        };
        if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
            return Err(CliError::config(format!("noise_sigma must be >= 0, got {}", cfg.noise_sigma)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AlignArgs {
    /// Control tick rate of the aligned episode
    #[arg(long)]
    pub align_hz: Option<f64>,
}

impl AlignArgs {
    pub fn resolve(&self, file: &RunConfig) -> Result<AlignConfig, CliError> {
        let hz = pick(&self.align_hz, &file.align_hz, DEFAULT_ALIGN_HZ);
        if !(hz > 0.0 && hz.is_finite()) {
            return Err(CliError::config(format!("align_hz must be > 0, got {hz}")));
        }
        Ok(AlignConfig::new(hz))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ChunkArgs {
    /// Observation window
    #[arg(long = "t-o")]
    pub t_o: Option<usize>,
    /// Predicted chunk length
    #[arg(long = "t-p")]
    pub t_p: Option<usize>,
    /// Executed actions per chunk
    #[arg(long = "t-a")]
    pub t_a: Option<usize>,
}

impl ChunkArgs {
    pub fn resolve(&self, file: &RunConfig) -> Result<ChunkConfig, CliError> {
        let d = ChunkConfig::default();
        let chunk = ChunkConfig {
            t_o: pick(&self.t_o, &file.t_o, d.t_o),
            t_p: pick(&self.t_p, &file.t_p, d.t_p),
            t_a: pick(&self.t_a, &file.t_a, d.t_a),
        };
        chunk.validate()?;
        Ok(chunk)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// diffusion or bc
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<PolicyKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub chunk: ChunkArgs,
    /// Denoiser hidden widths, comma separated
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    #[arg(long)]
    pub beta_min: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
}

fn parse_kind(s: &str) -> Result<PolicyKind, String> {
    match s {
        "diffusion" => Ok(PolicyKind::Diffusion),
        "bc" => Ok(PolicyKind::Bc),
        _ => Err(format!("unknown policy kind {s:?}, expected diffusion or bc")),
    }
}

impl ModelArgs {
    pub fn resolve(&self, file: &RunConfig, epochs: usize, seed: u64) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let chunk = self.chunk.resolve(file)?;
        let schedule = ScheduleSpec {
            t_steps: pick(&self.diffusion_steps, &file.diffusion_steps, DEFAULT_T),
            beta_min: pick(&self.beta_min, &file.beta_min, DEFAULT_BETA_MIN),
            beta_max: pick(&self.beta_max, &file.beta_max, DEFAULT_BETA_MAX),
        };
        schedule.build()?;
        let hidden = pick(&self.hidden, &file.hidden, d.denoiser.hidden.clone());
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(CliError::config("hidden widths must be non-empty and positive"));
        }
        let cfg = TrainConfig {
            kind: pick(&self.kind, &file.kind, d.kind),
            epochs,
            batch_size: pick(&self.batch_size, &file.batch_size, d.batch_size),
            lr: pick(&self.lr, &file.lr, d.lr),
            seed,
            chunk,
            schedule,
            denoiser: DenoiserSpec { hidden, ..d.denoiser.clone() },
            ..d
        };
        if cfg.batch_size == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(CliError::config("batch_size and lr must be positive"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerArgs {
    /// DDIM steps
    #[arg(long)]
    pub sampler_steps: Option<usize>,
    /// DDIM eta; 0 is deterministic
    #[arg(long)]
    pub eta: Option<f64>,
}

impl SamplerArgs {
    pub fn resolve(&self, file: &RunConfig) -> SamplerConfig {
        let d = SamplerConfig::default();
        SamplerConfig { steps: pick(&self.sampler_steps, &file.sampler_steps, d.steps), eta: pick(&self.eta, &file.eta, d.eta) }
    }
}

/// `flag`, else the file value, else `default`.
pub fn resolve<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    pick(flag, file, default)
}

pub fn require_out(flag: &Option<PathBuf>, file: &RunConfig) -> Result<PathBuf, CliError> {
    flag.clone().or_else(|| file.out.clone()).ok_or_else(|| CliError::config("no output directory (--out)"))
}
