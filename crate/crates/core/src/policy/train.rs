use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::{PolicyCheckpoint, Provenance};
use super::data::{build_samples, field_mask, fit_normalizer, flatten_episodes, layouts, Layout, Normalizer, Samples};
use super::model::{timestep_embeddings, Batch, DenoiserSpec, EncoderSpec, Geometry, Network, PolicyKind};
use super::nn::Adam;
use super::schedule::{NoiseSchedule, ScheduleSpec};
use super::{ChunkConfig, PolicyError};
use crate::recorder::AlignedEpisode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: PolicyKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub chunk: ChunkConfig,
    pub encoder: EncoderSpec,
    pub denoiser: DenoiserSpec,
    pub schedule: ScheduleSpec,
    /// Action fields padded with zeros, not the last value, past an
    /// episode's end.
    pub zero_pad: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: PolicyKind::Diffusion,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            chunk: ChunkConfig::default(),
            encoder: EncoderSpec::default(),
            denoiser: DenoiserSpec::default(),
            schedule: ScheduleSpec::default(),
            zero_pad: vec!["delta_xy".into()],
        }
    }
}

pub const EMA_MAX_DECAY: f64 = 0.9999;

/// Epoch-at-a-time trainer, so callers can checkpoint between epochs.
pub struct Trainer {
    kind: PolicyKind,
    batch_size: usize,
    encoder_spec: EncoderSpec,
    denoiser_spec: DenoiserSpec,
    chunk: ChunkConfig,
    schedule: NoiseSchedule,
    obs_layout: Layout,
    action_layout: Layout,
    normalizer: Normalizer,
    samples: Samples,
    net: Network<f32>,
    ema: Network<f32>,
    ema_steps: u64,
    grads: Network<f32>,
    opt: Adam<f32>,
    rng: ChaCha8Rng,
    tasks: BTreeSet<String>,
    parent: Option<String>,
    seed: u64,
    epochs_done: usize,
    losses: Vec<f64>,
}

struct Prepared {
    obs_layout: Layout,
    action_layout: Layout,
    normalizer: Normalizer,
    samples: Samples,
    tasks: BTreeSet<String>,
}

fn prepare(dataset: &[AlignedEpisode], chunk: &ChunkConfig, zero_pad: &[String]) -> Result<Prepared, PolicyError> {
    let (obs_layout, action_layout) = layouts(dataset)?;
    let flat = flatten_episodes(dataset, &obs_layout, &action_layout)?;
    let normalizer = fit_normalizer(&flat, obs_layout.dim(), action_layout.dim());
    let samples = build_samples(&flat, &normalizer, chunk, &field_mask(&action_layout, zero_pad));
    let tasks = flat.iter().map(|e| e.task.clone()).collect();
    Ok(Prepared { obs_layout, action_layout, normalizer, samples, tasks })
}

impl Trainer {
    pub fn new(dataset: &[AlignedEpisode], cfg: &TrainConfig) -> Result<Trainer, PolicyError> {
        if cfg.batch_size == 0 {
            return Err(PolicyError::InvalidSpec("batch_size must be positive".into()));
        }
        let schedule = cfg.schedule.build()?;
        let p = prepare(dataset, &cfg.chunk, &cfg.zero_pad)?;
        let geom = Geometry::new(&cfg.encoder, &cfg.denoiser, &cfg.chunk, &p.obs_layout, &p.action_layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Network::init(cfg.kind, geom, &cfg.encoder, &cfg.denoiser, &mut rng);
        Ok(Self::assemble(cfg, schedule, p, net, rng, None))
    }

    /// Warm start from `parent` with a normalizer refit on `dataset`.
    pub fn from_parent(
        parent: &PolicyCheckpoint,
        dataset: &[AlignedEpisode],
        cfg: &TrainConfig,
    ) -> Result<Trainer, PolicyError> {
        let p = prepare(dataset, &parent.chunk, &cfg.zero_pad)?;
        if p.obs_layout != parent.obs_layout || p.action_layout != parent.action_layout {
            return Err(PolicyError::SchemaMismatch(format!(
                "dataset fields obs {:?} action {:?} differ from parent obs {:?} action {:?}",
                p.obs_layout.names(),
                p.action_layout.names(),
                parent.obs_layout.names(),
                parent.action_layout.names()
            )));
        }
        let cfg = TrainConfig {
            kind: parent.kind,
            chunk: parent.chunk,
            encoder: parent.encoder.clone(),
            denoiser: parent.denoiser.clone(),
            schedule: parent.schedule,
            ..cfg.clone()
        };
        let schedule = cfg.schedule.build()?;
        let mut p = p;
        p.tasks.extend(parent.provenance.tasks.iter().cloned());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self::assemble(&cfg, schedule, p, parent.network.clone(), rng, Some(parent.fingerprint())))
    }

    fn assemble(
        cfg: &TrainConfig,
        schedule: NoiseSchedule,
        p: Prepared,
        net: Network<f32>,
        rng: ChaCha8Rng,
        parent: Option<String>,
    ) -> Trainer {
        let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Trainer {
            kind: cfg.kind,
            batch_size: cfg.batch_size,
            encoder_spec: cfg.encoder.clone(),
            denoiser_spec: cfg.denoiser.clone(),
            chunk: cfg.chunk,
            schedule,
            obs_layout: p.obs_layout,
            action_layout: p.action_layout,
            normalizer: p.normalizer,
            samples: p.samples,
            grads: net.zeros_like(),
            ema: net.clone(),
            ema_steps: 0,
            net,
            opt: Adam::new(&sizes, cfg.lr),
            rng,
            tasks: p.tasks,
            parent,
            seed: cfg.seed,
            epochs_done: 0,
            losses: Vec::new(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.n
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn batch(&mut self, idx: &[usize]) -> Batch<f32> {
        let s = &self.samples;
        let b = idx.len();
        let mut obs = Array2::zeros((b, s.obs_dim));
        let mut x0 = Array2::zeros((b, s.act_dim));
        for (r, &i) in idx.iter().enumerate() {
            obs.row_mut(r).assign(&ndarray::aview1(&s.obs[i * s.obs_dim..(i + 1) * s.obs_dim]));
            x0.row_mut(r).assign(&ndarray::aview1(&s.actions[i * s.act_dim..(i + 1) * s.act_dim]));
        }
        match self.kind {
            PolicyKind::Bc => Batch { obs, t_emb: None, x_t: None, target: x0 },
            PolicyKind::Diffusion => {
                let t_steps = self.schedule.len();
                let ts: Vec<usize> = (0..b).map(|_| self.rng.random_range(0..t_steps)).collect();
                let eps = Array2::from_shape_simple_fn((b, s.act_dim), || self.rng.sample::<f32, _>(StandardNormal));
                let mut x_t = x0;
                for (r, &t) in ts.iter().enumerate() {
                    let ab = self.schedule.alpha_bar[t];
                    let (a, c) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                    let mut row = x_t.row_mut(r);
                    row.zip_mut_with(&eps.row(r), |x, &e| *x = a * *x + c * e);
                }
                let t_emb = timestep_embeddings(&ts, self.denoiser_spec.t_emb_dim);
                Batch { obs, t_emb: Some(t_emb), x_t: Some(x_t), target: eps }
            }
        }
    }

    /// Exponential moving average of the weights with the warmup
    /// `decay = 1 - (1 + step)^-0.75`, capped at `EMA_MAX_DECAY`.
    fn update_ema(&mut self) {
        self.ema_steps += 1;
        let decay = (1.0 - (1.0 + self.ema_steps as f64).powf(-0.75)).min(EMA_MAX_DECAY) as f32;
        for (e, w) in self.ema.tensors_mut().into_iter().zip(self.net.tensors()) {
            for (e, &w) in e.iter_mut().zip(w) {
                *e = decay * *e + (1.0 - decay) * w;
            }
        }
    }

    /// One pass over the shuffled samples; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> f64 {
        let mut order: Vec<usize> = (0..self.samples.n).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0f64;
        for idx in order.chunks(self.batch_size) {
            let batch = self.batch(idx);
            for t in self.grads.tensors_mut() {
                t.fill(0.0);
            }
            let loss = self.net.loss_and_grad(&batch, &mut self.grads);
            self.opt.step(self.net.tensors_mut(), self.grads.tensors());
            self.update_ema();
            total += loss as f64 * idx.len() as f64;
        }
        let mean = total / self.samples.n as f64;
        self.losses.push(mean);
        self.epochs_done += 1;
        mean
    }

    /// The checkpoint carries the moving-average weights.
    pub fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            kind: self.kind,
            encoder: self.encoder_spec.clone(),
            denoiser: self.denoiser_spec.clone(),
            network: self.ema.clone(),
            normalizer: self.normalizer.clone(),
            schedule: self.schedule.spec,
            chunk: self.chunk,
            obs_layout: self.obs_layout.clone(),
            action_layout: self.action_layout.clone(),
            provenance: Provenance {
                tasks: self.tasks.iter().cloned().collect(),
                epochs: self.epochs_done,
                parent_checkpoint: self.parent.clone(),
                seed: self.seed,
            },
        }
    }
}

/// Train from scratch; returns the final checkpoint and per-epoch mean loss.
pub fn train(dataset: &[AlignedEpisode], cfg: &TrainConfig) -> Result<(PolicyCheckpoint, Vec<f64>), PolicyError> {
    let mut t = Trainer::new(dataset, cfg)?;
    for _ in 0..cfg.epochs {
        t.run_epoch();
    }
    Ok((t.checkpoint(), t.losses.clone()))
}

/// Behavioral-cloning baseline with the same encoder and trunk sizes.
pub fn bc_train(dataset: &[AlignedEpisode], cfg: &TrainConfig) -> Result<(PolicyCheckpoint, Vec<f64>), PolicyError> {
    train(dataset, &TrainConfig { kind: PolicyKind::Bc, ..cfg.clone() })
}

/// Continue training `parent` on a combined dataset for `cfg.epochs` epochs.
pub fn finetune(
    parent: &PolicyCheckpoint,
    dataset: &[AlignedEpisode],
    cfg: &TrainConfig,
) -> Result<(PolicyCheckpoint, Vec<f64>), PolicyError> {
    let mut t = Trainer::from_parent(parent, dataset, cfg)?;
    for _ in 0..cfg.epochs {
        t.run_epoch();
    }
    Ok((t.checkpoint(), t.losses.clone()))
}
