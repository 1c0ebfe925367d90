use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::PolicyCheckpoint;
use super::model::{stack, timestep_embeddings, PolicyKind};
use super::schedule::NoiseSchedule;
use super::PolicyError;
use crate::translate::Fields;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(rename = "S")]
    pub steps: usize,
    pub eta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 10, eta: 0.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, t_steps: usize) -> Result<(), PolicyError> {
        if self.steps == 0 || self.steps > t_steps || !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(PolicyError::BadSamplerConfig(format!(
                "need 1 <= S <= T={t_steps} and eta >= 0, got S={} eta={}",
                self.steps, self.eta
            )));
        }
        Ok(())
    }

    /// `round(linspace(T-1, 0, S))`, strictly decreasing.
    pub fn timesteps(&self, t_steps: usize) -> Vec<usize> {
        let s = self.steps;
        if s == 1 {
            return vec![t_steps - 1];
        }
        (0..s)
            .map(|i| ((t_steps - 1) as f64 * (1.0 - i as f64 / (s - 1) as f64)).round() as usize)
            .collect()
    }
}

/// DDIM reverse process over a batch of rows. `denoise(x, t)` predicts the
/// noise in `x` at timestep `t`; `noise` supplies per-row Gaussian draws for
/// the stochastic part when `eta > 0`.
pub fn ddim_loop(
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    mut x: Array2<f32>,
    mut noise: impl FnMut(usize) -> f32,
    mut denoise: impl FnMut(&Array2<f32>, usize) -> Array2<f32>,
) -> Array2<f32> {
    let taus = sampler.timesteps(sched.len());
    for (i, &t) in taus.iter().enumerate() {
        let eps = denoise(&x, t);
        let ab = sched.alpha_bar[t];
        let ab_prev = taus.get(i + 1).map_or(1.0, |&tp| sched.alpha_bar[tp]);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let sigma = sampler.eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).max(0.0).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let (rows, cols) = x.dim();
        for r in 0..rows {
            for col in 0..cols {
                let e = eps[[r, col]] as f64;
                let x0 = ((x[[r, col]] as f64 - sb * e) / sa).clamp(-1.0, 1.0);
                let mut v = ab_prev.sqrt() * x0 + dir * e;
                if sigma > 0.0 {
                    v += sigma * noise(r) as f64;
                }
                x[[r, col]] = v as f32;
            }
        }
    }
    x
}

impl PolicyCheckpoint {
    pub fn action_dim(&self) -> usize {
        self.action_layout.dim()
    }

    pub fn obs_frame_dim(&self) -> usize {
        self.obs_layout.dim()
    }

    /// Flatten one observation frame in layout order.
    pub fn flatten_obs(&self, fields: &Fields) -> Result<Vec<f32>, PolicyError> {
        self.obs_layout.flatten(fields)
    }

    fn normalized_window(&self, window: &[f32]) -> Result<Vec<f32>, PolicyError> {
        let want = self.chunk.t_o * self.obs_frame_dim();
        if window.len() != want {
            return Err(PolicyError::SchemaMismatch(format!(
                "observation window has {} values, expected {want} (T_o={} x {})",
                window.len(),
                self.chunk.t_o,
                self.obs_frame_dim()
            )));
        }
        Ok(self.normalizer.obs.normalize_blocks(window))
    }

    fn split_rows(&self, flat: &Array2<f32>) -> Vec<Vec<Vec<f32>>> {
        let a = self.action_dim();
        flat.rows()
            .into_iter()
            .map(|r| {
                let v: Vec<f32> = r.to_vec();
                v.chunks(a).map(|c| self.normalizer.action.denormalize(c)).collect()
            })
            .collect()
    }

    /// Sample one action chunk per window; row `i` uses `seeds[i]`. Each
    /// chunk is `T_p` denormalized action vectors.
    pub fn ddim_sample_batch(
        &self,
        windows: &[Vec<f32>],
        sampler: &SamplerConfig,
        seeds: &[u64],
    ) -> Result<Vec<Vec<Vec<f32>>>, PolicyError> {
        if self.kind != PolicyKind::Diffusion {
            return Err(PolicyError::InvalidSpec("ddim sampling needs a diffusion checkpoint".into()));
        }
        assert_eq!(windows.len(), seeds.len(), "one seed per window");
        let sched = self.schedule.build()?;
        sampler.validate(sched.len())?;
        let norm: Vec<Vec<f32>> = windows.iter().map(|w| self.normalized_window(w)).collect::<Result<_, _>>()?;
        let rows: Vec<&[f32]> = norm.iter().map(Vec::as_slice).collect();
        let net = &self.network;
        let emb = net.encode(stack::<f32>(&rows, net.geom.t_o * net.geom.frame_dim).view());
        let d = net.geom.chunk_dim;
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
        let mut x0 = Array2::zeros((windows.len(), d));
        for (r, rng) in rngs.iter_mut().enumerate() {
            for col in 0..d {
                x0[[r, col]] = rng.sample(StandardNormal);
            }
        }
        let out = ddim_loop(
            &sched,
            sampler,
            x0,
            |r| rngs[r].sample(StandardNormal),
            |x, t| {
                let t_emb = timestep_embeddings(&vec![t; x.nrows()], net.geom.t_emb_dim);
                net.head_forward(emb.view(), Some(&t_emb), Some(x))
            },
        );
        Ok(self.split_rows(&out))
    }

    /// One DDIM action chunk for a raw observation window of `T_o` frames.
    pub fn ddim_sample(&self, window: &[f32], sampler: &SamplerConfig, seed: u64) -> Result<Vec<Vec<f32>>, PolicyError> {
        Ok(self.ddim_sample_batch(&[window.to_vec()], sampler, &[seed])?.remove(0))
    }

    /// Deterministic behavioral-cloning prediction.
    pub fn bc_predict(&self, window: &[f32]) -> Result<Vec<Vec<f32>>, PolicyError> {
        if self.kind != PolicyKind::Bc {
            return Err(PolicyError::InvalidSpec("bc_predict needs a bc checkpoint".into()));
        }
        let norm = self.normalized_window(window)?;
        let net = &self.network;
        let emb = net.encode(stack::<f32>(&[&norm], norm.len()).view());
        let out = net.head_forward(emb.view(), None, None);
        Ok(self.split_rows(&out).remove(0))
    }

    /// Action chunk from either policy kind; `seed` is ignored for BC.
    pub fn infer(&self, window: &[f32], sampler: &SamplerConfig, seed: u64) -> Result<Vec<Vec<f32>>, PolicyError> {
        match self.kind {
            PolicyKind::Diffusion => self.ddim_sample(window, sampler, seed),
            PolicyKind::Bc => self.bc_predict(window),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::schedule::{forward_noise, make_schedule};

    #[test]
    fn timestep_subsequence() {
        let s = SamplerConfig { steps: 10, eta: 0.0 };
        assert_eq!(s.timesteps(100), vec![99, 88, 77, 66, 55, 44, 33, 22, 11, 0]);
        assert_eq!(SamplerConfig { steps: 1, eta: 0.0 }.timesteps(100), vec![99]);
        let all = SamplerConfig { steps: 100, eta: 0.0 }.timesteps(100);
        assert_eq!(all, (0..100).rev().collect::<Vec<_>>());
        assert!(SamplerConfig { steps: 101, eta: 0.0 }.validate(100).is_err());
        assert!(SamplerConfig { steps: 0, eta: 0.0 }.validate(100).is_err());
        assert!(SamplerConfig { steps: 5, eta: -0.1 }.validate(100).is_err());
    }

    #[test]
    fn full_sampler_visits_each_timestep_once() {
        let sched = make_schedule(100, 1e-4, 0.02).unwrap();
        let mut seen = Vec::new();
        let s = SamplerConfig { steps: 100, eta: 0.0 };
        ddim_loop(&sched, &s, Array2::zeros((1, 2)), |_| 0.0, |x, t| {
            seen.push(t);
            Array2::zeros(x.raw_dim())
        });
        assert_eq!(seen, (0..100).rev().collect::<Vec<_>>());
    }

    #[test]
    fn oracle_denoiser_recovers_x0_in_one_step() {
        let sched = make_schedule(100, 1e-4, 0.02).unwrap();
        let x0 = [0.7f32, -0.3, 0.05, -1.0];
        let eps = [0.4f32, -1.2, 2.0, 0.1];
        for t in 0..100 {
            let xt = forward_noise(&x0, t, &eps, &sched).unwrap();
            // a single-step sampler at timestep t: ab_prev = 1, so the output is x0-hat
            let mut one = sched.clone();
            one.beta = vec![sched.beta[t]];
            one.alpha = vec![sched.alpha[t]];
            one.alpha_bar = vec![sched.alpha_bar[t]];
            let got = ddim_loop(
                &one,
                &SamplerConfig { steps: 1, eta: 0.0 },
                Array2::from_shape_vec((1, 4), xt).unwrap(),
                |_| 0.0,
                |_, _| Array2::from_shape_vec((1, 4), eps.to_vec()).unwrap(),
            );
            for (g, w) in got.iter().zip(&x0) {
                assert!((g - w).abs() <= 1e-6, "t={t}: {g} vs {w}");
            }
        }
    }
}
