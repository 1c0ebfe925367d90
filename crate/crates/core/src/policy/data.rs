use serde::{Deserialize, Serialize};

use super::{ChunkConfig, PolicyError};
use crate::recorder::AlignedEpisode;
use crate::translate::Fields;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub name: String,
    pub shape: Vec<usize>,
}

impl FieldLayout {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered field names and shapes that define a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout(pub Vec<FieldLayout>);

impl Layout {
    pub fn of(fields: &Fields) -> Layout {
        Layout(fields.iter().map(|(k, v)| FieldLayout { name: k.clone(), shape: v.shape().to_vec() }).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.iter().map(FieldLayout::len).sum()
    }

    /// Offset and field of `name`.
    pub fn find(&self, name: &str) -> Option<(usize, &FieldLayout)> {
        let mut off = 0;
        for f in &self.0 {
            if f.name == name {
                return Some((off, f));
            }
            off += f.len();
        }
        None
    }

    pub fn flatten(&self, fields: &Fields) -> Result<Vec<f32>, PolicyError> {
        if Layout::of(fields) != *self {
            return Err(PolicyError::SchemaMismatch(format!(
                "fields {:?} do not match layout {:?}",
                Layout::of(fields).names(),
                self.names()
            )));
        }
        let mut out = Vec::with_capacity(self.dim());
        for f in &self.0 {
            out.extend(fields[&f.name].to_f32());
        }
        Ok(out)
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|f| f.name.as_str()).collect()
    }
}

/// Per-dimension min/max scaling to [-1, 1]. Dimensions whose range is
/// (numerically) zero are flagged constant and only shifted by their value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeNormalizer {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
    pub constant: Vec<bool>,
}

const CONSTANT_RANGE: f32 = 1e-6;

impl RangeNormalizer {
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let mut min = vec![f32::INFINITY; dim];
        let mut max = vec![f32::NEG_INFINITY; dim];
        for r in rows {
            for (i, &x) in r.iter().enumerate() {
                min[i] = min[i].min(x);
                max[i] = max[i].max(x);
            }
        }
        for i in 0..dim {
            if !min[i].is_finite() {
                min[i] = 0.0;
                max[i] = 0.0;
            }
        }
        let constant = min.iter().zip(&max).map(|(a, b)| b - a < CONSTANT_RANGE).collect();
        RangeNormalizer { min, max, constant }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn normalize(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi, v) = (self.min[i] as f64, self.max[i] as f64, v as f64);
                if self.constant[i] {
                    (v - lo) as f32
                } else {
                    (2.0 * (v - lo) / (hi - lo) - 1.0) as f32
                }
            })
            .collect()
    }

    pub fn denormalize(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi, v) = (self.min[i] as f64, self.max[i] as f64, v as f64);
                if self.constant[i] {
                    (v + lo) as f32
                } else {
                    ((v + 1.0) * 0.5 * (hi - lo) + lo) as f32
                }
            })
            .collect()
    }

    /// Apply to each of the `k` consecutive `dim`-sized blocks of `x`.
    pub fn normalize_blocks(&self, x: &[f32]) -> Vec<f32> {
        x.chunks(self.dim()).flat_map(|c| self.normalize(c)).collect()
    }

    pub fn denormalize_blocks(&self, x: &[f32]) -> Vec<f32> {
        x.chunks(self.dim()).flat_map(|c| self.denormalize(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs: RangeNormalizer,
    pub action: RangeNormalizer,
}

/// Flattened per-tick vectors of one episode.
#[derive(Debug, Clone)]
pub struct FlatEpisode {
    pub task: String,
    pub obs: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
}

pub fn layouts(episodes: &[AlignedEpisode]) -> Result<(Layout, Layout), PolicyError> {
    let first = episodes
        .iter()
        .find_map(|e| e.ticks.first())
        .ok_or(PolicyError::EmptyDataset)?;
    Ok((Layout::of(&first.obs), Layout::of(&first.action)))
}

pub fn flatten_episodes(
    episodes: &[AlignedEpisode],
    obs_layout: &Layout,
    action_layout: &Layout,
) -> Result<Vec<FlatEpisode>, PolicyError> {
    let mut out = Vec::with_capacity(episodes.len());
    for ep in episodes.iter().filter(|e| !e.ticks.is_empty()) {
        let mut obs = Vec::with_capacity(ep.ticks.len());
        let mut actions = Vec::with_capacity(ep.ticks.len());
        for t in &ep.ticks {
            obs.push(obs_layout.flatten(&t.obs)?);
            actions.push(action_layout.flatten(&t.action)?);
        }
        out.push(FlatEpisode { task: ep.meta.task.clone(), obs, actions });
    }
    if out.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    Ok(out)
}

/// Observation window ending at tick `k`, padded at the start by repeating
/// the first frame.
pub fn obs_window(obs: &[Vec<f32>], k: usize, t_o: usize) -> Vec<f32> {
    (0..t_o)
        .flat_map(|j| {
            let idx = (k + j + 1).saturating_sub(t_o);
            obs[idx].iter().copied()
        })
        .collect()
}

/// Action chunk starting at tick `k`. Past the end of the episode the last
/// action repeats, except in dimensions flagged in `zero_pad`, which hold 0.
/// Relative commands use that flag: repeating a displacement keeps moving.
pub fn action_chunk(actions: &[Vec<f32>], k: usize, t_p: usize, zero_pad: &[bool]) -> Vec<f32> {
    let last = actions.len() - 1;
    (0..t_p)
        .flat_map(|j| {
            let past = k + j > last;
            actions[(k + j).min(last)]
                .iter()
                .zip(zero_pad)
                .map(move |(&a, &z)| if past && z { 0.0 } else { a })
        })
        .collect()
}

/// Per-dimension flags for the fields of `layout` named in `fields`.
pub fn field_mask(layout: &Layout, fields: &[String]) -> Vec<bool> {
    layout.0.iter().flat_map(|f| std::iter::repeat_n(fields.contains(&f.name), f.len())).collect()
}

/// Normalized training pairs `(obs window, action chunk)`, one per tick.
pub struct Samples {
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n: usize,
}

pub fn build_samples(flat: &[FlatEpisode], norm: &Normalizer, chunk: &ChunkConfig, zero_pad: &[bool]) -> Samples {
    let obs_dim = norm.obs.dim() * chunk.t_o;
    let act_dim = norm.action.dim() * chunk.t_p;
    let mut s = Samples { obs: Vec::new(), actions: Vec::new(), obs_dim, act_dim, n: 0 };
    for ep in flat {
        let nobs: Vec<Vec<f32>> = ep.obs.iter().map(|o| norm.obs.normalize(o)).collect();
        for k in 0..ep.obs.len() {
            s.obs.extend(obs_window(&nobs, k, chunk.t_o));
            s.actions.extend(norm.action.normalize_blocks(&action_chunk(&ep.actions, k, chunk.t_p, zero_pad)));
            s.n += 1;
        }
    }
    s
}

pub fn fit_normalizer(flat: &[FlatEpisode], obs_dim: usize, act_dim: usize) -> Normalizer {
    Normalizer {
        obs: RangeNormalizer::fit(obs_dim, flat.iter().flat_map(|e| e.obs.iter().map(Vec::as_slice))),
        action: RangeNormalizer::fit(act_dim, flat.iter().flat_map(|e| e.actions.iter().map(Vec::as_slice))),
    }
}
