use serde::{Deserialize, Serialize};

use crate::policy::RangeNormalizer;
use crate::recorder::AlignedEpisode;
use crate::translate::Fields;

use super::endpoint::{canonical_action_layout, query_seed, PolicyEndpoint, Query, ACTION_DIM};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub n_ticks: usize,
    /// Compared (tick, step) pairs; windows near an episode end are shorter.
    pub n_actions: usize,
    pub per_dim: Vec<f64>,
    pub aggregate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_dim_normalized: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_normalized: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Action-prediction error on held-out episodes. Each tick gets one chunk
/// and only its first `T_a` rows, the executed part, are scored against the
/// recorded labels. `normalizer` adds the same error in normalized units.
pub fn action_mse(
    endpoint: &mut dyn PolicyEndpoint,
    heldout: &[AlignedEpisode],
    seed: u64,
    normalizer: Option<&RangeNormalizer>,
) -> Result<MseReport, EvalError> {
    let spec = endpoint.spec();
    if let Some(n) = normalizer.filter(|n| n.dim() != ACTION_DIM) {
        return Err(EvalError::SchemaMismatch(format!("normalizer has {} dims, need {ACTION_DIM}", n.dim())));
    }
    let layout = canonical_action_layout();
    let mut sq = [0.0f64; ACTION_DIM];
    let mut sq_n = [0.0f64; ACTION_DIM];
    let (mut n_ticks, mut n_actions) = (0usize, 0usize);

    for (e, ep) in heldout.iter().enumerate() {
        let labels: Vec<Vec<f32>> = ep.ticks.iter().map(|t| layout.flatten(&t.action)).collect::<Result<_, _>>()?;
        let frames: Vec<&Fields> = ep.ticks.iter().map(|t| &t.obs).collect();
        for k in 0..ep.ticks.len() {
            let window: Vec<Fields> =
                (0..spec.t_o).map(|j| frames[(k + j + 1).saturating_sub(spec.t_o)].clone()).collect();
            let q = Query {
                episode: e,
                tick: k,
                seed: query_seed(seed.wrapping_add(e as u64), k),
                obs: &window,
                state: None,
            };
            let chunk = endpoint.infer(&q)?;
            if chunk.len() < spec.t_a {
                return Err(EvalError::SchemaMismatch(format!("chunk has {} rows, need {}", chunk.len(), spec.t_a)));
            }
            n_ticks += 1;
            for (j, pred) in chunk.iter().take(spec.t_a).enumerate() {
                let Some(label) = labels.get(k + j) else { break };
                if pred.len() != ACTION_DIM {
                    return Err(EvalError::SchemaMismatch(format!(
                        "action has {} dims, labels have {ACTION_DIM}",
                        pred.len()
                    )));
                }
                for d in 0..ACTION_DIM {
                    sq[d] += (pred[d] as f64 - label[d] as f64).powi(2);
                }
                if let Some(norm) = normalizer {
                    let (p, l) = (norm.normalize(pred), norm.normalize(label));
                    for d in 0..ACTION_DIM {
                        sq_n[d] += (p[d] as f64 - l[d] as f64).powi(2);
                    }
                }
                n_actions += 1;
            }
        }
    }
    if n_actions == 0 {
        return Err(EvalError::Policy(crate::policy::PolicyError::EmptyDataset));
    }
    let per_dim: Vec<f64> = sq.iter().map(|s| s / n_actions as f64).collect();
    let per_dim_normalized: Option<Vec<f64>> =
        normalizer.map(|_| sq_n.iter().map(|s| s / n_actions as f64).collect());
    Ok(MseReport {
        n_ticks,
        n_actions,
        aggregate: mean(&per_dim),
        aggregate_normalized: per_dim_normalized.as_deref().map(mean),
        per_dim,
        per_dim_normalized,
    })
}
