use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{Layout, Normalizer};
use super::model::{Architecture, DenoiserSpec, EncoderSpec, Geometry, Network, PolicyKind};
use super::nn::{Conv3x3, Linear, Mlp};
use super::schedule::ScheduleSpec;
use super::{ChunkConfig, PolicyError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tasks: Vec<String>,
    pub epochs: usize,
    pub parent_checkpoint: Option<String>,
    pub seed: u64,
}

/// A trained policy: weights plus everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub kind: PolicyKind,
    pub encoder: EncoderSpec,
    pub denoiser: DenoiserSpec,
    pub network: Network<f32>,
    pub normalizer: Normalizer,
    pub schedule: ScheduleSpec,
    pub chunk: ChunkConfig,
    pub obs_layout: Layout,
    pub action_layout: Layout,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    #[serde(rename = "in")]
    n_in: usize,
    #[serde(rename = "out")]
    n_out: usize,
    w: Vec<f32>,
    b: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvFile {
    size: usize,
    c_in: usize,
    c_out: usize,
    w: Vec<f32>,
    b: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderFile {
    spec: EncoderSpec,
    conv: Option<ConvFile>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenoiserFile {
    spec: DenoiserSpec,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    obs: Layout,
    action: Layout,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    kind: PolicyKind,
    encoder: EncoderFile,
    denoiser: DenoiserFile,
    normalizer: Normalizer,
    schedule: ScheduleSpec,
    chunk: ChunkConfig,
    layout: LayoutFile,
    provenance: Provenance,
}

fn layer_file(l: &Linear<f32>) -> LayerFile {
    LayerFile { n_in: l.n_in(), n_out: l.n_out(), w: l.w.iter().copied().collect(), b: l.b.to_vec() }
}

fn layer_from(f: LayerFile) -> Result<Linear<f32>, PolicyError> {
    let w = Array2::from_shape_vec((f.n_in, f.n_out), f.w)
        .map_err(|e| PolicyError::VersionMismatch(format!("layer weights: {e}")))?;
    if f.b.len() != f.n_out {
        return Err(PolicyError::VersionMismatch("layer bias length".into()));
    }
    Ok(Linear { w, b: Array1::from(f.b) })
}

impl PolicyCheckpoint {
    fn to_file(&self) -> CheckpointFile {
        let n = &self.network;
        CheckpointFile {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            encoder: EncoderFile {
                spec: self.encoder.clone(),
                conv: n.conv.as_ref().map(|cv| ConvFile {
                    size: cv.size,
                    c_in: cv.c_in,
                    c_out: cv.c_out(),
                    w: cv.w.iter().copied().collect(),
                    b: cv.b.to_vec(),
                }),
                layers: n.encoder.layers.iter().map(layer_file).collect(),
            },
            denoiser: DenoiserFile {
                spec: self.denoiser.clone(),
                layers: n.head.layers.iter().map(layer_file).collect(),
            },
            normalizer: self.normalizer.clone(),
            schedule: self.schedule,
            chunk: self.chunk,
            layout: LayoutFile { obs: self.obs_layout.clone(), action: self.action_layout.clone() },
            provenance: self.provenance.clone(),
        }
    }

    fn from_file(f: CheckpointFile) -> Result<Self, PolicyError> {
        let geom = Geometry::new(&f.encoder.spec, &f.denoiser.spec, &f.chunk, &f.layout.obs, &f.layout.action)?;
        let conv = match f.encoder.conv {
            Some(cf) => {
                let w = Array2::from_shape_vec((9 * cf.c_in, cf.c_out), cf.w)
                    .map_err(|e| PolicyError::VersionMismatch(format!("conv weights: {e}")))?;
                Some(Conv3x3 { size: cf.size, c_in: cf.c_in, w, b: Array1::from(cf.b) })
            }
            None => None,
        };
        let encoder = Mlp { layers: f.encoder.layers.into_iter().map(layer_from).collect::<Result<_, _>>()? };
        let head = Mlp { layers: f.denoiser.layers.into_iter().map(layer_from).collect::<Result<_, _>>()? };
        let network = Network { kind: f.kind, geom, conv, encoder, head };

        if !network.matches(&Architecture::new(f.kind, geom, &f.encoder.spec, &f.denoiser.spec)) {
            return Err(PolicyError::VersionMismatch("tensor shapes disagree with the stored specs".into()));
        }
        let n_obs = f.layout.obs.dim();
        let n_act = f.layout.action.dim();
        if f.normalizer.obs.dim() != n_obs || f.normalizer.action.dim() != n_act {
            return Err(PolicyError::VersionMismatch("normalizer size disagrees with the layout".into()));
        }
        Ok(PolicyCheckpoint {
            kind: f.kind,
            encoder: f.encoder.spec,
            denoiser: f.denoiser.spec,
            network,
            normalizer: f.normalizer,
            schedule: f.schedule,
            chunk: f.chunk,
            obs_layout: f.layout.obs,
            action_layout: f.layout.action,
            provenance: f.provenance,
        })
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_file()).expect("checkpoint serializes")
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| PolicyError::VersionMismatch(format!("not JSON: {e}")))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(PolicyError::VersionMismatch(format!("version {v}, expected {CHECKPOINT_VERSION}"))),
            None => return Err(PolicyError::VersionMismatch("missing version".into())),
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|e| PolicyError::VersionMismatch(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_json_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json_bytes(&fs::read(path)?)
    }

    /// `sha256:<hex>` of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }
}
