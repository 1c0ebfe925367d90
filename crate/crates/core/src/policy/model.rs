use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Layout;
use super::nn::{c, cols, hcat, Conv3x3, Linear, Mlp, Real};
use super::{ChunkConfig, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "state-mlp")]
    StateMlp,
    #[serde(rename = "grid-conv")]
    GridConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Output channels of the grid convolution (grid-conv only).
    pub conv_channels: usize,
    /// Observation field rendered as `[size, size, channels]` (grid-conv only).
    pub grid_field: String,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: EncoderKind::StateMlp,
            hidden: vec![256],
            embedding_dim: 64,
            conv_channels: 8,
            grid_field: "grid".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub trunk: String,
    pub hidden: Vec<usize>,
    pub t_emb_dim: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec { trunk: "mlp".into(), hidden: vec![256, 256], t_emb_dim: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Diffusion,
    Bc,
}

/// Where the grid sits inside one observation frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSlot {
    pub offset: usize,
    pub size: usize,
    pub channels: usize,
}

impl GridSlot {
    fn len(&self) -> usize {
        self.size * self.size * self.channels
    }
}

/// Input/output geometry shared by the encoder and head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub t_o: usize,
    pub frame_dim: usize,
    pub grid: Option<GridSlot>,
    pub t_emb_dim: usize,
    /// `T_p * action_dim`
    pub chunk_dim: usize,
}

impl Geometry {
    pub fn new(
        enc: &EncoderSpec,
        den: &DenoiserSpec,
        chunk: &ChunkConfig,
        obs_layout: &Layout,
        action_layout: &Layout,
    ) -> Result<Geometry, PolicyError> {
        if enc.embedding_dim == 0 {
            return Err(PolicyError::InvalidSpec("embedding_dim must be positive".into()));
        }
        if den.trunk != "mlp" {
            return Err(PolicyError::InvalidSpec(format!("unsupported trunk {:?}", den.trunk)));
        }
        if den.t_emb_dim % 2 != 0 {
            return Err(PolicyError::InvalidSpec("t_emb_dim must be even".into()));
        }
        chunk.validate()?;
        let grid = match enc.kind {
            EncoderKind::StateMlp => None,
            EncoderKind::GridConv => {
                let (offset, f) = obs_layout.find(&enc.grid_field).ok_or_else(|| {
                    PolicyError::SchemaMismatch(format!("grid-conv needs an observation field {:?}", enc.grid_field))
                })?;
                match f.shape[..] {
                    [h, w, ch] if h == w => Some(GridSlot { offset, size: h, channels: ch }),
                    _ => {
                        return Err(PolicyError::SchemaMismatch(format!(
                            "grid field shape {:?} is not [n, n, c]",
                            f.shape
                        )))
                    }
                }
            }
        };
        Ok(Geometry {
            t_o: chunk.t_o,
            frame_dim: obs_layout.dim(),
            grid,
            t_emb_dim: den.t_emb_dim,
            chunk_dim: chunk.t_p * action_layout.dim(),
        })
    }
}

/// Sinusoidal timestep embedding: `[sin(t w_i).., cos(t w_i)..]`, `w_i = 10000^(-i/half)`.
pub fn timestep_embedding<F: Real>(t: usize, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
    let (s, co): (Vec<F>, Vec<F>) = freqs.map(|w| (c::<F>((t as f64 * w).sin()), c::<F>((t as f64 * w).cos()))).unzip();
    s.into_iter().chain(co).collect()
}

pub fn timestep_embeddings<F: Real>(ts: &[usize], dim: usize) -> Array2<F> {
    let flat: Vec<F> = ts.iter().flat_map(|&t| timestep_embedding::<F>(t, dim)).collect();
    Array2::from_shape_vec((ts.len(), dim), flat).expect("embedding shape")
}

/// Layer widths implied by the specs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// `(size, c_in, c_out)`
    pub conv: Option<(usize, usize, usize)>,
    pub encoder: Vec<usize>,
    pub head: Vec<usize>,
}

impl Architecture {
    pub fn new(kind: PolicyKind, geom: Geometry, enc: &EncoderSpec, den: &DenoiserSpec) -> Self {
        let conv = geom.grid.map(|g| (g.size, g.channels, enc.conv_channels));
        let enc_in = match geom.grid {
            Some(g) => geom.t_o * (geom.frame_dim - g.len() + g.size * g.size * enc.conv_channels),
            None => geom.t_o * geom.frame_dim,
        };
        let mut encoder = vec![enc_in];
        encoder.extend(&enc.hidden);
        encoder.push(enc.embedding_dim);
        let head_in = match kind {
            PolicyKind::Diffusion => geom.t_emb_dim + enc.embedding_dim + geom.chunk_dim,
            PolicyKind::Bc => enc.embedding_dim,
        };
        let mut head = vec![head_in];
        head.extend(&den.hidden);
        head.push(geom.chunk_dim);
        Architecture { conv, encoder, head }
    }
}

/// Observation encoder plus head. The diffusion head reads
/// `[t_emb | obs_emb | x_t]` and predicts noise; the BC head reads `obs_emb`
/// and predicts the action chunk directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub kind: PolicyKind,
    pub geom: Geometry,
    pub conv: Option<Conv3x3<F>>,
    pub encoder: Mlp<F>,
    pub head: Mlp<F>,
}

/// One training batch. `t_emb` and `x_t` are present for diffusion only.
pub struct Batch<F> {
    pub obs: Array2<F>,
    pub t_emb: Option<Array2<F>>,
    pub x_t: Option<Array2<F>>,
    pub target: Array2<F>,
}

impl<F: Real> Network<F> {
    pub fn init(
        kind: PolicyKind,
        geom: Geometry,
        enc: &EncoderSpec,
        den: &DenoiserSpec,
        rng: &mut impl Rng,
    ) -> Network<F> {
        let arch = Architecture::new(kind, geom, enc, den);
        let conv = arch.conv.map(|(size, c_in, c_out)| Conv3x3::init(size, c_in, c_out, rng));
        let encoder = Mlp::init(&arch.encoder, rng);
        let head = Mlp::init(&arch.head, rng);
        Network { kind, geom, conv, encoder, head }
    }

    /// Whether the tensors have exactly the shapes `arch` prescribes.
    pub fn matches(&self, arch: &Architecture) -> bool {
        let widths = |m: &Mlp<F>| {
            let mut w = vec![m.n_in()];
            w.extend(m.layers.iter().map(|l| l.n_out()));
            let chained = m.layers.windows(2).all(|p| p[0].n_out() == p[1].n_in());
            (chained, w)
        };
        let conv = self.conv.as_ref().map(|c| (c.size, c.c_in, c.c_out()));
        let conv_ok = self.conv.as_ref().is_none_or(|c| c.w.nrows() == 9 * c.c_in && c.b.len() == c.c_out());
        let mlp_ok = |m: &Mlp<F>, expect: &[usize]| {
            if m.layers.is_empty() {
                return false;
            }
            let (chained, w) = widths(m);
            chained && w == expect && m.layers.iter().all(|l| l.b.len() == l.n_out())
        };
        conv == arch.conv && conv_ok && mlp_ok(&self.encoder, &arch.encoder) && mlp_ok(&self.head, &arch.head)
    }

    pub fn zeros_like(&self) -> Network<F> {
        Network {
            kind: self.kind,
            geom: self.geom,
            conv: self.conv.as_ref().map(Conv3x3::zeros_like),
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.n_out()
    }

    fn linears(&self) -> impl Iterator<Item = &Linear<F>> {
        self.encoder.layers.iter().chain(&self.head.layers)
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        if let Some(cv) = &self.conv {
            out.push(cv.w.as_slice().expect("standard layout"));
            out.push(cv.b.as_slice().expect("standard layout"));
        }
        for l in self.linears() {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        if let Some(cv) = &mut self.conv {
            out.push(cv.w.as_slice_mut().expect("standard layout"));
            out.push(cv.b.as_slice_mut().expect("standard layout"));
        }
        for l in self.encoder.layers.iter_mut().chain(&mut self.head.layers) {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Split `[B, t_o * frame_dim]` into non-grid columns and stacked grids
    /// `[B * t_o, grid_len]`.
    fn split_grid(&self, obs: ArrayView2<F>, g: GridSlot) -> (Array2<F>, Array2<F>) {
        let (b, fd, t_o) = (obs.nrows(), self.geom.frame_dim, self.geom.t_o);
        let gl = g.len();
        let mut rest = Vec::with_capacity(t_o * 2);
        let mut grids = Array2::zeros((b * t_o, gl));
        for j in 0..t_o {
            let base = j * fd;
            rest.push(obs.slice(ndarray::s![.., base..base + g.offset]));
            rest.push(obs.slice(ndarray::s![.., base + g.offset + gl..base + fd]));
            for i in 0..b {
                grids
                    .row_mut(i * t_o + j)
                    .assign(&obs.slice(ndarray::s![i, base + g.offset..base + g.offset + gl]));
            }
        }
        (hcat(&rest), grids)
    }

    fn encoder_input_train(&self, obs: ArrayView2<F>) -> (Array2<F>, Option<super::nn::ConvCache<F>>) {
        match (&self.conv, self.geom.grid) {
            (Some(cv), Some(g)) => {
                let (rest, grids) = self.split_grid(obs, g);
                let (feat, cache) = cv.forward_train(grids.view());
                let feat = feat
                    .into_shape_with_order((obs.nrows(), self.geom.t_o * cv.out_dim()))
                    .expect("conv feature shape");
                (hcat(&[rest.view(), feat.view()]), Some(cache))
            }
            _ => (obs.to_owned(), None),
        }
    }

    pub fn encode(&self, obs: ArrayView2<F>) -> Array2<F> {
        let (x, _) = self.encoder_input_train(obs);
        self.encoder.forward(x.view())
    }

    fn head_input(&self, emb: ArrayView2<F>, t_emb: Option<&Array2<F>>, x_t: Option<&Array2<F>>) -> Array2<F> {
        match self.kind {
            PolicyKind::Diffusion => hcat(&[
                t_emb.expect("diffusion head needs t_emb").view(),
                emb,
                x_t.expect("diffusion head needs x_t").view(),
            ]),
            PolicyKind::Bc => emb.to_owned(),
        }
    }

    /// Head output given a precomputed embedding.
    pub fn head_forward(&self, emb: ArrayView2<F>, t_emb: Option<&Array2<F>>, x_t: Option<&Array2<F>>) -> Array2<F> {
        self.head.forward(self.head_input(emb, t_emb, x_t).view())
    }

    /// Mean squared error of the head output against `batch.target`.
    pub fn loss(&self, batch: &Batch<F>) -> F {
        let emb = self.encode(batch.obs.view());
        let out = self.head_forward(emb.view(), batch.t_emb.as_ref(), batch.x_t.as_ref());
        let n = c::<F>(out.len() as f64);
        (&out - &batch.target).mapv(|d| d * d).sum() / n
    }

    /// Loss and its gradient, accumulated into `grads`.
    pub fn loss_and_grad(&self, batch: &Batch<F>, grads: &mut Network<F>) -> F {
        let (enc_in, conv_cache) = self.encoder_input_train(batch.obs.view());
        let (emb, enc_cache) = self.encoder.forward_train(enc_in);
        let head_in = self.head_input(emb.view(), batch.t_emb.as_ref(), batch.x_t.as_ref());
        let (out, head_cache) = self.head.forward_train(head_in);
        let diff = &out - &batch.target;
        let n = c::<F>(out.len() as f64);
        let loss = diff.mapv(|d| d * d).sum() / n;

        let grad_out = diff * (c::<F>(2.0) / n);
        let g_head_in = self.head.backward(&head_cache, grad_out, &mut grads.head);
        let e = self.embedding_dim();
        let g_emb = match self.kind {
            PolicyKind::Diffusion => cols(&g_head_in, self.geom.t_emb_dim, self.geom.t_emb_dim + e).to_owned(),
            PolicyKind::Bc => g_head_in,
        };
        let g_enc_in = self.encoder.backward(&enc_cache, g_emb, &mut grads.encoder);
        if let (Some(cv), Some(cache), Some(gc)) = (&self.conv, conv_cache, grads.conv.as_mut()) {
            let rest = g_enc_in.ncols() - self.geom.t_o * cv.out_dim();
            let g_feat = cols(&g_enc_in, rest, g_enc_in.ncols());
            cv.backward(&cache, g_feat, gc);
        }
        loss
    }
}

/// Stack row vectors into a `[rows, dim]` array.
pub fn stack<F: Real>(rows: &[&[f32]], dim: usize) -> Array2<F> {
    let flat: Vec<F> = rows.iter().flat_map(|r| r.iter().map(|&x| c::<F>(x as f64))).collect();
    Array2::from_shape_vec((rows.len(), dim), flat).expect("row lengths match dim")
}
