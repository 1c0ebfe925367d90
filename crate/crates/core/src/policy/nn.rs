//! Minimal dense layers with hand-written backprop, generic over the float
//! type so gradients can be checked in f64.

use std::fmt::Debug;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub fn c<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

pub fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

pub fn silu_grad<F: Real>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `[in, out]`
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Linear<F> {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (n_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((n_in, n_out), || c(rng.random_range(-k..k)));
        let b = Array1::from_shape_simple_fn(n_out, || c(rng.random_range(-k..k)));
        Linear { w, b }
    }

    pub fn zeros_like(&self) -> Self {
        Linear { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    pub fn n_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }
}

/// Dense stack with SiLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
}

pub struct MlpCache<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
}

impl<F: Real> Mlp<F> {
    /// `widths = [in, hidden.., out]`
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp { layers: self.layers.iter().map(Linear::zeros_like).collect() }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("non-empty mlp").n_out()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(h.view());
            if i < last {
                h.mapv_inplace(silu);
            }
        }
        h
    }

    pub fn forward_train(&self, x: Array2<F>) -> (Array2<F>, MlpCache<F>) {
        let mut cache = MlpCache { inputs: Vec::new(), pre: Vec::new() };
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(h.view());
            cache.inputs.push(h);
            if i < last {
                h = z.mapv(silu);
                cache.pre.push(z);
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    /// Accumulate parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, cache: &MlpCache<F>, grad_out: Array2<F>, grads: &mut Mlp<F>) -> Array2<F> {
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                g.zip_mut_with(&cache.pre[i], |gv, &z| *gv = *gv * silu_grad(z));
            }
            grads.layers[i].w += &cache.inputs[i].t().dot(&g);
            grads.layers[i].b += &g.sum_axis(Axis(0));
            g = g.dot(&self.layers[i].w.t());
        }
        g
    }
}

/// 3x3 "same" convolution over square `[size, size, c_in]` maps, followed by
/// SiLU. The input is raw observation data, so no input gradient is produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<F> {
    pub size: usize,
    pub c_in: usize,
    /// `[9 * c_in, c_out]`, patch order (dy, dx, c)
    pub w: Array2<F>,
    pub b: Array1<F>,
}

pub struct ConvCache<F> {
    patches: Array2<F>,
    pre: Array2<F>,
}

impl<F: Real> Conv3x3<F> {
    pub fn init(size: usize, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let l = Linear::init(9 * c_in, c_out, rng);
        Conv3x3 { size, c_in, w: l.w, b: l.b }
    }

    pub fn zeros_like(&self) -> Self {
        Conv3x3 {
            size: self.size,
            c_in: self.c_in,
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn c_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.size * self.size * self.c_out()
    }

    /// `[n, size*size*c_in]` maps to `[n * size*size, 9*c_in]` patches, zero padded.
    fn im2col(&self, x: ArrayView2<F>) -> Array2<F> {
        let (n, sz, ci) = (x.nrows(), self.size, self.c_in);
        let mut p = Array2::zeros((n * sz * sz, 9 * ci));
        for img in 0..n {
            let row = x.row(img);
            for y in 0..sz {
                for xx in 0..sz {
                    let mut out = p.row_mut((img * sz + y) * sz + xx);
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= sz as isize || sx >= sz as isize {
                                continue;
                            }
                            let src = (sy as usize * sz + sx as usize) * ci;
                            for ch in 0..ci {
                                out[(dy * 3 + dx) * ci + ch] = row[src + ch];
                            }
                        }
                    }
                }
            }
        }
        p
    }

    /// Returns activations flattened per image as `[n, size*size*c_out]`.
    pub fn forward_train(&self, x: ArrayView2<F>) -> (Array2<F>, ConvCache<F>) {
        let n = x.nrows();
        let patches = self.im2col(x);
        let pre = patches.dot(&self.w) + &self.b;
        let act = pre.mapv(silu);
        let flat = act.into_shape_with_order((n, self.out_dim())).expect("contiguous conv output");
        (flat, ConvCache { patches, pre })
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        self.forward_train(x).0
    }

    pub fn backward(&self, cache: &ConvCache<F>, grad_out: ArrayView2<F>, grads: &mut Conv3x3<F>) {
        let mut g = grad_out
            .to_owned()
            .into_shape_with_order((cache.pre.nrows(), self.c_out()))
            .expect("conv grad shape");
        g.zip_mut_with(&cache.pre, |gv, &z| *gv = *gv * silu_grad(z));
        grads.w += &cache.patches.t().dot(&g);
        grads.b += &g.sum_axis(Axis(0));
    }
}

/// Column-wise concatenation of equally tall blocks.
pub fn hcat<F: Real>(blocks: &[ArrayView2<F>]) -> Array2<F> {
    concatenate(Axis(1), blocks).expect("blocks share a row count")
}

pub fn cols<F: Real>(x: &Array2<F>, from: usize, to: usize) -> ArrayView2<'_, F> {
    x.slice(s![.., from..to])
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        self.t += 1;
        let (b1, b2) = (c::<F>(self.beta1), c::<F>(self.beta2));
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = c::<F>(self.lr * bc2.sqrt() / bc1);
        let eps = c::<F>(self.eps * bc2.sqrt());
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for x in [-4.0f64, -1.0, -0.1, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv3x3::<f64>::init(4, 2, 3, &mut rng);
        let x = Array2::from_shape_simple_fn((2, 32), || rng.random_range(-1.0..1.0));
        let out = conv.forward(x.view());
        for img in 0..2 {
            for y in 0..4i64 {
                for xx in 0..4i64 {
                    for co in 0..3 {
                        let mut acc = conv.b[co];
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                let (sy, sx) = (y + dy, xx + dx);
                                if !(0..4).contains(&sy) || !(0..4).contains(&sx) {
                                    continue;
                                }
                                for ci in 0..2 {
                                    let k = (((dy + 1) * 3 + dx + 1) * 2 + ci) as usize;
                                    acc += conv.w[[k, co]] * x[[img, ((sy * 4 + sx) * 2 + ci) as usize]];
                                }
                            }
                        }
                        let got = out[[img, ((y * 4 + xx) * 3) as usize + co]];
                        assert!((got - silu(acc)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0f64, -2.0];
        let g = vec![0.5f64, -3.0];
        let mut opt = Adam::new(&[2], 0.1);
        opt.step(vec![&mut p], vec![&g]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 1.9).abs() < 1e-6, "{p:?}");
    }
}
