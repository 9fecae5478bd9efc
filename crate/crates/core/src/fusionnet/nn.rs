//! Minimal dense-layer primitives with explicit forward caches and
//! hand-written backward passes. Everything is f64 and deterministic;
//! parameter tensors pair a value with an accumulated gradient.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Epsilon used by every layer-normalization in the network.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A named parameter tensor: value plus accumulated gradient.
#[derive(Debug, Clone)]
pub struct PTensor {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl PTensor {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> PTensor {
        let grad = ArrayD::zeros(value.raw_dim());
        PTensor {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn v1(&self) -> ndarray::ArrayView1<'_, f64> {
        self.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    pub fn v2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    pub fn v4(&self) -> ndarray::ArrayView4<'_, f64> {
        self.value.view().into_dimensionality::<Ix4>().unwrap()
    }

    pub fn add_grad(&mut self, delta: &ArrayD<f64>) {
        debug_assert_eq!(self.grad.shape(), delta.shape());
        self.grad += delta;
    }
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = ArrayD::zeros(ndarray::IxDyn(shape));
    for v in t.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

/// Affine map y = x W + b with x: (B, in), W: (in, out), b: (out).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: PTensor,
    pub b: PTensor,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            w: PTensor::new(format!("{name}.weight"), uniform_init(rng, &[d_in, d_out], d_in)),
            b: PTensor::new(format!("{name}.bias"), uniform_init(rng, &[d_out], d_in)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.v2());
        y += &self.b.v1();
        y
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let dx = dy.dot(&self.w.v2().t());
        let dw = x.t().dot(dy);
        self.w.add_grad(&dw.into_dyn());
        let db = dy.sum_axis(Axis(0));
        self.b.add_grad(&db.into_dyn());
        dx
    }
}

/// Cache for a row-wise layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Parameterless row-wise layer normalization (used inside the two
/// attention branches): x_hat = (x - mean) / sqrt(var + eps).
pub fn layer_norm_plain(x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).unwrap();
    let mut x_hat = x.clone();
    for (mut row, &m) in x_hat.rows_mut().into_iter().zip(mean.iter()) {
        row -= m;
    }
    let var = x_hat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
    for (mut row, &s) in x_hat.rows_mut().into_iter().zip(inv_std.iter()) {
        row *= s;
    }
    let cache = LayerNormCache {
        x_hat: x_hat.clone(),
        inv_std,
    };
    (x_hat, cache)
}

/// Backward of [`layer_norm_plain`]: dy arrives w.r.t. the normalized
/// output.
pub fn layer_norm_plain_backward(cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
    let mean_dy = dy.mean_axis(Axis(1)).unwrap();
    let mean_dy_xhat = (dy * &cache.x_hat).mean_axis(Axis(1)).unwrap();
    let mut dx = dy.clone();
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let m = mean_dy[i];
        let mx = mean_dy_xhat[i];
        let s = cache.inv_std[i];
        for (j, v) in row.iter_mut().enumerate() {
            *v = s * (*v - m - cache.x_hat[[i, j]] * mx);
        }
    }
    dx
}

/// Learned layer normalization with gain and bias (classifier head).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: PTensor,
    pub bias: PTensor,
}

impl LayerNorm {
    pub fn new(name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: PTensor::new(format!("{name}.gain"), ArrayD::from_elem(ndarray::IxDyn(&[d]), 1.0)),
            bias: PTensor::new(format!("{name}.bias"), ArrayD::zeros(ndarray::IxDyn(&[d]))),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let (x_hat, cache) = layer_norm_plain(x);
        let mut y = x_hat;
        y *= &self.gain.v1();
        y += &self.bias.v1();
        (y, cache)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let dgain = (dy * &cache.x_hat).sum_axis(Axis(0));
        let dbias = dy.sum_axis(Axis(0));
        let dx_hat = dy * &self.gain.v1();
        self.gain.add_grad(&dgain.into_dyn());
        self.bias.add_grad(&dbias.into_dyn());
        layer_norm_plain_backward(cache, &dx_hat)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Mask is 1 where the pre-activation was strictly positive.
pub fn relu_mask(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Inverted dropout with a per-sample deterministic mask stream.
///
/// Masks depend only on (seed, sample_index, layer_tag), so results are
/// identical regardless of how a batch is chunked across workers.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub mask: Array2<f64>,
    pub p: f64,
}

fn mix_seed(seed: u64, sample: u64, tag: u64) -> u64 {
    // splitmix64 over the packed inputs
    let mut z = seed
        .wrapping_add(sample.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(tag.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn dropout_forward(
    x: &Array2<f64>,
    p: f64,
    seed: u64,
    sample_offset: usize,
    layer_tag: u64,
) -> (Array2<f64>, DropoutMask) {
    assert!((0.0..1.0).contains(&p), "dropout p must be in [0, 1)");
    let keep = 1.0 - p;
    let mut mask = Array2::zeros(x.raw_dim());
    for (i, mut row) in mask.rows_mut().into_iter().enumerate() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, (sample_offset + i) as u64, layer_tag));
        for v in row.iter_mut() {
            *v = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
        }
    }
    let y = x * &mask;
    (y, DropoutMask { mask, p })
}

pub fn dropout_backward(cache: &DropoutMask, dy: &Array2<f64>) -> Array2<f64> {
    dy * &cache.mask
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
