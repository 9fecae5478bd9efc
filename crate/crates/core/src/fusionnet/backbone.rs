//! Global image-feature backbone.
//!
//! The backbone is a contract: B x 3 x 224 x 224 in, B x 2048 out, with a
//! frozen prefix of parameter tensors that never receive gradients. The
//! built-in `stub` backbone is a small random-initialized convolutional
//! stack for desk-scale runs and tests; adapters for pretrained deep
//! backbones can implement the same surface behind a new `kind`.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis};
use rand_chacha::ChaCha8Rng;

use super::nn::{uniform_init, Linear, PTensor};
use crate::{Error, Result};

/// Output feature width of every backbone.
pub const FEATURE_DIM: usize = 2048;

/// Expected input side length.
pub const INPUT_SIZE: usize = 224;

#[derive(Debug, Clone)]
struct ConvSpec {
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: PTensor, // (c_out, c_in, k, k)
    pub b: PTensor, // (c_out)
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    fn new(name: &str, spec: &ConvSpec, rng: &mut ChaCha8Rng) -> ConvLayer {
        let fan_in = spec.c_in * spec.k * spec.k;
        ConvLayer {
            w: PTensor::new(
                format!("{name}.weight"),
                uniform_init(rng, &[spec.c_out, spec.c_in, spec.k, spec.k], fan_in),
            ),
            b: PTensor::new(format!("{name}.bias"), uniform_init(rng, &[spec.c_out], fan_in)),
            stride: spec.stride,
            pad: spec.pad,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.v4().shape()[2];
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    /// Patch matrix: (h_out * w_out, c_in * k * k) for one sample.
    fn im2col(&self, x: &ndarray::ArrayView3<'_, f64>) -> Array2<f64> {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.w.v4().shape()[2];
        let (ho, wo) = self.out_hw(h, w);
        let mut cols = Array2::zeros((ho * wo, c_in * k * k));
        for oy in 0..ho {
            for ox in 0..wo {
                let row = oy * wo + ox;
                let mut col_idx = 0usize;
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                cols[[row, col_idx]] = x[[c, iy as usize, ix as usize]];
                            }
                            col_idx += 1;
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, c_in: usize, h: usize, w: usize) -> ndarray::Array3<f64> {
        let k = self.w.v4().shape()[2];
        let (ho, wo) = self.out_hw(h, w);
        let mut dx = ndarray::Array3::zeros((c_in, h, w));
        for oy in 0..ho {
            for ox in 0..wo {
                let row = oy * wo + ox;
                let mut col_idx = 0usize;
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                dx[[c, iy as usize, ix as usize]] += dcols[[row, col_idx]];
                            }
                            col_idx += 1;
                        }
                    }
                }
            }
        }
        dx
    }

    /// Weight as a (c_in * k * k, c_out) matrix for the im2col matmul.
    fn weight_matrix(&self) -> Array2<f64> {
        let w = self.w.v4();
        let (c_out, c_in, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let mut m = Array2::zeros((c_in * k * k, c_out));
        for co in 0..c_out {
            let mut idx = 0usize;
            for ci in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        m[[idx, co]] = w[[co, ci, ky, kx]];
                        idx += 1;
                    }
                }
            }
        }
        m
    }

    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        debug_assert_eq!(c_in, self.w.v4().shape()[1]);
        let (ho, wo) = self.out_hw(h, w);
        let c_out = self.w.v4().shape()[0];
        let wm = self.weight_matrix();
        let bias = self.b.v1();
        let mut out = Array4::zeros((b, c_out, ho, wo));
        for s in 0..b {
            let cols = self.im2col(&x.index_axis(Axis(0), s));
            let y = cols.dot(&wm); // (ho*wo, c_out)
            for co in 0..c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        out[[s, co, oy, ox]] = y[[oy * wo + ox, co]] + bias[co];
                    }
                }
            }
        }
        out
    }

    /// Backward pass. `accumulate_params` controls whether dW/db are
    /// written (frozen layers skip it); dx is returned only on request.
    fn backward(
        &mut self,
        x: &Array4<f64>,
        dy: &Array4<f64>,
        accumulate_w: bool,
        accumulate_b: bool,
        need_dx: bool,
    ) -> Option<Array4<f64>> {
        let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let c_out = self.w.v4().shape()[0];
        let k = self.w.v4().shape()[2];
        let (ho, wo) = self.out_hw(h, w);
        let wm = self.weight_matrix();
        let mut dwm: Array2<f64> = Array2::zeros((c_in * k * k, c_out));
        let mut db: Array1<f64> = Array1::zeros(c_out);
        let mut dx = need_dx.then(|| Array4::zeros((b, c_in, h, w)));
        for s in 0..b {
            let mut dy2 = Array2::zeros((ho * wo, c_out));
            for co in 0..c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        dy2[[oy * wo + ox, co]] = dy[[s, co, oy, ox]];
                    }
                }
            }
            let cols = self.im2col(&x.index_axis(Axis(0), s));
            dwm += &cols.t().dot(&dy2);
            db += &dy2.sum_axis(Axis(0));
            if let Some(dx) = dx.as_mut() {
                let dcols = dy2.dot(&wm.t());
                let dxs = self.col2im(&dcols, c_in, h, w);
                dx.index_axis_mut(Axis(0), s).assign(&dxs);
            }
        }
        if accumulate_w {
            let mut dw = ArrayD::zeros(self.w.value.raw_dim());
            {
                let mut dw4 = dw.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
                for co in 0..c_out {
                    let mut idx = 0usize;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                dw4[[co, ci, ky, kx]] = dwm[[idx, co]];
                                idx += 1;
                            }
                        }
                    }
                }
            }
            self.w.add_grad(&dw);
        }
        if accumulate_b {
            self.b.add_grad(&db.into_dyn());
        }
        dx
    }
}

/// The convolutional stub backbone: a strided downsampling stem, a run of
/// 1x1 mixing layers, global average pooling, then an affine lift to the
/// 2048-wide feature contract. 50 parameter tensors total.
#[derive(Debug, Clone)]
pub struct StubBackbone {
    convs: Vec<ConvLayer>,
    fc: Linear,
    frozen_prefix: usize,
}

/// Activations retained for the trainable suffix's backward pass.
#[derive(Debug)]
pub struct BackboneCache {
    /// Input to each conv layer with index >= first trainable layer.
    inputs: Vec<(usize, Array4<f64>)>,
    /// Post-conv pre-activation sign masks for the same layers.
    masks: Vec<(usize, Array4<f64>)>,
    /// Input to the global average pool (post last conv activation).
    gap_in: Array4<f64>,
    /// Input to the final affine.
    fc_in: Array2<f64>,
}

const STEM: [ConvSpec; 3] = [
    ConvSpec { c_in: 3, c_out: 8, k: 8, stride: 8, pad: 0 },
    ConvSpec { c_in: 8, c_out: 16, k: 3, stride: 2, pad: 1 },
    ConvSpec { c_in: 16, c_out: 32, k: 3, stride: 2, pad: 1 },
];
const MIX_LAYERS: usize = 21;
const MIX_CHANNELS: usize = 32;

impl StubBackbone {
    pub fn new(frozen_prefix: usize, rng: &mut ChaCha8Rng) -> Result<StubBackbone> {
        let mut convs = Vec::new();
        for (i, spec) in STEM.iter().enumerate() {
            convs.push(ConvLayer::new(&format!("backbone.conv{i:02}"), spec, rng));
        }
        for i in 0..MIX_LAYERS {
            convs.push(ConvLayer::new(
                &format!("backbone.conv{:02}", i + STEM.len()),
                &ConvSpec { c_in: MIX_CHANNELS, c_out: MIX_CHANNELS, k: 1, stride: 1, pad: 0 },
                rng,
            ));
        }
        let fc = Linear::new("backbone.fc", MIX_CHANNELS, FEATURE_DIM, rng);
        let total = 2 * convs.len() + 2;
        if frozen_prefix > total {
            return Err(Error::Config(format!(
                "frozen_prefix {frozen_prefix} exceeds the stub backbone's {total} parameter tensors"
            )));
        }
        Ok(StubBackbone { convs, fc, frozen_prefix })
    }

    pub fn num_param_tensors(&self) -> usize {
        2 * self.convs.len() + 2
    }

    pub fn frozen_prefix(&self) -> usize {
        self.frozen_prefix
    }

    pub fn params(&self) -> Vec<&PTensor> {
        let mut out: Vec<&PTensor> = self.convs.iter().flat_map(|c| [&c.w, &c.b]).collect();
        out.push(&self.fc.w);
        out.push(&self.fc.b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut PTensor> {
        let mut out: Vec<&mut PTensor> =
            self.convs.iter_mut().flat_map(|c| [&mut c.w, &mut c.b]).collect();
        out.push(&mut self.fc.w);
        out.push(&mut self.fc.b);
        out
    }

    /// Index of the first conv layer containing a trainable tensor.
    fn first_trainable_layer(&self) -> usize {
        self.frozen_prefix / 2
    }

    pub fn forward(&self, images: &Array4<f64>, need_cache: bool) -> Result<(Array2<f64>, Option<BackboneCache>)> {
        let shape = images.shape();
        if shape[1] != 3 || shape[2] != INPUT_SIZE || shape[3] != INPUT_SIZE {
            return Err(Error::Shape(format!(
                "backbone input is {}x{}x{}x{}, expected Bx3x{INPUT_SIZE}x{INPUT_SIZE}",
                shape[0], shape[1], shape[2], shape[3]
            )));
        }
        let first_trainable = self.first_trainable_layer();
        let mut inputs = Vec::new();
        let mut masks = Vec::new();
        let mut x = images.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if need_cache && i >= first_trainable {
                inputs.push((i, x.clone()));
            }
            let z = conv.forward(&x);
            if need_cache && i >= first_trainable {
                masks.push((i, z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })));
            }
            x = z.mapv(|v| v.max(0.0));
        }
        let b = x.shape()[0];
        let c = x.shape()[1];
        let hw = (x.shape()[2] * x.shape()[3]) as f64;
        let mut pooled = Array2::zeros((b, c));
        for s in 0..b {
            for ch in 0..c {
                pooled[[s, ch]] = x.index_axis(Axis(0), s).index_axis(Axis(0), ch).sum() / hw;
            }
        }
        let features = self.fc.forward(&pooled);
        let cache = need_cache.then(|| BackboneCache {
            inputs,
            masks,
            gap_in: x,
            fc_in: pooled,
        });
        Ok((features, cache))
    }

    /// Backpropagates into the trainable suffix only; frozen tensors keep
    /// zero gradients and no dx is computed below the first trainable
    /// layer.
    pub fn backward(&mut self, cache: &BackboneCache, dfeatures: &Array2<f64>) {
        let dpool = self.fc.backward(&cache.fc_in, dfeatures);
        // A frozen prefix reaching into the final affine keeps its grads zero.
        let n_conv_tensors = 2 * self.convs.len();
        if self.frozen_prefix > n_conv_tensors {
            self.fc.w.zero_grad();
        }
        if self.frozen_prefix > n_conv_tensors + 1 {
            self.fc.b.zero_grad();
        }
        // Through the global average pool.
        let (b, c, ho, wo) = {
            let s = cache.gap_in.shape();
            (s[0], s[1], s[2], s[3])
        };
        let scale = 1.0 / (ho * wo) as f64;
        let mut dx = Array4::zeros((b, c, ho, wo));
        for s in 0..b {
            for ch in 0..c {
                let g = dpool[[s, ch]] * scale;
                dx.index_axis_mut(Axis(0), s).index_axis_mut(Axis(0), ch).fill(g);
            }
        }
        let first_trainable = self.first_trainable_layer();
        for i in (first_trainable..self.convs.len()).rev() {
            let input = &cache.inputs[i - first_trainable].1;
            let mask = &cache.masks[i - first_trainable].1;
            debug_assert_eq!(cache.inputs[i - first_trainable].0, i);
            let dz = &dx * mask;
            let w_trainable = 2 * i >= self.frozen_prefix;
            let b_trainable = 2 * i + 1 >= self.frozen_prefix;
            let need_dx = i > first_trainable;
            let next =
                self.convs[i].backward(input, &dz, w_trainable, b_trainable, need_dx);
            if let Some(next) = next {
                dx = next;
            } else {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn stub_emits_2048_wide_features_with_50_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bb = StubBackbone::new(44, &mut rng).unwrap();
        assert_eq!(bb.num_param_tensors(), 50);
        let images = Array4::from_shape_fn((2, 3, INPUT_SIZE, INPUT_SIZE), |_| rng.random_range(-1.0..1.0));
        let (f, _) = bb.forward(&images, false).unwrap();
        assert_eq!(f.shape(), &[2, FEATURE_DIM]);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frozen_prefix_tensors_get_no_gradient_later_tensors_do() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bb = StubBackbone::new(44, &mut rng).unwrap();
        let images = Array4::from_shape_fn((2, 3, INPUT_SIZE, INPUT_SIZE), |_| rng.random_range(-1.0..1.0));
        let (f, cache) = bb.forward(&images, true).unwrap();
        let dfeat = Array2::from_shape_fn(f.raw_dim(), |_| rng.random_range(-1.0..1.0));
        bb.backward(cache.as_ref().unwrap(), &dfeat);
        let params = bb.params();
        for (i, p) in params.iter().enumerate() {
            let zero = p.grad.iter().all(|&g| g == 0.0);
            if i < 44 {
                assert!(zero, "tensor {i} ({}) should have zero grad", p.name);
            } else {
                assert!(!zero, "tensor {i} ({}) should have nonzero grad", p.name);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences_on_small_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec { c_in: 2, c_out: 3, k: 3, stride: 2, pad: 1 };
        let mut conv = ConvLayer::new("t", &spec, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 6, 6), |_| rng.random_range(-1.0..1.0));
        let y = conv.forward(&x);
        let dy = Array4::from_shape_fn(y.raw_dim(), |_| rng.random_range(-1.0..1.0));
        let dx = conv.backward(&x, &dy, true, true, true).unwrap();

        let conv2 = conv.clone();
        let loss = |xq: &Array4<f64>| (&conv2.forward(xq) * &dy).sum();
        let eps = 1e-6;
        let mut checked = 0usize;
        for idx in [0usize, 7, 23, 51, 100, 143] {
            let (s, rest) = (idx / 72, idx % 72);
            let (c, rest2) = (rest / 36, rest % 36);
            let (i, j) = (rest2 / 6, rest2 % 6);
            let mut xp = x.clone();
            xp[[s, c, i, j]] += eps;
            let mut xm = x.clone();
            xm[[s, c, i, j]] -= eps;
            let want = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert_abs_diff_eq!(dx[[s, c, i, j]], want, epsilon = 1e-5);
            checked += 1;
        }
        assert_eq!(checked, 6);

        // One weight entry.
        let got_dw = conv.w.grad[[1, 0, 1, 1]];
        let mut cp = conv2.clone();
        cp.w.value[[1, 0, 1, 1]] += eps;
        let mut cm = conv2.clone();
        cm.w.value[[1, 0, 1, 1]] -= eps;
        let want = ((&cp.forward(&x) * &dy).sum() - (&cm.forward(&x) * &dy).sum()) / (2.0 * eps);
        assert_abs_diff_eq!(got_dw, want, epsilon = 1e-5);
    }
}
