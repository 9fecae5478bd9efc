//! Squeeze-style feature attention: a two-layer bottleneck producing
//! per-feature weights in (0, 1) that reweight the input vector, followed
//! by a parameterless layer normalization of the refined vector.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::nn::{
    layer_norm_plain, layer_norm_plain_backward, relu, relu_mask, sigmoid, LayerNormCache, Linear,
    PTensor,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub fc1: Linear,
    pub fc2: Linear,
    pub in_dim: usize,
    pub bottleneck_dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub input: Array2<f64>,
    pub z1: Array2<f64>,
    pub a1: Array2<f64>,
    pub weights: Array2<f64>,
    pub ln: LayerNormCache,
}

impl AttentionBlock {
    pub fn new(name: &str, in_dim: usize, bottleneck_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionBlock {
            fc1: Linear::new(&format!("{name}.fc1"), in_dim, bottleneck_dim, rng),
            fc2: Linear::new(&format!("{name}.fc2"), bottleneck_dim, in_dim, rng),
            in_dim,
            bottleneck_dim,
        }
    }

    pub fn params(&self) -> [&PTensor; 4] {
        [&self.fc1.w, &self.fc1.b, &self.fc2.w, &self.fc2.b]
    }

    pub fn params_mut(&mut self) -> [&mut PTensor; 4] {
        [
            &mut self.fc1.w,
            &mut self.fc1.b,
            &mut self.fc2.w,
            &mut self.fc2.b,
        ]
    }

    /// sigma(W2 relu(W1 f + b1) + b2) (.) f, then layer normalization.
    pub fn forward(&self, f: &Array2<f64>) -> Result<(Array2<f64>, AttentionCache)> {
        if f.ncols() != self.in_dim {
            return Err(Error::Shape(format!(
                "attention input width {} != {}",
                f.ncols(),
                self.in_dim
            )));
        }
        let z1 = self.fc1.forward(f);
        let a1 = relu(&z1);
        let z2 = self.fc2.forward(&a1);
        let weights = sigmoid(&z2);
        let refined = &weights * f;
        let (out, ln) = layer_norm_plain(&refined);
        Ok((
            out,
            AttentionCache {
                input: f.clone(),
                z1,
                a1,
                weights,
                ln,
            },
        ))
    }

    /// Accumulates parameter gradients and returns dL/dinput.
    pub fn backward(&mut self, cache: &AttentionCache, dout: &Array2<f64>) -> Array2<f64> {
        let drefined = layer_norm_plain_backward(&cache.ln, dout);
        // refined = weights (.) input
        let dweights = &drefined * &cache.input;
        let mut dinput = &drefined * &cache.weights;
        // through the sigmoid
        let dz2 = &dweights * &(&cache.weights * &cache.weights.mapv(|s| 1.0 - s));
        let da1 = self.fc2.backward(&cache.a1, &dz2);
        let dz1 = &da1 * &relu_mask(&cache.z1);
        dinput += &self.fc1.backward(&cache.input, &dz1);
        dinput
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_second_layer_halves_the_input_before_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut attn = AttentionBlock::new("t", 8, 4, &mut rng);
        attn.fc2.w.value.fill(0.0);
        attn.fc2.b.value.fill(0.0);
        let f = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = attn.forward(&f).unwrap();
        // sigmoid(0) = 0.5 everywhere, so pre-norm refined == 0.5 * f.
        for (w, _) in cache.weights.iter().zip(f.iter()) {
            assert_abs_diff_eq!(*w, 0.5, epsilon = 1e-12);
        }
        let refined = &cache.weights * &f;
        for (r, x) in refined.iter().zip(f.iter()) {
            assert_abs_diff_eq!(*r, 0.5 * x, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = AttentionBlock::new("t", 8, 4, &mut rng);
        let f = Array2::zeros((2, 8));
        let (out, _) = attn.forward(&f).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_weights_lie_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let attn = AttentionBlock::new("t", 16, 4, &mut rng);
        let f = Array2::from_shape_fn((4, 16), |_| rng.random_range(-3.0..3.0));
        let (_, cache) = attn.forward(&f).unwrap();
        assert!(cache.weights.iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn forward_matches_dense_math_oracle() {
        // Independent recomputation with straight ndarray expressions.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let attn = AttentionBlock::new("t", 6, 3, &mut rng);
        let f = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        let (out, _) = attn.forward(&f).unwrap();

        let z1 = f.dot(&attn.fc1.w.v2()) + &attn.fc1.b.v1();
        let a1 = z1.mapv(|v| v.max(0.0));
        let z2 = a1.dot(&attn.fc2.w.v2()) + &attn.fc2.b.v1();
        let s = z2.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let refined = &s * &f;
        for (i, row) in refined.rows().into_iter().enumerate() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let inv = 1.0 / (var + 1e-5).sqrt();
            for (j, &v) in row.iter().enumerate() {
                assert_abs_diff_eq!(out[[i, j]], (v - mean) * inv, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut attn = AttentionBlock::new("t", 5, 2, &mut rng);
        let f = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = attn.forward(&f).unwrap();
        let dinput = attn.backward(&cache, &w);

        let attn2 = attn.clone();
        let eps = 1e-6;
        for idx in 0..f.len() {
            let (i, j) = (idx / 5, idx % 5);
            let mut fp = f.clone();
            fp[[i, j]] += eps;
            let mut fm = f.clone();
            fm[[i, j]] -= eps;
            let lp = (&attn2.forward(&fp).unwrap().0 * &w).sum();
            let lm = (&attn2.forward(&fm).unwrap().0 * &w).sum();
            assert_abs_diff_eq!(dinput[[i, j]], (lp - lm) / (2.0 * eps), epsilon = 1e-5);
        }
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let attn = AttentionBlock::new("t", 8, 4, &mut rng);
        assert!(attn.forward(&Array2::zeros((2, 7))).is_err());
    }
}
