//! Classifier head: two affine+layernorm+rectifier+dropout stages, then
//! the final affine onto the seven class logits.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::nn::{
    dropout_backward, dropout_forward, relu, relu_mask, DropoutMask, LayerNorm, LayerNormCache,
    Linear, PTensor,
};
use crate::facegraph::NUM_CLASSES;

pub const FUSED_DIM: usize = 2176;
pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 256;

#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub fc1: Linear,
    pub ln1: LayerNorm,
    pub fc2: Linear,
    pub ln2: LayerNorm,
    pub fc3: Linear,
    pub dropout1: f64,
    pub dropout2: f64,
}

#[derive(Debug)]
pub struct HeadCache {
    x: Array2<f64>,
    ln1: LayerNormCache,
    n1: Array2<f64>,
    drop1: DropoutMask,
    d1: Array2<f64>,
    ln2: LayerNormCache,
    n2: Array2<f64>,
    drop2: DropoutMask,
    d2: Array2<f64>,
}

impl ClassifierHead {
    pub fn new(dropout1: f64, dropout2: f64, rng: &mut ChaCha8Rng) -> ClassifierHead {
        let head = ClassifierHead {
            fc1: Linear::new("head.fc1", FUSED_DIM, HIDDEN1, rng),
            ln1: LayerNorm::new("head.ln1", HIDDEN1),
            fc2: Linear::new("head.fc2", HIDDEN1, HIDDEN2, rng),
            ln2: LayerNorm::new("head.ln2", HIDDEN2),
            fc3: Linear::new("head.fc3", HIDDEN2, NUM_CLASSES, rng),
            dropout1,
            dropout2,
        };
        // Construction-time audit of the affine and normalization
        // parameter counts.
        let affine: usize = [&head.fc1, &head.fc2, &head.fc3]
            .iter()
            .map(|l| l.w.value.len() + l.b.value.len())
            .sum();
        assert_eq!(
            affine,
            (FUSED_DIM * HIDDEN1 + HIDDEN1) + (HIDDEN1 * HIDDEN2 + HIDDEN2) + (HIDDEN2 * NUM_CLASSES + NUM_CLASSES),
        );
        let norm: usize = [&head.ln1, &head.ln2]
            .iter()
            .map(|l| l.gain.value.len() + l.bias.value.len())
            .sum();
        assert_eq!(norm, 2 * (HIDDEN1 + HIDDEN2));
        head
    }

    pub fn params(&self) -> Vec<&PTensor> {
        vec![
            &self.fc1.w, &self.fc1.b, &self.ln1.gain, &self.ln1.bias,
            &self.fc2.w, &self.fc2.b, &self.ln2.gain, &self.ln2.bias,
            &self.fc3.w, &self.fc3.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut PTensor> {
        vec![
            &mut self.fc1.w, &mut self.fc1.b, &mut self.ln1.gain, &mut self.ln1.bias,
            &mut self.fc2.w, &mut self.fc2.b, &mut self.ln2.gain, &mut self.ln2.bias,
            &mut self.fc3.w, &mut self.fc3.b,
        ]
    }

    /// Evaluation-mode forward (dropout disabled).
    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let z1 = self.fc1.forward(x);
        let (n1, _) = self.ln1.forward(&z1);
        let a1 = relu(&n1);
        let z2 = self.fc2.forward(&a1);
        let (n2, _) = self.ln2.forward(&z2);
        let a2 = relu(&n2);
        self.fc3.forward(&a2)
    }

    /// Training-mode forward with deterministic per-sample dropout masks.
    pub fn forward_train(&self, x: &Array2<f64>, dropout_seed: u64) -> (Array2<f64>, HeadCache) {
        let z1 = self.fc1.forward(x);
        let (n1, ln1) = self.ln1.forward(&z1);
        let a1 = relu(&n1);
        let (d1, drop1) = dropout_forward(&a1, self.dropout1, dropout_seed, 0, 1);
        let z2 = self.fc2.forward(&d1);
        let (n2, ln2) = self.ln2.forward(&z2);
        let a2 = relu(&n2);
        let (d2, drop2) = dropout_forward(&a2, self.dropout2, dropout_seed, 0, 2);
        let logits = self.fc3.forward(&d2);
        (
            logits,
            HeadCache {
                x: x.clone(),
                ln1,
                n1,
                drop1,
                d1,
                ln2,
                n2,
                drop2,
                d2,
            },
        )
    }

    pub fn backward(&mut self, cache: &HeadCache, dlogits: &Array2<f64>) -> Array2<f64> {
        let dd2 = self.fc3.backward(&cache.d2, dlogits);
        let da2 = dropout_backward(&cache.drop2, &dd2);
        let dn2 = &da2 * &relu_mask(&cache.n2);
        let dz2 = self.ln2.backward(&cache.ln2, &dn2);
        let dd1 = self.fc2.backward(&cache.d1, &dz2);
        let da1 = dropout_backward(&cache.drop1, &dd1);
        let dn1 = &da1 * &relu_mask(&cache.n1);
        let dz1 = self.ln1.backward(&cache.ln1, &dn1);
        self.fc1.backward(&cache.x, &dz1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn head_widths_and_eval_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ClassifierHead::new(0.325, 0.275, &mut rng);
        let x = Array2::from_shape_fn((3, FUSED_DIM), |_| rng.random_range(-0.1..0.1));
        let y = head.forward_eval(&x);
        assert_eq!(y.shape(), &[3, NUM_CLASSES]);
    }

    #[test]
    fn dropout_train_forward_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = ClassifierHead::new(0.325, 0.275, &mut rng);
        let x = Array2::from_shape_fn((4, FUSED_DIM), |_| rng.random_range(-0.1..0.1));
        let (a, _) = head.forward_train(&x, 7);
        let (b, _) = head.forward_train(&x, 7);
        let (c, _) = head.forward_train(&x, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn eval_equals_train_with_zero_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = ClassifierHead::new(0.0, 0.0, &mut rng);
        let x = Array2::from_shape_fn((2, FUSED_DIM), |_| rng.random_range(-0.1..0.1));
        let (train, _) = head.forward_train(&x, 1);
        let eval = head.forward_eval(&x);
        for (a, b) in train.iter().zip(eval.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences_through_the_full_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Zero dropout so the mapping is differentiable everywhere.
        let mut head = ClassifierHead::new(0.0, 0.0, &mut rng);
        let x = Array2::from_shape_fn((2, FUSED_DIM), |_| rng.random_range(-0.05..0.05));
        let w = Array2::from_shape_fn((2, NUM_CLASSES), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = head.forward_train(&x, 0);
        let dx = head.backward(&cache, &w);

        let head2 = head.clone();
        let eps = 1e-6;
        for idx in [0usize, 100, 999, 2175, 3000] {
            let (i, j) = (idx / FUSED_DIM, idx % FUSED_DIM);
            let mut xp = x.clone();
            xp[[i, j]] += eps;
            let mut xm = x.clone();
            xm[[i, j]] -= eps;
            let lp = (&head2.forward_eval(&xp) * &w).sum();
            let lm = (&head2.forward_eval(&xm) * &w).sum();
            assert_abs_diff_eq!(dx[[i, j]], (lp - lm) / (2.0 * eps), epsilon = 1e-5);
        }
    }
}
