//! One optimizer step: KL loss, backward, global-norm clipping, then an
//! AdamW update with decoupled weight decay and per-group learning rates.

use ndarray::ArrayD;

use super::{kl_loss_with_grad, SmoothedTarget};
use crate::facegraph::FaceGraph;
use crate::fusionnet::{FusionNet, ParamGroup};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moment state, index-aligned with the model's canonical
/// parameter order.
pub struct AdamW {
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(model: &FusionNet) -> AdamW {
        let shapes: Vec<_> = model.params().iter().map(|p| p.value.raw_dim()).collect();
        AdamW {
            step: 0,
            m: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one decoupled-decay update using already-accumulated
    /// (and already-clipped) gradients.
    pub fn apply(
        &mut self,
        model: &mut FusionNet,
        grad_scale: f64,
        lr_backbone: f64,
        lr_head: f64,
        weight_decay: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let meta = model.param_meta();
        for ((p, info), (m, v)) in model
            .params_mut()
            .into_iter()
            .zip(meta.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !info.trainable {
                continue;
            }
            let lr = match info.group {
                ParamGroup::Backbone => lr_backbone,
                ParamGroup::Head => lr_head,
            };
            for (((theta, g), m), v) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g * grad_scale;
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                // Decay acts on the weight directly, not via the gradient.
                *theta -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *theta);
            }
        }
    }
}

/// Global L2 norm over every trainable parameter's gradient.
pub fn global_grad_norm(model: &FusionNet) -> f64 {
    let meta = model.param_meta();
    model
        .params()
        .iter()
        .zip(meta.iter())
        .filter(|(_, info)| info.trainable)
        .map(|(p, _)| p.grad.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale factor that caps a gradient norm at `clip_norm`.
pub fn clip_scale(grad_norm: f64, clip_norm: f64) -> f64 {
    if grad_norm > clip_norm && grad_norm > 0.0 {
        clip_norm / grad_norm
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm_preclip: f64,
}

/// One training step. On a non-finite loss the step aborts with model and
/// optimizer state unchanged.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut FusionNet,
    images: &ndarray::Array4<f64>,
    graphs: &[FaceGraph],
    targets: &[SmoothedTarget],
    clip_norm: f64,
    lr_backbone: f64,
    lr_head: f64,
    weight_decay: f64,
    opt: &mut AdamW,
    dropout_seed: u64,
) -> Result<StepStats> {
    let (out, cache) = model.forward_train(images, graphs, dropout_seed)?;
    let (loss, dlogits) = kl_loss_with_grad(&out.logits, targets)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite training loss {loss}; step aborted, state unchanged"
        )));
    }
    model.zero_grads();
    model.backward(&cache, &dlogits);
    let grad_norm = global_grad_norm(model);
    if !grad_norm.is_finite() {
        model.zero_grads();
        return Err(Error::Numerical(format!(
            "non-finite gradient norm {grad_norm}; step aborted, state unchanged"
        )));
    }
    let scale = clip_scale(grad_norm, clip_norm);
    opt.apply(model, scale, lr_backbone, lr_head, weight_decay);
    Ok(StepStats {
        loss,
        grad_norm_preclip: grad_norm,
    })
}
