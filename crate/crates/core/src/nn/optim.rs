//! SGD with classical momentum: v ← m·v − lr·g; θ ← θ + v.

use crate::error::{CoreError, Result};
use crate::nn::mlp::{Grads, Mlp};

#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Grads>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        SgdMomentum {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    /// One update step. Non-finite gradients abort without touching the
    /// model or the velocity buffers.
    pub fn step(&mut self, model: &mut Mlp, grads: &Grads) -> Result<()> {
        if !grads.is_finite() {
            return Err(CoreError::NonFinite {
                op: "sgd_step",
                detail: Some("gradient contains NaN/Inf; step aborted".into()),
            });
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| Grads::zeros_like(model));
        if velocity.layers.len() != grads.layers.len() {
            return Err(CoreError::shape(
                "sgd_step",
                format!("{} layers", velocity.layers.len()),
                format!("{}", grads.layers.len()),
            ));
        }
        for ((v, g), p) in velocity
            .layers
            .iter_mut()
            .zip(grads.layers.iter())
            .zip(model.layers.iter_mut())
        {
            if v.w.rows() != g.w.rows() || v.w.cols() != g.w.cols() {
                return Err(CoreError::shape(
                    "sgd_step",
                    format!("{}x{}", v.w.rows(), v.w.cols()),
                    format!("{}x{}", g.w.rows(), g.w.cols()),
                ));
            }
            for ((vv, &gv), pv) in v
                .w
                .data_mut()
                .iter_mut()
                .zip(g.w.data().iter())
                .zip(p.w.data_mut().iter_mut())
            {
                *vv = self.momentum * *vv - self.learning_rate * gv;
                *pv += *vv;
            }
            for ((vv, &gv), pv) in v.b.iter_mut().zip(g.b.iter()).zip(p.b.iter_mut()) {
                *vv = self.momentum * *vv - self.learning_rate * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}
