//! Central finite-difference verification of analytic gradients.

use crate::nn::mlp::{Grads, Mlp};
use rand::seq::SliceRandom;

const STEP: f64 = 1e-5;
/// Denominator floor keeps noise on near-zero gradients from inflating
/// the relative error while still flagging absolute corruption.
const DENOM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares `analytic` against central differences of `loss_fn` on a
/// random subset of at most `max_params` parameters. `loss_fn` must be a
/// deterministic function of the model parameters.
pub fn finite_diff_check(
    model: &mut Mlp,
    analytic: &Grads,
    loss_fn: impl Fn(&Mlp) -> f64,
    max_params: usize,
    seed: u64,
) -> GradCheckReport {
    let n = model.param_count();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::stream(seed, 0x47_43);
    indices.shuffle(&mut rng);
    indices.truncate(max_params.min(n));

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: indices.len(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for idx in indices {
        let orig = model.get_param(idx);
        model.set_param(idx, orig + STEP);
        let plus = loss_fn(model);
        model.set_param(idx, orig - STEP);
        let minus = loss_fn(model);
        model.set_param(idx, orig);
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic.get_flat(idx);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOM_FLOOR);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::losses::cross_entropy;
    use crate::nn::mlp::Head;

    #[test]
    fn quadratic_toy_loss_checks_to_high_precision() {
        // loss = Σ θ², gradient 2θ: central differences are exact up to h².
        let mut model = Mlp::new(&[2, 3], Head::Linear, 8);
        let mut analytic = Grads::zeros_like(&model);
        for (gl, ml) in analytic.layers.iter_mut().zip(model.layers.iter()) {
            for (g, &w) in gl.w.data_mut().iter_mut().zip(ml.w.data().iter()) {
                *g = 2.0 * w;
            }
            for (g, &b) in gl.b.iter_mut().zip(ml.b.iter()) {
                *g = 2.0 * b;
            }
        }
        let loss = |m: &Mlp| {
            (0..m.param_count())
                .map(|i| m.get_param(i).powi(2))
                .sum::<f64>()
        };
        let report = finite_diff_check(&mut model, &analytic, loss, 500, 1);
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_ce_backward_matches_finite_differences() {
        let mut model = Mlp::new(&[4, 8, 8, 3], Head::Softmax, 21);
        let mut rng = crate::rng::stream(4, 2);
        let batch = Matrix::from_fn(6, 4, |_, _| crate::rng::normal(&mut rng));
        let labels = [0usize, 1, 2, 0, 1, 2];
        let fwd = model.forward(&batch).unwrap();
        let ce = cross_entropy(&fwd.output, &labels, None).unwrap();
        let (analytic, _) = model.backward(&fwd, &ce.d_logits, None).unwrap();
        let loss = |m: &Mlp| {
            let f = m.forward(&batch).unwrap();
            cross_entropy(&f.output, &labels, None).unwrap().loss
        };
        let report = finite_diff_check(&mut model, &analytic, loss, 250, 2);
        assert!(report.max_rel_err < 1e-4, "err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut model = Mlp::new(&[4, 8, 8, 3], Head::Softmax, 22);
        let mut rng = crate::rng::stream(6, 2);
        let batch = Matrix::from_fn(6, 4, |_, _| crate::rng::normal(&mut rng));
        let labels = [0usize, 1, 2, 0, 1, 2];
        let fwd = model.forward(&batch).unwrap();
        let ce = cross_entropy(&fwd.output, &labels, None).unwrap();
        let (mut analytic, _) = model.backward(&fwd, &ce.d_logits, None).unwrap();
        // Corrupt every coordinate so the sampled subset must hit one.
        for l in &mut analytic.layers {
            for v in l.w.data_mut() {
                *v += 1e-2;
            }
            for v in &mut l.b {
                *v += 1e-2;
            }
        }
        let loss = |m: &Mlp| {
            let f = m.forward(&batch).unwrap();
            cross_entropy(&f.output, &labels, None).unwrap().loss
        };
        let report = finite_diff_check(&mut model, &analytic, loss, 250, 3);
        assert!(!report.passes(1e-4));
    }
}
