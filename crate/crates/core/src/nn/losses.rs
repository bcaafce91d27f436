//! Classification and divergence losses. Each returns the loss value and
//! the gradient w.r.t. the pre-head logits so callers can feed
//! `Mlp::backward` directly.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

/// Probabilities below this are clamped inside logs of divergence terms.
pub const PROB_CLAMP: f64 = 1e-12;
/// Cross-entropy clamps the picked probability at this floor.
pub const CE_CLAMP: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct CrossEntropyOut {
    pub loss: f64,
    /// Gradient w.r.t. pre-softmax logits.
    pub d_logits: Matrix,
    /// Number of samples whose probability hit the clamp floor.
    pub clamped: usize,
}

/// Weighted cross-entropy over softmax probabilities.
///
/// loss = -Σ w_i log p_i[y_i] / Σ w_i. Weights default to 1; the gradient
/// is returned w.r.t. the logits that produced `probs`.
pub fn cross_entropy(
    probs: &Matrix,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<CrossEntropyOut> {
    let b = probs.rows();
    let k = probs.cols();
    if labels.len() != b {
        return Err(CoreError::shape(
            "cross_entropy",
            format!("{b} labels"),
            format!("{}", labels.len()),
        ));
    }
    if let Some(w) = weights {
        if w.len() != b {
            return Err(CoreError::shape(
                "cross_entropy",
                format!("{b} weights"),
                format!("{}", w.len()),
            ));
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(CoreError::Config("negative or non-finite weight".into()));
        }
    }
    let w_sum: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => b as f64,
    };
    if w_sum <= 0.0 {
        return Err(CoreError::Config("weights sum to zero".into()));
    }
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut d = Matrix::zeros(b, k);
    for i in 0..b {
        let y = labels[i];
        if y >= k {
            return Err(CoreError::Config(format!("label {y} out of range 0..{k}")));
        }
        let wi = weights.map(|w| w[i]).unwrap_or(1.0);
        let mut p = probs.get(i, y);
        if p < CE_CLAMP {
            p = CE_CLAMP;
            clamped += 1;
        }
        loss -= wi * p.ln();
        // d/dz of -w log softmax(z)[y] = w (p - onehot).
        let scale = wi / w_sum;
        let drow = d.row_mut(i);
        for (j, dv) in drow.iter_mut().enumerate() {
            *dv = scale * (probs.get(i, j) - if j == y { 1.0 } else { 0.0 });
        }
    }
    loss /= w_sum;
    if !loss.is_finite() {
        return Err(CoreError::non_finite("cross_entropy"));
    }
    Ok(CrossEntropyOut {
        loss,
        d_logits: d,
        clamped,
    })
}

/// KL(p ‖ q) = Σ p log(p/q) with q clamped at `PROB_CLAMP`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::shape(
            "kl_divergence",
            format!("{} entries", p.len()),
            format!("{}", q.len()),
        ));
    }
    if p.iter().chain(q.iter()).any(|&v| v < 0.0) {
        return Err(CoreError::Config("negative probability entry".into()));
    }
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if (sp - 1.0).abs() > 1e-8 || (sq - 1.0).abs() > 1e-8 {
        return Err(CoreError::Config(format!(
            "distributions must sum to 1 (got {sp} and {sq})"
        )));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            kl += pi * (pi.ln() - qi.max(PROB_CLAMP).ln());
        }
    }
    Ok(kl)
}

/// Binary cross-entropy on sigmoid outputs; targets in {0, 1} (or soft).
/// Returns (loss, d_logits) with the mean taken over rows.
pub fn bce_with_logits(outputs: &Matrix, targets: &[f64]) -> Result<(f64, Matrix)> {
    let b = outputs.rows();
    if outputs.cols() != 1 || targets.len() != b {
        return Err(CoreError::shape(
            "bce_with_logits",
            format!("{b}x1 outputs and {b} targets"),
            format!("{}x{} and {}", b, outputs.cols(), targets.len()),
        ));
    }
    let mut loss = 0.0;
    let mut d = Matrix::zeros(b, 1);
    for i in 0..b {
        let s = outputs.get(i, 0).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let t = targets[i];
        loss -= t * s.ln() + (1.0 - t) * (1.0 - s).ln();
        d.set(i, 0, (s - t) / b as f64);
    }
    Ok((loss / b as f64, d))
}
