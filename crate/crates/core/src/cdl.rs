//! Collaborative debiasing: two peer classifiers exchange
//! threshold-gated pseudo-labels over the unlabeled target pool, train
//! their supervised terms with inverse-propensity weights against a
//! moving class-marginal estimate, and push down the top-1 probability of
//! their low-confidence unlabeled predictions.

use crate::error::{CoreError, Result};
use crate::icl::argmax;
use crate::linalg::Matrix;
use crate::nn::{cross_entropy, Grads, Mlp};
use serde::{Deserialize, Serialize};

/// Default denominator guard of the propensity score.
pub const IPW_EPS: f64 = 1e-3;
/// Default weight clip of the propensity score.
pub const IPW_WMAX: f64 = 10.0;

/// The two peer classifiers. `source` trains on labeled source data (plus
/// variants), `target` on labeled target data (plus variants); both share
/// the architecture but never the parameters.
#[derive(Debug, Clone)]
pub struct SslModelPair {
    pub source: Mlp,
    pub target: Mlp,
}

impl SslModelPair {
    pub fn new(source: Mlp, target: Mlp) -> Result<Self> {
        if source.dims != target.dims {
            return Err(CoreError::shape(
                "SslModelPair::new",
                format!("{:?}", source.dims),
                format!("{:?}", target.dims),
            ));
        }
        Ok(SslModelPair { source, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposer {
    SourceModel,
    TargetModel,
}

impl Proposer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Proposer::SourceModel => "source",
            Proposer::TargetModel => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoLabelStatus {
    Accepted,
    RejectedPeerThreshold,
    RejectedRecipientThreshold,
}

impl PseudoLabelStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PseudoLabelStatus::Accepted => "accepted",
            PseudoLabelStatus::RejectedPeerThreshold => "rejected_peer",
            PseudoLabelStatus::RejectedRecipientThreshold => "rejected_recipient",
        }
    }
}

/// Provenance of one pseudo-label decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub iteration: u64,
    pub id: u64,
    pub proposer: Proposer,
    pub proposed: usize,
    pub proposer_conf: f64,
    pub recipient_conf: f64,
    pub status: PseudoLabelStatus,
    /// Whether the proposal matches the true label; filled only on paths
    /// allowed to read it (reporting).
    pub correct: Option<bool>,
}

/// Outcome of one exchange: rows index into the unlabeled batch that was
/// passed in.
#[derive(Debug, Clone, Default)]
pub struct Exchange {
    /// (row, label) accepted into the source model's training set.
    pub for_source: Vec<(usize, usize)>,
    /// (row, label) accepted into the target model's training set.
    pub for_target: Vec<(usize, usize)>,
    pub records: Vec<PseudoLabelRecord>,
}

impl Exchange {
    pub fn accepted_total(&self) -> usize {
        self.for_source.len() + self.for_target.len()
    }
}

/// Peer-proposal pseudo-labeling. For each unlabeled row, each model
/// proposes its argmax class to the other: the proposal stands when the
/// proposer's confidence clears its own threshold, and (when the
/// recipient gate is on) the recipient additionally accepts only if its
/// own probability of the proposed class clears the recipient threshold.
/// Every decision is recorded, one record per row per direction.
#[allow(clippy::too_many_arguments)]
pub fn exchange_pseudo_labels(
    pair: &SslModelPair,
    unlabeled: &Matrix,
    ids: &[u64],
    tau_source: f64,
    tau_target: f64,
    iteration: u64,
    recipient_gate: bool,
    true_labels: Option<&[usize]>,
) -> Result<Exchange> {
    if !(0.0..=1.0).contains(&tau_source) || !(0.0..=1.0).contains(&tau_target) {
        return Err(CoreError::Config("thresholds must lie in [0, 1]".into()));
    }
    if ids.len() != unlabeled.rows() {
        return Err(CoreError::shape(
            "exchange_pseudo_labels",
            format!("{} ids", unlabeled.rows()),
            format!("{}", ids.len()),
        ));
    }
    let probs_s = pair.source.forward(unlabeled)?.output;
    let probs_t = pair.target.forward(unlabeled)?.output;
    let mut out = Exchange::default();
    for r in 0..unlabeled.rows() {
        let row_s = probs_s.row(r);
        let row_t = probs_t.row(r);
        // Direction one: the target model proposes for the source model.
        out.records.push(decide(
            r,
            ids[r],
            Proposer::TargetModel,
            row_t,
            tau_target,
            row_s,
            tau_source,
            iteration,
            recipient_gate,
            true_labels,
            &mut out.for_source,
        ));
        // Direction two: the source model proposes for the target model.
        out.records.push(decide(
            r,
            ids[r],
            Proposer::SourceModel,
            row_s,
            tau_source,
            row_t,
            tau_target,
            iteration,
            recipient_gate,
            true_labels,
            &mut out.for_target,
        ));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn decide(
    row: usize,
    id: u64,
    proposer: Proposer,
    proposer_probs: &[f64],
    proposer_tau: f64,
    recipient_probs: &[f64],
    recipient_tau: f64,
    iteration: u64,
    recipient_gate: bool,
    true_labels: Option<&[usize]>,
    accepted: &mut Vec<(usize, usize)>,
) -> PseudoLabelRecord {
    let proposed = argmax(proposer_probs);
    let proposer_conf = proposer_probs[proposed];
    let recipient_conf = recipient_probs[proposed];
    let status = if proposer_conf <= proposer_tau {
        PseudoLabelStatus::RejectedPeerThreshold
    } else if recipient_gate && recipient_conf <= recipient_tau {
        PseudoLabelStatus::RejectedRecipientThreshold
    } else {
        accepted.push((row, proposed));
        PseudoLabelStatus::Accepted
    };
    PseudoLabelRecord {
        iteration,
        id,
        proposer,
        proposed,
        proposer_conf,
        recipient_conf,
        status,
        correct: true_labels.map(|t| t[row] == proposed),
    }
}

/// Moving estimate of the class marginal: exponential moving average over
/// batch label histograms, floored and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimator {
    p: Vec<f64>,
    pub momentum: f64,
    pub updates: u64,
}

const MARGINAL_FLOOR: f64 = 1e-6;

impl MarginalEstimator {
    /// Starts at the uniform distribution.
    pub fn new(n_classes: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(CoreError::Config("EMA momentum must lie in [0, 1)".into()));
        }
        if n_classes == 0 {
            return Err(CoreError::Config("need at least one class".into()));
        }
        Ok(MarginalEstimator {
            p: vec![1.0 / n_classes as f64; n_classes],
            momentum,
            updates: 0,
        })
    }

    pub fn estimate(&self) -> &[f64] {
        &self.p
    }

    /// p ← m·p + (1−m)·histogram(labels), then floor and renormalize.
    pub fn update(&mut self, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(CoreError::Config("empty batch for marginal update".into()));
        }
        let k = self.p.len();
        let mut hist = vec![0.0; k];
        for &y in labels {
            if y >= k {
                return Err(CoreError::Config(format!("label {y} out of range 0..{k}")));
            }
            hist[y] += 1.0 / labels.len() as f64;
        }
        let m = self.momentum;
        let mut sum = 0.0;
        for (p, h) in self.p.iter_mut().zip(hist.iter()) {
            *p = (m * *p + (1.0 - m) * h).max(MARGINAL_FLOOR);
            sum += *p;
        }
        for p in &mut self.p {
            *p /= sum;
        }
        self.updates += 1;
        Ok(())
    }
}

/// The per-sample propensity weight: w = p / (ln p − ln p_y), guarded at
/// `eps` near the zero crossing and clipped to [0, w_max]. A negative
/// log-ratio (model confidence below the class marginal) clips to zero.
pub fn ipw_score(p_y_given_x: f64, p_y: f64, eps: f64, w_max: f64) -> f64 {
    let diff = p_y_given_x.ln() - p_y.ln();
    if diff < 0.0 {
        return 0.0;
    }
    (p_y_given_x / diff.max(eps)).clamp(0.0, w_max)
}

#[derive(Debug)]
pub struct WeightedLoss {
    pub loss: f64,
    pub grads: Grads,
    /// Mean-normalized weights actually applied.
    pub weights: Vec<f64>,
    /// Set when clipping zeroed every weight and the batch fell back to
    /// uniform weighting.
    pub uniform_fallback: bool,
}

/// Cross-entropy with frozen per-sample propensity weights
/// w_i = ipw(P(y_i|x_i), p̂(y_i)), normalized to mean one within the
/// batch. Weights are constants for gradient purposes.
pub fn debiased_supervised_loss(
    model: &Mlp,
    x: &Matrix,
    labels: &[usize],
    marginal: &MarginalEstimator,
    eps: f64,
    w_max: f64,
) -> Result<WeightedLoss> {
    if x.rows() == 0 {
        return Err(CoreError::Config("empty labeled batch".into()));
    }
    let fwd = model.forward(x)?;
    let p_hat = marginal.estimate();
    let mut weights: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| ipw_score(fwd.output.get(i, y).max(1e-12), p_hat[y], eps, w_max))
        .collect();
    let sum: f64 = weights.iter().sum();
    let uniform_fallback = sum <= 0.0;
    if uniform_fallback {
        weights.iter_mut().for_each(|w| *w = 1.0);
    } else {
        let mean = sum / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w /= mean);
    }
    let ce = cross_entropy(&fwd.output, labels, Some(&weights))?;
    let (grads, _) = model.backward(&fwd, &ce.d_logits, None)?;
    Ok(WeightedLoss {
        loss: ce.loss,
        grads,
        weights,
        uniform_fallback,
    })
}

#[derive(Debug)]
pub struct SelfPenalization {
    pub loss: f64,
    pub grads: Grads,
    /// Rows whose top-1 confidence fell below the threshold.
    pub penalized: usize,
}

/// Negative pseudo-label penalty: rows whose top-1 probability p* falls
/// below `tau` contribute −ln(1 − p*), pushing the probability of that
/// (likely wrong) class down. Confident rows contribute nothing.
pub fn self_penalization_loss(model: &Mlp, x: &Matrix, tau: f64) -> Result<SelfPenalization> {
    if !(0.0..1.0).contains(&tau) {
        return Err(CoreError::Config("tau must lie in (0, 1)".into()));
    }
    let fwd = model.forward(x)?;
    let k = model.output_dim();
    let mut penalized_rows = Vec::new();
    for r in 0..x.rows() {
        let row = fwd.output.row(r);
        let top = argmax(row);
        if row[top] < tau {
            penalized_rows.push((r, top));
        }
    }
    let mut d_logits = Matrix::zeros(x.rows(), k);
    let mut loss = 0.0;
    let n = penalized_rows.len();
    for &(r, top) in &penalized_rows {
        let p = fwd.output.get(r, top).min(1.0 - 1e-12);
        loss += -(1.0 - p).ln() / n as f64;
        // d/dz of -ln(1 - p_top): pـtop/(1-p_top) through the softmax
        // Jacobian row for the top class.
        let coef = 1.0 / ((1.0 - p) * n as f64);
        for j in 0..k {
            let pj = fwd.output.get(r, j);
            let jac = pj * (if j == top { 1.0 } else { 0.0 } - p);
            d_logits.set(r, j, coef * jac);
        }
    }
    let grads = if n > 0 {
        model.backward(&fwd, &d_logits, None)?.0
    } else {
        Grads::zeros_like(model)
    };
    Ok(SelfPenalization {
        loss,
        grads,
        penalized: n,
    })
}

/// Loss weights of the co-training risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdlWeights {
    pub lambda_unlabeled: f64,
    pub lambda_self_pen: f64,
}

/// Everything one model needs for one co-training step.
#[derive(Debug)]
pub struct ModelRiskInputs<'a> {
    /// Labeled batch (own domain, originals and/or variants).
    pub labeled_x: &'a Matrix,
    pub labeled_y: &'a [usize],
    /// Accepted pseudo-labeled rows of the unlabeled batch, if any.
    pub pseudo_x: Option<&'a Matrix>,
    pub pseudo_y: &'a [usize],
    /// Unlabeled rows (originals and/or variants) for self-penalization.
    pub unlabeled_x: &'a Matrix,
}

#[derive(Debug)]
pub struct ModelRisk {
    pub loss: f64,
    pub grads: Grads,
    pub supervised: f64,
    pub pseudo: f64,
    pub self_pen: f64,
    /// Mean-normalized supervised weights actually applied.
    pub supervised_weights: Vec<f64>,
    pub uniform_fallback: bool,
    pub penalized: usize,
}

/// One model's co-training risk: IPW-debiased supervised term, weighted
/// pseudo-label cross-entropy, and self-penalization. `use_ipw` off turns
/// the supervised term into plain cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn model_risk(
    model: &Mlp,
    inputs: &ModelRiskInputs<'_>,
    marginal: &MarginalEstimator,
    weights: &CdlWeights,
    tau_self: f64,
    use_ipw: bool,
    use_self_pen: bool,
    ipw_eps: f64,
    ipw_wmax: f64,
) -> Result<ModelRisk> {
    let mut total_grads = Grads::zeros_like(model);
    let mut loss = 0.0;

    let (supervised, supervised_weights, uniform_fallback) = if use_ipw {
        let sup = debiased_supervised_loss(
            model,
            inputs.labeled_x,
            inputs.labeled_y,
            marginal,
            ipw_eps,
            ipw_wmax,
        )?;
        total_grads.add_assign(&sup.grads)?;
        loss += sup.loss;
        (sup.loss, sup.weights, sup.uniform_fallback)
    } else {
        let fwd = model.forward(inputs.labeled_x)?;
        let ce = cross_entropy(&fwd.output, inputs.labeled_y, None)?;
        let (g, _) = model.backward(&fwd, &ce.d_logits, None)?;
        total_grads.add_assign(&g)?;
        loss += ce.loss;
        (ce.loss, vec![1.0; inputs.labeled_y.len()], false)
    };

    let mut pseudo = 0.0;
    if let Some(px) = inputs.pseudo_x {
        if px.rows() > 0 {
            let fwd = model.forward(px)?;
            let ce = cross_entropy(&fwd.output, inputs.pseudo_y, None)?;
            let (mut g, _) = model.backward(&fwd, &ce.d_logits, None)?;
            g.scale(weights.lambda_unlabeled);
            total_grads.add_assign(&g)?;
            pseudo = ce.loss;
            loss += weights.lambda_unlabeled * pseudo;
        }
    }

    let mut self_pen = 0.0;
    let mut penalized = 0;
    if use_self_pen && inputs.unlabeled_x.rows() > 0 {
        let sp = self_penalization_loss(model, inputs.unlabeled_x, tau_self)?;
        let mut g = sp.grads;
        g.scale(weights.lambda_self_pen);
        total_grads.add_assign(&g)?;
        self_pen = sp.loss;
        penalized = sp.penalized;
        loss += weights.lambda_self_pen * self_pen;
    }

    if !loss.is_finite() {
        return Err(CoreError::non_finite("model_risk"));
    }
    Ok(ModelRisk {
        loss,
        grads: total_grads,
        supervised,
        pseudo,
        self_pen,
        supervised_weights,
        uniform_fallback,
        penalized,
    })
}

/// The combined per-model risks of the peer pair; the two sides are
/// independent once the exchanged labels are fixed.
#[allow(clippy::too_many_arguments)]
pub fn cdl_risk(
    pair: &SslModelPair,
    source_inputs: &ModelRiskInputs<'_>,
    target_inputs: &ModelRiskInputs<'_>,
    source_marginal: &MarginalEstimator,
    target_marginal: &MarginalEstimator,
    weights: &CdlWeights,
    tau_self_source: f64,
    tau_self_target: f64,
    use_ipw: bool,
    use_self_pen: bool,
    ipw_eps: f64,
    ipw_wmax: f64,
) -> Result<(ModelRisk, ModelRisk)> {
    let s = model_risk(
        &pair.source,
        source_inputs,
        source_marginal,
        weights,
        tau_self_source,
        use_ipw,
        use_self_pen,
        ipw_eps,
        ipw_wmax,
    )?;
    let t = model_risk(
        &pair.target,
        target_inputs,
        target_marginal,
        weights,
        tau_self_target,
        use_ipw,
        use_self_pen,
        ipw_eps,
        ipw_wmax,
    )?;
    Ok((s, t))
}
