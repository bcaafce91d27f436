//! Invariant concept learning: classification over originals plus their
//! intra/cross style variants, a symmetrized-KL penalty that pulls the
//! three predictive distributions together, and a squared-distance
//! penalty on backbone features of the same triples. All three terms
//! backpropagate in a single pass over the row-concatenated batch.

use crate::data::Sample;
use crate::error::{CoreError, Result};
use crate::factor::FactorGenerators;
use crate::linalg::Matrix;
use crate::nn::losses::PROB_CLAMP;
use crate::nn::{cross_entropy, Grads, Mlp, SgdMomentum};
use crate::rng;
use rand::Rng;
use serde::Serialize;

/// Row-aligned triple of observation blocks: row i of each block is the
/// same underlying sample rendered as original / intra variant / cross
/// variant.
#[derive(Debug, Clone)]
pub struct IclBatch {
    pub originals: Matrix,
    pub intra_variants: Matrix,
    pub cross_variants: Matrix,
    pub labels: Vec<usize>,
}

impl IclBatch {
    pub fn new(
        originals: Matrix,
        intra_variants: Matrix,
        cross_variants: Matrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let b = originals.rows();
        if intra_variants.rows() != b
            || cross_variants.rows() != b
            || labels.len() != b
            || intra_variants.cols() != originals.cols()
            || cross_variants.cols() != originals.cols()
        {
            return Err(CoreError::shape(
                "IclBatch::new",
                format!("aligned blocks of {b} rows"),
                format!(
                    "{}x{}, {}x{}, {} labels",
                    intra_variants.rows(),
                    intra_variants.cols(),
                    cross_variants.rows(),
                    cross_variants.cols(),
                    labels.len()
                ),
            ));
        }
        Ok(IclBatch {
            originals,
            intra_variants,
            cross_variants,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.originals.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IclWeights {
    pub lambda_ir: f64,
    pub lambda_feat: f64,
}

impl IclWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_ir < 0.0 || self.lambda_feat < 0.0 {
            return Err(CoreError::Config("ICL weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct IclOut {
    pub loss: f64,
    pub grads: Grads,
    pub ce: f64,
    pub invariance: f64,
    pub feature_distance: f64,
}

fn clamped_ln(v: f64) -> f64 {
    v.max(PROB_CLAMP).ln()
}

/// KL(p ‖ q) of one probability row with clamped logs.
fn row_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| {
            if pi > 0.0 {
                pi * (clamped_ln(pi) - clamped_ln(qi))
            } else {
                0.0
            }
        })
        .sum()
}

/// Adds the gradient of `scale * KL(p ‖ q)` w.r.t. the logits of p and q
/// into the two accumulator rows.
fn add_kl_grads(p: &[f64], q: &[f64], scale: f64, dp: &mut [f64], dq: &mut [f64]) {
    let kl = row_kl(p, q);
    for j in 0..p.len() {
        // d KL / d z_p = p ⊙ ((ln p − ln q) − KL)
        dp[j] += scale * p[j] * ((clamped_ln(p[j]) - clamped_ln(q[j])) - kl);
        // d KL / d z_q = q − p
        dq[j] += scale * (q[j] - p[j]);
    }
}

/// The composite loss: cross-entropy over the union of the three blocks,
/// plus `lambda_ir` times the mean symmetrized pairwise KL among the
/// three predictive distributions, plus `lambda_feat` times the mean
/// pairwise squared feature distance. Gradients flow through every term.
pub fn icl_loss(model: &Mlp, batch: &IclBatch, weights: &IclWeights) -> Result<IclOut> {
    weights.validate()?;
    let b = batch.rows();
    if b == 0 {
        return Err(CoreError::Config("empty ICL batch".into()));
    }
    let stacked = Matrix::vstack(&[
        &batch.originals,
        &batch.intra_variants,
        &batch.cross_variants,
    ])?;
    let fwd = model.forward(&stacked)?;

    // Cross-entropy over all 3B rows, labels repeated per block.
    let mut labels = Vec::with_capacity(3 * b);
    for _ in 0..3 {
        labels.extend_from_slice(&batch.labels);
    }
    let ce = cross_entropy(&fwd.output, &labels, None)?;
    let mut d_logits = ce.d_logits;

    // Invariance penalty: mean over rows of the symmetrized KL of the
    // three unordered block pairs.
    let k = model.output_dim();
    let norm = 3.0 * b as f64;
    let mut invariance = 0.0;
    for i in 0..b {
        let rows = [i, b + i, 2 * b + i];
        for a in 0..3 {
            for bb in a + 1..3 {
                let (ra, rb) = (rows[a], rows[bb]);
                let pa: Vec<f64> = fwd.output.row(ra).to_vec();
                let pb: Vec<f64> = fwd.output.row(rb).to_vec();
                invariance += (row_kl(&pa, &pb) + row_kl(&pb, &pa)) / norm;
                if weights.lambda_ir > 0.0 {
                    let scale = weights.lambda_ir / norm;
                    let mut da = vec![0.0; k];
                    let mut db = vec![0.0; k];
                    add_kl_grads(&pa, &pb, scale, &mut da, &mut db);
                    add_kl_grads(&pb, &pa, scale, &mut db, &mut da);
                    for j in 0..k {
                        d_logits.set(ra, j, d_logits.get(ra, j) + da[j]);
                        d_logits.set(rb, j, d_logits.get(rb, j) + db[j]);
                    }
                }
            }
        }
    }

    // Feature-distance penalty on the backbone representation.
    let feats = fwd.features();
    let h = feats.cols();
    let mut feature_distance = 0.0;
    let mut d_features = Matrix::zeros(3 * b, h);
    for i in 0..b {
        let rows = [i, b + i, 2 * b + i];
        for a in 0..3 {
            for bb in a + 1..3 {
                let (ra, rb) = (rows[a], rows[bb]);
                let mut dist = 0.0;
                for j in 0..h {
                    let diff = feats.get(ra, j) - feats.get(rb, j);
                    dist += diff * diff;
                    if weights.lambda_feat > 0.0 {
                        let g = 2.0 * weights.lambda_feat * diff / b as f64;
                        d_features.set(ra, j, d_features.get(ra, j) + g);
                        d_features.set(rb, j, d_features.get(rb, j) - g);
                    }
                }
                feature_distance += dist / b as f64;
            }
        }
    }

    let use_feat = weights.lambda_feat > 0.0;
    let (grads, _) = model.backward(&fwd, &d_logits, use_feat.then_some(&d_features))?;
    let loss = ce.loss + weights.lambda_ir * invariance + weights.lambda_feat * feature_distance;
    if !loss.is_finite() {
        return Err(CoreError::non_finite("icl_loss"));
    }
    Ok(IclOut {
        loss,
        grads,
        ce: ce.loss,
        invariance,
        feature_distance,
    })
}

/// Per-interval training metrics emitted by `icl_train`.
#[derive(Debug, Clone, Serialize)]
pub struct IclMetric {
    pub iter: usize,
    pub ce: f64,
    pub l_ir: f64,
    pub l_feat: f64,
    pub src_acc: f64,
}

#[derive(Debug, Clone)]
pub struct IclTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weights: IclWeights,
    pub seed: u64,
    pub log_interval: usize,
}

/// Builds a row-aligned variant triple for the given samples.
pub fn make_icl_batch(
    samples: &[&Sample],
    generators: &FactorGenerators,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<IclBatch> {
    let rows_o: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let originals = Matrix::from_rows(&rows_o)?;
    let mut intra = Matrix::zeros(samples.len(), originals.cols());
    let mut cross = Matrix::zeros(samples.len(), originals.cols());
    for (i, s) in samples.iter().enumerate() {
        let iv = generators.intra_variant(s, rng)?;
        let cv = generators.cross_variant(s, rng)?;
        intra.row_mut(i).copy_from_slice(&iv);
        cross.row_mut(i).copy_from_slice(&cv);
    }
    let labels = samples.iter().map(|s| s.y).collect();
    IclBatch::new(originals, intra, cross, labels)
}

/// Minibatch SGD over the labeled source set with on-the-fly variant
/// generation. `eval` supplies a held-out evaluation set for the accuracy
/// column; without it, accuracy is measured on the training pool.
pub fn icl_train(
    model: &mut Mlp,
    source_labeled: &[Sample],
    generators: &FactorGenerators,
    cfg: &IclTrainConfig,
    eval: Option<(&Matrix, &[usize])>,
) -> Result<Vec<IclMetric>> {
    if source_labeled.is_empty() {
        return Err(CoreError::Config("empty labeled source set".into()));
    }
    let mut batches = rng::stream(cfg.seed, 0x49_42);
    let mut variants = rng::stream(cfg.seed, 0x49_56);
    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let mut metrics = Vec::new();
    for iter in 0..cfg.iterations {
        let picked: Vec<&Sample> = (0..cfg.batch)
            .map(|_| &source_labeled[batches.gen_range(0..source_labeled.len())])
            .collect();
        let batch = make_icl_batch(&picked, generators, &mut variants)?;
        let out = icl_loss(model, &batch, &cfg.weights)?;
        opt.step(model, &out.grads)?;
        if iter % cfg.log_interval == 0 || iter + 1 == cfg.iterations {
            let src_acc = match eval {
                Some((x, y)) => accuracy(model, x, y)?,
                None => {
                    let rows: Vec<&[f64]> =
                        source_labeled.iter().map(|s| s.x.as_slice()).collect();
                    let x = Matrix::from_rows(&rows)?;
                    let y: Vec<usize> = source_labeled.iter().map(|s| s.y).collect();
                    accuracy(model, &x, &y)?
                }
            };
            metrics.push(IclMetric {
                iter,
                ce: out.ce,
                l_ir: out.invariance,
                l_feat: out.feature_distance,
                src_acc,
            });
        }
    }
    Ok(metrics)
}

/// Fraction of rows whose argmax class matches the label.
pub fn accuracy(model: &Mlp, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if x.rows() != labels.len() {
        return Err(CoreError::shape(
            "accuracy",
            format!("{} labels", x.rows()),
            format!("{}", labels.len()),
        ));
    }
    let fwd = model.forward(x)?;
    let mut correct = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        if argmax(fwd.output.row(r)) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
