//! Adversarial style transfer in observation space. A residual generator
//! G maps source-styled observations toward the target style while a
//! sigmoid discriminator D tells the two apart; a jointly trained reverse
//! generator provides the cycle loss and the identity loss anchors G on
//! target inputs. Several independent pairs can be trained; the pair with
//! the lowest combined loss over the final evaluation window is selected.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::nn::{bce_with_logits, Grads, Head, Mlp, SgdMomentum};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub iterations: usize,
    pub batch: usize,
    pub hidden: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub momentum: f64,
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
    /// Fraction of final iterations used for loss reporting and pair
    /// selection.
    pub eval_window: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            iterations: 1200,
            batch: 32,
            hidden: 48,
            lr_generator: 0.01,
            lr_discriminator: 0.03,
            momentum: 0.9,
            lambda_cyc: 10.0,
            lambda_idt: 5.0,
            eval_window: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TransferDiag {
    /// Mean of the combined style-transfer loss over the final window.
    pub st_loss_window_mean: f64,
    /// Raw mean squared cycle residual per iteration.
    pub cyc_curve: Vec<f64>,
    /// Discriminator loss per iteration.
    pub disc_curve: Vec<f64>,
    /// Mean cycle residual over the final window.
    pub final_cycle_residual: f64,
    /// Set when the discriminator plateaued at ln 4 with a vanishing
    /// gradient; training continues regardless.
    pub saturation_flagged: bool,
}

/// One adversarial pair: forward generator (source→target style), reverse
/// generator (target→source), discriminator on target-styled inputs.
/// Generators are residual: output = input + net(input), so a zeroed net
/// is exactly the identity map.
#[derive(Debug, Clone)]
pub struct StyleTransferModel {
    pub forward_gen: Mlp,
    pub reverse_gen: Mlp,
    pub discriminator: Mlp,
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
    pub pair_index: usize,
    pub trained: bool,
    pub diag: TransferDiag,
}

impl StyleTransferModel {
    pub fn new(dim: usize, hidden: usize, pair_index: usize, cfg: &TransferConfig, seed: u64) -> Self {
        let gdims = [dim, hidden, hidden, dim];
        let ddims = [dim, hidden, hidden, 1];
        StyleTransferModel {
            forward_gen: Mlp::new(&gdims, Head::Linear, rng::mix(seed, 1)),
            reverse_gen: Mlp::new(&gdims, Head::Linear, rng::mix(seed, 2)),
            discriminator: Mlp::new(&ddims, Head::Sigmoid, rng::mix(seed, 3)),
            lambda_cyc: cfg.lambda_cyc,
            lambda_idt: cfg.lambda_idt,
            pair_index,
            trained: false,
            diag: TransferDiag::default(),
        }
    }

    /// Exact-identity generators (zero residual nets); used in tests.
    pub fn identity(dim: usize, hidden: usize, pair_index: usize, cfg: &TransferConfig) -> Self {
        let gdims = [dim, hidden, hidden, dim];
        let ddims = [dim, hidden, hidden, 1];
        StyleTransferModel {
            forward_gen: Mlp::zeroed(&gdims, Head::Linear),
            reverse_gen: Mlp::zeroed(&gdims, Head::Linear),
            discriminator: Mlp::zeroed(&ddims, Head::Sigmoid),
            lambda_cyc: cfg.lambda_cyc,
            lambda_idt: cfg.lambda_idt,
            pair_index,
            trained: false,
            diag: TransferDiag::default(),
        }
    }
}

/// All trained pairs plus the argmin-loss selection.
#[derive(Debug, Clone)]
pub struct TransferEnsemble {
    pub pairs: Vec<StyleTransferModel>,
    pub selected: usize,
}

fn residual_apply(net: &Mlp, x: &Matrix) -> Result<Matrix> {
    let fwd = net.forward(x)?;
    let mut out = x.clone();
    out.add_assign(&fwd.output)?;
    Ok(out)
}

/// Applies the selected cross-domain generator: x̂ = G_st(x).
pub fn apply_cross_domain(model: &StyleTransferModel, x: &Matrix) -> Result<Matrix> {
    if !model.trained {
        return Err(CoreError::Untrained);
    }
    residual_apply(&model.forward_gen, x)
}

/// Applies the reverse generator (target→source style).
pub fn apply_reverse(model: &StyleTransferModel, x: &Matrix) -> Result<Matrix> {
    if !model.trained {
        return Err(CoreError::Untrained);
    }
    residual_apply(&model.reverse_gen, x)
}

/// Per-element mean squared residual against `reference` plus its
/// gradient scaled by `scale`.
fn mse_and_grad(out: &Matrix, reference: &Matrix, scale: f64) -> (f64, Matrix) {
    let n = (out.rows() * out.cols()) as f64;
    let mut grad = Matrix::zeros(out.rows(), out.cols());
    let mut loss = 0.0;
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            let d = out.get(r, c) - reference.get(r, c);
            loss += d * d;
            grad.set(r, c, 2.0 * scale * d / n);
        }
    }
    (loss / n, grad)
}

fn sample_batch(x: &Matrix, batch: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Matrix {
    let mut out = Matrix::zeros(batch, x.cols());
    for r in 0..batch {
        let idx = rng.gen_range(0..x.rows());
        out.row_mut(r).copy_from_slice(x.row(idx));
    }
    out
}

/// Trains `n_generators` independent adversarial pairs mapping the source
/// observation distribution onto the target one, and selects the pair
/// with the lowest combined loss over the final window.
pub fn train_style_transfer(
    source_x: &Matrix,
    target_x: &Matrix,
    cfg: &TransferConfig,
    n_generators: usize,
    seed: u64,
) -> Result<TransferEnsemble> {
    if n_generators == 0 {
        return Err(CoreError::Config("need at least one generator pair".into()));
    }
    if source_x.rows() == 0 || target_x.rows() == 0 {
        return Err(CoreError::Config("style transfer needs non-empty datasets".into()));
    }
    if source_x.cols() != target_x.cols() {
        return Err(CoreError::shape(
            "train_style_transfer",
            format!("{} cols", source_x.cols()),
            format!("{}", target_x.cols()),
        ));
    }
    // Pairs are independent given their seeds; train them as parallel jobs.
    let jobs: Vec<usize> = (0..n_generators).collect();
    let pairs: Vec<Result<StyleTransferModel>> = crate::parallel::map_jobs(jobs, |k| {
        train_pair(source_x, target_x, cfg, k, rng::mix(seed, 0x5354 + k as u64))
    });
    let mut out = Vec::with_capacity(n_generators);
    for p in pairs {
        out.push(p?);
    }
    let selected = out
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.diag
                .st_loss_window_mean
                .partial_cmp(&b.diag.st_loss_window_mean)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(TransferEnsemble {
        pairs: out,
        selected,
    })
}

fn train_pair(
    source_x: &Matrix,
    target_x: &Matrix,
    cfg: &TransferConfig,
    pair_index: usize,
    seed: u64,
) -> Result<StyleTransferModel> {
    let dim = source_x.cols();
    let mut model = StyleTransferModel::new(dim, cfg.hidden, pair_index, cfg, seed);
    let mut batches = rng::stream(seed, 0xBA);
    let mut opt_g = SgdMomentum::new(cfg.lr_generator, cfg.momentum);
    let mut opt_r = SgdMomentum::new(cfg.lr_generator, cfg.momentum);
    let mut opt_d = SgdMomentum::new(cfg.lr_discriminator, cfg.momentum);

    let window = ((cfg.iterations as f64 * cfg.eval_window).ceil() as usize).max(1);
    let mut st_values = Vec::with_capacity(cfg.iterations);
    let mut saturated_streak = 0usize;
    let ln4 = 4.0f64.ln();

    for _iter in 0..cfg.iterations {
        let xs = sample_batch(source_x, cfg.batch, &mut batches);
        let xt = sample_batch(target_x, cfg.batch, &mut batches);

        // Discriminator step: real target up, generated fakes down.
        let fake = residual_apply(&model.forward_gen, &xs)?;
        let fwd_real = model.discriminator.forward(&xt)?;
        let fwd_fake = model.discriminator.forward(&fake)?;
        let ones = vec![1.0; cfg.batch];
        let zeros = vec![0.0; cfg.batch];
        let (loss_real, d_real) = bce_with_logits(&fwd_real.output, &ones)?;
        let (loss_fake, d_fake_t) = bce_with_logits(&fwd_fake.output, &zeros)?;
        let (mut gd, _) = model.discriminator.backward(&fwd_real, &d_real, None)?;
        let (gd2, _) = model.discriminator.backward(&fwd_fake, &d_fake_t, None)?;
        gd.add_assign(&gd2)?;
        let disc_loss = loss_real + loss_fake;
        let disc_grad_norm = gd.l2_norm();
        opt_d.step(&mut model.discriminator, &gd)?;

        if (disc_loss - ln4).abs() < 0.02 && disc_grad_norm < 1e-5 {
            saturated_streak += 1;
            if saturated_streak >= 50 {
                model.diag.saturation_flagged = true;
            }
        } else {
            saturated_streak = 0;
        }

        // Generator step. Adversarial term: minimize mean log(1 - D(G(xs))).
        let fwd_gnet = model.forward_gen.forward(&xs)?;
        let mut fake = xs.clone();
        fake.add_assign(&fwd_gnet.output)?;
        let fwd_d = model.discriminator.forward(&fake)?;
        let mut adv_value = 0.0;
        let mut d_logits_adv = Matrix::zeros(cfg.batch, 1);
        for r in 0..cfg.batch {
            let s = fwd_d.output.get(r, 0).clamp(1e-12, 1.0 - 1e-12);
            adv_value += (1.0 - s).ln();
            d_logits_adv.set(r, 0, -s / cfg.batch as f64);
        }
        adv_value /= cfg.batch as f64;
        let (_, d_fake_adv) = model.discriminator.backward(&fwd_d, &d_logits_adv, None)?;

        // Cycle term: reverse generator reconstructs the source input.
        let fwd_rnet = model.reverse_gen.forward(&fake)?;
        let mut rec = fake.clone();
        rec.add_assign(&fwd_rnet.output)?;
        let (cyc_raw, d_rec) = mse_and_grad(&rec, &xs, cfg.lambda_cyc);
        let (grads_rev, d_fake_from_rev) = model.reverse_gen.backward(&fwd_rnet, &d_rec, None)?;
        // Residual path: the reconstruction gradient reaches `fake` both
        // through the reverse net and through the skip connection.
        let mut d_fake = d_fake_adv;
        d_fake.add_assign(&d_rec)?;
        d_fake.add_assign(&d_fake_from_rev)?;

        // Identity term: G must leave target-styled inputs unchanged.
        let fwd_gnet_t = model.forward_gen.forward(&xt)?;
        let zero_ref = Matrix::zeros(cfg.batch, dim);
        let (idt_raw, d_idt) = mse_and_grad(&fwd_gnet_t.output, &zero_ref, cfg.lambda_idt);
        let (grads_g_idt, _) = model.forward_gen.backward(&fwd_gnet_t, &d_idt, None)?;

        let (mut grads_g, _) = model.forward_gen.backward(&fwd_gnet, &d_fake, None)?;
        grads_g.add_assign(&grads_g_idt)?;
        opt_g.step(&mut model.forward_gen, &grads_g)?;
        opt_r.step(&mut model.reverse_gen, &grads_rev)?;

        // Combined loss as optimized by G, for reporting and selection.
        let mut real_term = 0.0;
        for r in 0..cfg.batch {
            real_term += fwd_real.output.get(r, 0).clamp(1e-12, 1.0 - 1e-12).ln();
        }
        real_term /= cfg.batch as f64;
        let st = real_term + adv_value + cfg.lambda_cyc * cyc_raw + cfg.lambda_idt * idt_raw;
        st_values.push(st);
        model.diag.cyc_curve.push(cyc_raw);
        model.diag.disc_curve.push(disc_loss);
    }

    let tail = &st_values[st_values.len().saturating_sub(window)..];
    model.diag.st_loss_window_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let cyc_tail = &model.diag.cyc_curve[model.diag.cyc_curve.len().saturating_sub(window)..];
    model.diag.final_cycle_residual = cyc_tail.iter().sum::<f64>() / cyc_tail.len() as f64;
    model.trained = true;
    Ok(model)
}

/// Non-overlapping window means of a curve; used by the smoothed
/// monotonicity checks.
pub fn window_means(curve: &[f64], window: usize) -> Vec<f64> {
    curve
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_clouds(seed: u64, n: usize, dim: usize, shift: f64) -> (Matrix, Matrix) {
        let mut r = rng::stream(seed, 0xC1);
        let src = Matrix::from_fn(n, dim, |_, _| 0.3 * rng::normal(&mut r));
        let tgt = Matrix::from_fn(n, dim, |_, _| 0.3 * rng::normal(&mut r) + shift);
        (src, tgt)
    }

    #[test]
    fn identity_generator_has_zero_identity_loss() {
        let cfg = TransferConfig::default();
        let model = StyleTransferModel::identity(6, 8, 0, &cfg);
        let (_, xt) = shifted_clouds(1, 40, 6, 0.8);
        let out = residual_apply(&model.forward_gen, &xt).unwrap();
        let (idt, _) = mse_and_grad(&out, &xt, 1.0);
        assert_eq!(idt, 0.0);
    }

    #[test]
    fn untrained_model_rejects_application() {
        let cfg = TransferConfig::default();
        let model = StyleTransferModel::identity(4, 8, 0, &cfg);
        let x = Matrix::zeros(2, 4);
        assert!(matches!(
            apply_cross_domain(&model, &x),
            Err(CoreError::Untrained)
        ));
    }

    #[test]
    fn single_pair_training_selects_index_zero() {
        let (src, tgt) = shifted_clouds(2, 60, 4, 0.6);
        let cfg = TransferConfig {
            iterations: 120,
            ..TransferConfig::default()
        };
        let ens = train_style_transfer(&src, &tgt, &cfg, 1, 5).unwrap();
        assert_eq!(ens.selected, 0);
        assert_eq!(ens.pairs.len(), 1);
        assert!(ens.pairs[0].trained);
        assert!(ens.pairs[0].diag.final_cycle_residual.is_finite());
    }

    #[test]
    fn batch_application_equals_per_sample_application() {
        let (src, tgt) = shifted_clouds(3, 60, 4, 0.6);
        let cfg = TransferConfig {
            iterations: 80,
            ..TransferConfig::default()
        };
        let ens = train_style_transfer(&src, &tgt, &cfg, 1, 6).unwrap();
        let model = &ens.pairs[0];
        let batch = src.slice_rows(0, 5).unwrap();
        let all = apply_cross_domain(model, &batch).unwrap();
        for r in 0..5 {
            let single = Matrix::from_rows(&[batch.row(r)]).unwrap();
            let one = apply_cross_domain(model, &single).unwrap();
            assert_eq!(one.row(0), all.row(r));
        }
        assert_eq!(all.cols(), batch.cols());
    }

    #[test]
    fn transfer_moves_source_cloud_toward_target_mean() {
        let (src, tgt) = shifted_clouds(4, 200, 4, 1.2);
        let cfg = TransferConfig {
            iterations: 800,
            ..TransferConfig::default()
        };
        let ens = train_style_transfer(&src, &tgt, &cfg, 1, 7).unwrap();
        let moved = apply_cross_domain(&ens.pairs[0], &src).unwrap();
        let mean = |m: &Matrix| {
            let mut s = 0.0;
            for v in m.data() {
                s += v;
            }
            s / m.data().len() as f64
        };
        let before = (mean(&src) - mean(&tgt)).abs();
        let after = (mean(&moved) - mean(&tgt)).abs();
        assert!(
            after < 0.5 * before,
            "mean gap before {before}, after {after}"
        );
    }

    #[test]
    fn smoothed_cycle_curve_is_non_increasing_on_default_config() {
        let (src, tgt) = shifted_clouds(5, 200, 6, 1.0);
        let cfg = TransferConfig {
            iterations: 600,
            ..TransferConfig::default()
        };
        let ens = train_style_transfer(&src, &tgt, &cfg, 1, 8).unwrap();
        let means = window_means(&ens.pairs[0].diag.cyc_curve, 100);
        assert!(means.len() >= 4);
        for w in means.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "smoothed cycle loss increased: {:?}",
                means
            );
        }
    }
}
