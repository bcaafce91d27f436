//! Concept-preserving variant generation. A variant keeps a sample's
//! concept (and therefore its label) while replacing style: `intra`
//! perturbs the intra-domain style coordinates, `cross` swaps the
//! cross-domain style for the other domain's. Two modes exist: `oracle`
//! re-renders from the generative latents (exact concept preservation,
//! the testing ceiling), `learned` works from observations alone via a
//! fitted latent estimator and adversarially trained style-transfer
//! networks.

pub mod transfer;

pub use transfer::{
    apply_cross_domain, train_style_transfer, StyleTransferModel, TransferConfig, TransferDiag,
    TransferEnsemble,
};

use crate::data::{DatasetBundle, Domain, DomainSpec, RenderParams, Sample};
use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Intra-domain style perturbation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Standard deviation of the perturbation added to each intra-style
    /// coordinate.
    pub sigma: f64,
    /// Number of augmented variants drawn per sample where a set is
    /// requested.
    pub variants_per_sample: usize,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(CoreError::Config("augment sigma must be nonnegative".into()));
        }
        if self.variants_per_sample == 0 {
            return Err(CoreError::Config("variants_per_sample must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Oracle,
    Learned,
}

impl GeneratorMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(GeneratorMode::Oracle),
            "learned" => Some(GeneratorMode::Learned),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorMode::Oracle => "oracle",
            GeneratorMode::Learned => "learned",
        }
    }
}

/// Linear latent estimator: ridge regression from observations (plus an
/// intercept) to the latent coordinates, fitted on labeled samples — the
/// only place latents may be read outside oracle mode. Regressing on raw
/// x rather than arctanh(x) avoids amplifying observation noise in
/// saturated channels.
#[derive(Debug, Clone)]
pub struct StyleEstimator {
    /// ((d_x + 1) × d_latent): latents ≈ [x, 1] · w.
    w: Matrix,
    dims: crate::data::Dims,
}

impl StyleEstimator {
    pub fn fit(samples: &[&Sample], render: &RenderParams, ridge: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::Config("no samples to fit the estimator".into()));
        }
        let dims = render.dims;
        let n = samples.len();
        let d = dims.observed + 1;
        let mut design = Matrix::zeros(n, d);
        let mut targets = Matrix::zeros(n, dims.latent_total());
        for (i, s) in samples.iter().enumerate() {
            for (j, &v) in s.x.iter().enumerate() {
                design.set(i, j, v);
            }
            design.set(i, dims.observed, 1.0);
            let mut col = 0;
            for &v in s
                .latents
                .concept
                .0
                .iter()
                .chain(s.latents.style.cross.iter())
                .chain(s.latents.style.intra.iter())
            {
                targets.set(i, col, v);
                col += 1;
            }
        }
        let mut gram = design.transpose_matmul(&design)?;
        for i in 0..d {
            gram.set(i, i, gram.get(i, i) + ridge);
        }
        let xty = design.transpose_matmul(&targets)?;
        // Solve one column of W per latent coordinate.
        let mut w = Matrix::zeros(d, dims.latent_total());
        for j in 0..dims.latent_total() {
            let rhs: Vec<f64> = (0..d).map(|r| xty.get(r, j)).collect();
            let col = crate::linalg::solve_spd(&gram, &rhs)?;
            for (r, &v) in col.iter().enumerate() {
                w.set(r, j, v);
            }
        }
        Ok(StyleEstimator { w, dims })
    }

    /// Estimated (concept, cross style, intra style) for one observation.
    pub fn estimate(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if x.len() != self.dims.observed {
            return Err(CoreError::shape(
                "StyleEstimator::estimate",
                format!("{}", self.dims.observed),
                format!("{}", x.len()),
            ));
        }
        let mut z = vec![0.0; self.dims.latent_total()];
        for (j, zv) in z.iter_mut().enumerate() {
            let mut acc = self.w.get(self.dims.observed, j);
            for (r, &xv) in x.iter().enumerate() {
                acc += xv * self.w.get(r, j);
            }
            *zv = acc;
        }
        let c = z[..self.dims.concept].to_vec();
        let sc = z[self.dims.concept..self.dims.concept + self.dims.style_cross].to_vec();
        let si = z[self.dims.concept + self.dims.style_cross..].to_vec();
        Ok((c, sc, si))
    }
}

/// Intra-domain variant on the generation-time path: the concept is
/// carried over bit-for-bit, the intra style is jittered, and the
/// observation is re-rendered under the sample's own id (so sigma = 0
/// reproduces the input exactly).
pub fn intra_domain_factor(
    sample: &Sample,
    spec: &AugmentSpec,
    render: &RenderParams,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    spec.validate()?;
    let mut out = sample.clone();
    for v in &mut out.latents.style.intra {
        *v += spec.sigma * rng::normal(rng);
    }
    out.x = render.render(
        &out.latents.concept.0,
        &out.latents.style.cross,
        &out.latents.style.intra,
        noise_sigma,
        out.id,
    )?;
    Ok(out)
}

/// Intra-domain variant on the sealed path: latents are estimated, the
/// perturbation is applied through the render map as a delta on the
/// observation. Requires a configured estimator.
pub fn intra_domain_factor_sealed(
    x: &[f64],
    id: u64,
    spec: &AugmentSpec,
    render: &RenderParams,
    estimator: Option<&StyleEstimator>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let est = estimator.ok_or(CoreError::NoStyleEstimator(id))?;
    let (c, sc, si) = est.estimate(x)?;
    let mut si_new = si.clone();
    for v in &mut si_new {
        *v += spec.sigma * rng::normal(rng);
    }
    let base = render.premix(&c, &sc, &si)?;
    let moved = render.premix(&c, &sc, &si_new)?;
    let out: Vec<f64> = x
        .iter()
        .zip(base.iter().zip(moved.iter()))
        .map(|(&xv, (&b, &m))| xv + (m.tanh() - b.tanh()))
        .collect();
    Ok(out)
}

/// Cross-domain variant with generative latents: the cross style is
/// redrawn from the other domain's distribution; concept and label are
/// untouched.
pub fn oracle_cross_domain(
    sample: &Sample,
    other: &DomainSpec,
    render: &RenderParams,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    other.validate()?;
    let mut out = sample.clone();
    out.latents.style.cross = other
        .style_mean
        .iter()
        .zip(other.style_cov_diag.iter())
        .map(|(&m, &v)| m + v.sqrt() * rng::normal(rng))
        .collect();
    out.x = render.render(
        &out.latents.concept.0,
        &out.latents.style.cross,
        &out.latents.style.intra,
        other.noise_sigma,
        out.id,
    )?;
    Ok(out)
}

/// The trainer-facing generator facade. In oracle mode it re-renders from
/// latents; in learned mode it uses only observations (estimator + trained
/// style-transfer networks).
#[derive(Debug)]
pub struct FactorGenerators {
    pub mode: GeneratorMode,
    pub augment: AugmentSpec,
    pub render: RenderParams,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub estimator: Option<StyleEstimator>,
    pub transfer: Option<TransferEnsemble>,
}

impl FactorGenerators {
    /// Builds the generators for a bundle. Learned mode fits the latent
    /// estimator on the labeled splits and adversarially trains
    /// `n_generators` style-transfer pairs on source vs target
    /// observations.
    pub fn prepare(
        bundle: &DatasetBundle,
        mode: GeneratorMode,
        augment: AugmentSpec,
        transfer_cfg: &TransferConfig,
        n_generators: usize,
        seed: u64,
    ) -> Result<Self> {
        augment.validate()?;
        let mut gens = FactorGenerators {
            mode,
            augment,
            render: bundle.render.clone(),
            source: bundle.source.clone(),
            target: bundle.target.clone(),
            estimator: None,
            transfer: None,
        };
        if mode == GeneratorMode::Learned {
            let labeled: Vec<&Sample> = bundle.s_l.iter().chain(bundle.t_l.iter()).collect();
            gens.estimator = Some(StyleEstimator::fit(&labeled, &bundle.render, 1e-3)?);
            let source_rows: Vec<&[f64]> = bundle.s_l.iter().map(|s| s.x.as_slice()).collect();
            let target_rows: Vec<&[f64]> = bundle
                .t_l
                .iter()
                .chain(bundle.t_u.iter())
                .map(|s| s.x.as_slice())
                .collect();
            let source_x = Matrix::from_rows(&source_rows)?;
            let target_x = Matrix::from_rows(&target_rows)?;
            gens.transfer = Some(train_style_transfer(
                &source_x,
                &target_x,
                transfer_cfg,
                n_generators,
                seed,
            )?);
        }
        Ok(gens)
    }

    fn other_spec(&self, domain: Domain) -> &DomainSpec {
        match domain {
            Domain::Source => &self.target,
            Domain::Target => &self.source,
        }
    }

    fn own_spec(&self, domain: Domain) -> &DomainSpec {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// Cross-domain variant observation for a sample.
    pub fn cross_variant(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match self.mode {
            GeneratorMode::Oracle => {
                let v =
                    oracle_cross_domain(sample, self.other_spec(sample.domain), &self.render, rng)?;
                Ok(v.x)
            }
            GeneratorMode::Learned => {
                let ens = self.transfer.as_ref().ok_or(CoreError::Untrained)?;
                let model = &ens.pairs[ens.selected];
                let x = Matrix::from_rows(&[sample.x.as_slice()])?;
                let out = match sample.domain {
                    Domain::Source => apply_cross_domain(model, &x)?,
                    Domain::Target => transfer::apply_reverse(model, &x)?,
                };
                Ok(out.row(0).to_vec())
            }
        }
    }

    /// Intra-domain variant observation for a sample.
    pub fn intra_variant(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match self.mode {
            GeneratorMode::Oracle => {
                let v = intra_domain_factor(
                    sample,
                    &self.augment,
                    &self.render,
                    self.own_spec(sample.domain).noise_sigma,
                    rng,
                )?;
                Ok(v.x)
            }
            GeneratorMode::Learned => intra_domain_factor_sealed(
                &sample.x,
                sample.id,
                &self.augment,
                &self.render,
                self.estimator.as_ref(),
                rng,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        generate_bundle, uniform_marginal, zipf_marginal, ConceptModel, Dims, SizeSpec,
    };

    fn setup() -> (DatasetBundle, AugmentSpec) {
        let k = 6;
        let dims = Dims {
            concept: 6,
            style_cross: 3,
            style_intra: 3,
            observed: 16,
        };
        let source = DomainSpec {
            style_mean: vec![0.0; 3],
            style_cov_diag: vec![0.25; 3],
            intra_sigma: 0.5,
            label_marginal: zipf_marginal(k, 1.0),
            noise_sigma: 0.01,
        };
        let target = DomainSpec {
            style_mean: vec![1.4; 3],
            style_cov_diag: vec![0.25; 3],
            intra_sigma: 0.5,
            label_marginal: uniform_marginal(k),
            noise_sigma: 0.01,
        };
        let concept = ConceptModel::simplex(k, 6, 2.0, 0.3).unwrap();
        let render = RenderParams::random(dims, 1.0, 1.0, 0.5, 5);
        let bundle = generate_bundle(
            &source,
            &target,
            &SizeSpec {
                n_source: 300,
                shots: 3,
                n_unlabeled: 120,
                n_test: 60,
            },
            k,
            &concept,
            render,
            13,
        )
        .unwrap();
        let spec = AugmentSpec {
            sigma: 0.4,
            variants_per_sample: 1,
        };
        (bundle, spec)
    }

    #[test]
    fn zero_sigma_intra_variant_reproduces_input_exactly() {
        let (bundle, _) = setup();
        let spec = AugmentSpec {
            sigma: 0.0,
            variants_per_sample: 1,
        };
        let mut r = rng::stream(1, 1);
        let s = &bundle.s_l[0];
        let v = intra_domain_factor(s, &spec, &bundle.render, bundle.source.noise_sigma, &mut r)
            .unwrap();
        assert_eq!(v.x, s.x);
        // Sealed path: the delta form also collapses to the input.
        let labeled: Vec<&Sample> = bundle.s_l.iter().collect();
        let est = StyleEstimator::fit(&labeled, &bundle.render, 1e-3).unwrap();
        let sealed =
            intra_domain_factor_sealed(&s.x, s.id, &spec, &bundle.render, Some(&est), &mut r)
                .unwrap();
        assert_eq!(sealed, s.x);
    }

    #[test]
    fn intra_variant_preserves_concept_bits() {
        let (bundle, spec) = setup();
        let mut r = rng::stream(2, 1);
        for s in bundle.s_l.iter().take(20) {
            let v =
                intra_domain_factor(s, &spec, &bundle.render, bundle.source.noise_sigma, &mut r)
                    .unwrap();
            assert_eq!(v.latents.concept, s.latents.concept);
            assert_eq!(v.y, s.y);
            assert_eq!(v.latents.style.cross, s.latents.style.cross);
        }
    }

    #[test]
    fn sealed_path_without_estimator_is_an_error() {
        let (bundle, spec) = setup();
        let mut r = rng::stream(3, 1);
        let s = &bundle.s_l[0];
        let err = intra_domain_factor_sealed(&s.x, s.id, &spec, &bundle.render, None, &mut r);
        assert!(matches!(err, Err(CoreError::NoStyleEstimator(_))));
    }

    #[test]
    fn intra_perturbation_moments_match_the_spec() {
        // Over 10^4 draws: mean of the output intra style sits within
        // 3*sigma/100 of the input value and the variance approaches
        // sigma^2.
        let (bundle, _) = setup();
        let sigma = 0.4;
        let spec = AugmentSpec {
            sigma,
            variants_per_sample: 1,
        };
        let s = &bundle.s_l[0];
        let mut r = rng::stream(4, 1);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v =
                intra_domain_factor(s, &spec, &bundle.render, bundle.source.noise_sigma, &mut r)
                    .unwrap();
            let d = v.latents.style.intra[0];
            sum += d;
            sq += d * d;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let want_mean = s.latents.style.intra[0];
        assert!(
            (mean - want_mean).abs() < 3.0 * sigma / 100.0,
            "mean {mean} vs {want_mean}"
        );
        assert!((var - sigma * sigma).abs() < 0.015, "var {var}");
    }

    #[test]
    fn oracle_cross_domain_preserves_concept_and_label() {
        let (bundle, _) = setup();
        let mut r = rng::stream(5, 1);
        for s in bundle.s_l.iter().take(50) {
            let v = oracle_cross_domain(s, &bundle.target, &bundle.render, &mut r).unwrap();
            assert_eq!(v.latents.concept, s.latents.concept);
            assert_eq!(v.y, s.y);
            assert_eq!(v.latents.style.intra, s.latents.style.intra);
            assert_ne!(v.latents.style.cross, s.latents.style.cross);
        }
    }

    #[test]
    fn cross_domain_with_identical_specs_matches_own_style_moments() {
        // Degenerate case: the "other" domain equals the sample's own, so
        // redrawn styles share the original distribution's moments.
        let (bundle, _) = setup();
        let mut r = rng::stream(6, 1);
        let spec = bundle.source.clone();
        let n = 4000;
        let mut sum = vec![0.0; 3];
        for _ in 0..n {
            let v = oracle_cross_domain(&bundle.s_l[0], &spec, &bundle.render, &mut r).unwrap();
            for (a, &b) in sum.iter_mut().zip(v.latents.style.cross.iter()) {
                *a += b;
            }
        }
        for (j, &m) in spec.style_mean.iter().enumerate() {
            let got = sum[j] / n as f64;
            assert!((got - m).abs() < 0.05, "coordinate {j}: {got} vs {m}");
        }
    }

    #[test]
    fn estimator_beats_the_mean_predictor_on_unseen_target_data() {
        let (bundle, _) = setup();
        let labeled: Vec<&Sample> = bundle.s_l.iter().chain(bundle.t_l.iter()).collect();
        let est = StyleEstimator::fit(&labeled, &bundle.render, 1e-3).unwrap();
        let latent_vec = |s: &Sample| -> Vec<f64> {
            s.latents
                .concept
                .0
                .iter()
                .chain(s.latents.style.cross.iter())
                .chain(s.latents.style.intra.iter())
                .copied()
                .collect()
        };
        let d = bundle.render.dims.latent_total();
        let mut train_mean = vec![0.0; d];
        for s in &labeled {
            for (m, v) in train_mean.iter_mut().zip(latent_vec(s)) {
                *m += v / labeled.len() as f64;
            }
        }
        let mut sse_est = 0.0;
        let mut sse_mean = 0.0;
        for s in &bundle.t_u {
            let (c, sc, si) = est.estimate(&s.x).unwrap();
            let got: Vec<f64> = c.into_iter().chain(sc).chain(si).collect();
            for ((g, w), m) in got.iter().zip(latent_vec(s)).zip(train_mean.iter()) {
                sse_est += (g - w).powi(2);
                sse_mean += (m - w).powi(2);
            }
        }
        assert!(
            sse_est < 0.25 * sse_mean,
            "estimator SSE {sse_est} vs mean-predictor SSE {sse_mean}"
        );
    }

    #[test]
    fn oracle_facade_generates_label_preserving_variants() {
        let (bundle, spec) = setup();
        let gens = FactorGenerators::prepare(
            &bundle,
            GeneratorMode::Oracle,
            spec,
            &TransferConfig::default(),
            1,
            3,
        )
        .unwrap();
        let mut r = rng::stream(7, 1);
        for s in bundle.t_u.iter().take(10) {
            let xv = gens.cross_variant(s, &mut r).unwrap();
            assert_eq!(xv.len(), s.x.len());
            let iv = gens.intra_variant(s, &mut r).unwrap();
            assert_eq!(iv.len(), s.x.len());
        }
    }
}
