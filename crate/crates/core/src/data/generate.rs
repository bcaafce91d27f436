//! Bundle generation: draws each split from its domain's style
//! distribution and label marginal using independent random streams per
//! latent kind, so concept and style coordinates are statistically
//! independent by construction.

use super::render::RenderParams;
use super::{ConceptVector, DatasetBundle, Domain, DomainSpec, Latents, Sample, StyleVector};
use crate::error::{CoreError, Result};
use crate::rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub n_source: usize,
    pub shots: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
}

/// Class-conditional concept distribution: Gaussian around per-class
/// means placed on a scaled simplex (mean of class k is `separation`
/// times the k-th basis vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptModel {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl ConceptModel {
    pub fn simplex(n_classes: usize, dim: usize, separation: f64, sigma: f64) -> Result<Self> {
        if dim < n_classes {
            return Err(CoreError::Config(format!(
                "concept dim {dim} must be >= number of classes {n_classes} for simplex means"
            )));
        }
        let means = (0..n_classes)
            .map(|k| {
                let mut m = vec![0.0; dim];
                m[k] = separation;
                m
            })
            .collect();
        Ok(ConceptModel { means, sigma })
    }

    pub fn draw(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.means[class]
            .iter()
            .map(|&m| m + self.sigma * rng::normal(rng))
            .collect()
    }
}

/// Zipf-law class marginal: p_k ∝ (k+1)^(-alpha). alpha = 0 is uniform.
pub fn zipf_marginal(n_classes: usize, alpha: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n_classes)
        .map(|k| ((k + 1) as f64).powf(-alpha))
        .collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    p
}

pub fn uniform_marginal(n_classes: usize) -> Vec<f64> {
    vec![1.0 / n_classes as f64; n_classes]
}

struct SplitStreams {
    labels: ChaCha8Rng,
    concept: ChaCha8Rng,
    style_cross: ChaCha8Rng,
    style_intra: ChaCha8Rng,
}

impl SplitStreams {
    fn new(seed: u64, split_index: u64) -> Self {
        let base = split_index * 16;
        SplitStreams {
            labels: rng::stream(seed, base + 1),
            concept: rng::stream(seed, base + 2),
            style_cross: rng::stream(seed, base + 3),
            style_intra: rng::stream(seed, base + 4),
        }
    }
}

fn draw_style(spec: &DomainSpec, streams: &mut SplitStreams, intra_dim: usize) -> StyleVector {
    let cross: Vec<f64> = spec
        .style_mean
        .iter()
        .zip(spec.style_cov_diag.iter())
        .map(|(&m, &v)| m + v.sqrt() * rng::normal(&mut streams.style_cross))
        .collect();
    let intra: Vec<f64> = (0..intra_dim)
        .map(|_| spec.intra_sigma * rng::normal(&mut streams.style_intra))
        .collect();
    StyleVector { cross, intra }
}

#[allow(clippy::too_many_arguments)]
fn draw_sample(
    id: u64,
    y: usize,
    domain: Domain,
    labeled: bool,
    spec: &DomainSpec,
    concept_model: &ConceptModel,
    render: &RenderParams,
    streams: &mut SplitStreams,
) -> Result<Sample> {
    let concept = concept_model.draw(y, &mut streams.concept);
    let style = draw_style(spec, streams, render.dims.style_intra);
    let x = render.render(&concept, &style.cross, &style.intra, spec.noise_sigma, id)?;
    Ok(Sample {
        id,
        x,
        y,
        latents: Latents {
            concept: ConceptVector(concept),
            style,
        },
        domain,
        labeled,
    })
}

/// Generates the three training splits and the held-out test split.
/// Deterministic under `seed`.
pub fn generate_bundle(
    source: &DomainSpec,
    target: &DomainSpec,
    sizes: &SizeSpec,
    n_classes: usize,
    concept_model: &ConceptModel,
    render: RenderParams,
    seed: u64,
) -> Result<DatasetBundle> {
    source.validate()?;
    target.validate()?;
    if source.label_marginal.len() != n_classes || target.label_marginal.len() != n_classes {
        return Err(CoreError::Config(
            "label marginal length differs from the class count".into(),
        ));
    }
    if concept_model.means.len() != n_classes {
        return Err(CoreError::Config(
            "concept model means differ from the class count".into(),
        ));
    }
    let n_labeled_target = sizes.shots * n_classes;
    if sizes.n_source == 0 || sizes.shots == 0 || sizes.n_unlabeled == 0 || sizes.n_test == 0 {
        return Err(CoreError::Infeasible("all sizes must be positive".into()));
    }
    if n_labeled_target > sizes.n_unlabeled {
        return Err(CoreError::Infeasible(format!(
            "shots x classes = {n_labeled_target} exceeds unlabeled size {}",
            sizes.n_unlabeled
        )));
    }
    if sizes.n_source < 10 * n_labeled_target {
        return Err(CoreError::Infeasible(format!(
            "labeled source size {} must be at least 10x the labeled target size {n_labeled_target}",
            sizes.n_source
        )));
    }

    let mut next_id = 0u64;
    let mut take_id = || {
        let id = next_id;
        next_id += 1;
        id
    };

    let mut s_l = Vec::with_capacity(sizes.n_source);
    {
        let mut st = SplitStreams::new(seed, 0);
        for _ in 0..sizes.n_source {
            let y = rng::categorical(&mut st.labels, &source.label_marginal);
            s_l.push(draw_sample(
                take_id(),
                y,
                Domain::Source,
                true,
                source,
                concept_model,
                &render,
                &mut st,
            )?);
        }
    }

    // Exactly `shots` labeled target samples per class.
    let mut t_l = Vec::with_capacity(n_labeled_target);
    {
        let mut st = SplitStreams::new(seed, 1);
        for y in 0..n_classes {
            for _ in 0..sizes.shots {
                t_l.push(draw_sample(
                    take_id(),
                    y,
                    Domain::Target,
                    true,
                    target,
                    concept_model,
                    &render,
                    &mut st,
                )?);
            }
        }
    }

    let mut t_u = Vec::with_capacity(sizes.n_unlabeled);
    {
        let mut st = SplitStreams::new(seed, 2);
        for _ in 0..sizes.n_unlabeled {
            let y = rng::categorical(&mut st.labels, &target.label_marginal);
            t_u.push(draw_sample(
                take_id(),
                y,
                Domain::Target,
                false,
                target,
                concept_model,
                &render,
                &mut st,
            )?);
        }
    }

    let mut t_test = Vec::with_capacity(sizes.n_test);
    {
        let mut st = SplitStreams::new(seed, 3);
        for _ in 0..sizes.n_test {
            let y = rng::categorical(&mut st.labels, &target.label_marginal);
            t_test.push(draw_sample(
                take_id(),
                y,
                Domain::Target,
                false,
                target,
                concept_model,
                &render,
                &mut st,
            )?);
        }
    }

    Ok(DatasetBundle::assemble(
        s_l,
        t_l,
        t_u,
        t_test,
        n_classes,
        render,
        source.clone(),
        target.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render::Dims;
    use std::collections::HashSet;

    pub(crate) fn small_specs(k: usize) -> (DomainSpec, DomainSpec) {
        let source = DomainSpec {
            style_mean: vec![0.0; 3],
            style_cov_diag: vec![0.25; 3],
            intra_sigma: 0.5,
            label_marginal: zipf_marginal(k, 1.0),
            noise_sigma: 0.01,
        };
        let target = DomainSpec {
            style_mean: vec![1.5; 3],
            style_cov_diag: vec![0.25; 3],
            intra_sigma: 0.5,
            label_marginal: uniform_marginal(k),
            noise_sigma: 0.01,
        };
        (source, target)
    }

    fn small_bundle(seed: u64) -> DatasetBundle {
        let k = 10;
        let dims = Dims {
            concept: 10,
            style_cross: 3,
            style_intra: 3,
            observed: 20,
        };
        let (source, target) = small_specs(k);
        let concept = ConceptModel::simplex(k, dims.concept, 2.0, 0.3).unwrap();
        let render = RenderParams::random(dims, 1.0, 1.0, 0.5, seed ^ 0xD5);
        generate_bundle(
            &source,
            &target,
            &SizeSpec {
                n_source: 400,
                shots: 3,
                n_unlabeled: 300,
                n_test: 200,
            },
            k,
            &concept,
            render,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn three_shot_ten_class_labeled_target_has_thirty_samples() {
        let b = small_bundle(5);
        assert_eq!(b.t_l.len(), 30);
        // Exactly `shots` per class.
        for class in 0..10 {
            assert_eq!(b.t_l.iter().filter(|s| s.y == class).count(), 3);
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let a = small_bundle(9);
        let b = small_bundle(9);
        assert_eq!(a.s_l, b.s_l);
        assert_eq!(a.t_l, b.t_l);
        assert_eq!(a.t_u, b.t_u);
        assert_eq!(a.t_test, b.t_test);
    }

    #[test]
    fn ids_are_disjoint_across_splits() {
        let b = small_bundle(3);
        let ids = b.all_ids();
        let set: HashSet<u64> = ids.iter().copied().collect();
        assert_eq!(set.len(), ids.len());
    }

    #[test]
    fn infeasible_sizes_are_rejected() {
        let k = 10;
        let dims = Dims {
            concept: 10,
            style_cross: 3,
            style_intra: 3,
            observed: 20,
        };
        let (source, target) = small_specs(k);
        let concept = ConceptModel::simplex(k, dims.concept, 2.0, 0.3).unwrap();
        let render = RenderParams::random(dims, 1.0, 1.0, 0.5, 1);
        // n_source too small relative to shots x classes.
        let err = generate_bundle(
            &source,
            &target,
            &SizeSpec {
                n_source: 100,
                shots: 3,
                n_unlabeled: 300,
                n_test: 100,
            },
            k,
            &concept,
            render,
            1,
        );
        assert!(matches!(err, Err(CoreError::Infeasible(_))));
    }

    #[test]
    fn skewed_source_and_uniform_target_histograms_differ() {
        // Two-sample chi-square between the empirical class histograms of
        // s_l (Zipf) and t_u (uniform); the 99.9% critical value for 9
        // degrees of freedom is 27.88.
        let b = small_bundle(7);
        let k = 10;
        let hist = |samples: &[Sample]| {
            let mut h = vec![0usize; k];
            for s in samples {
                h[s.y] += 1;
            }
            h
        };
        let h1 = hist(&b.s_l);
        let h2 = hist(&b.t_u);
        let n1: f64 = h1.iter().sum::<usize>() as f64;
        let n2: f64 = h2.iter().sum::<usize>() as f64;
        let mut chi2 = 0.0;
        for j in 0..k {
            let total = (h1[j] + h2[j]) as f64;
            if total == 0.0 {
                continue;
            }
            let e1 = n1 * total / (n1 + n2);
            let e2 = n2 * total / (n1 + n2);
            chi2 += (h1[j] as f64 - e1).powi(2) / e1 + (h2[j] as f64 - e2).powi(2) / e2;
        }
        assert!(chi2 > 27.88, "chi-square {chi2} not above threshold");
    }

    #[test]
    fn latent_coordinate_pairs_are_decorrelated() {
        // Pearson correlation below 0.05 in magnitude for every pair of
        // coordinates drawn from different latent kinds, over >= 10^4
        // samples.
        let k = 10;
        let dims = Dims {
            concept: 10,
            style_cross: 3,
            style_intra: 3,
            observed: 20,
        };
        let (source, target) = small_specs(k);
        let concept = ConceptModel::simplex(k, dims.concept, 2.0, 0.3).unwrap();
        let render = RenderParams::random(dims, 1.0, 1.0, 0.5, 2);
        let b = generate_bundle(
            &source,
            &target,
            &SizeSpec {
                n_source: 12_000,
                shots: 3,
                n_unlabeled: 100,
                n_test: 100,
            },
            k,
            &concept,
            render,
            11,
        )
        .unwrap();
        let n = b.s_l.len();
        let col = |f: &dyn Fn(&Sample) -> f64| -> Vec<f64> { b.s_l.iter().map(f).collect() };
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        for j in 0..dims.concept {
            columns.push((format!("c{j}"), col(&|s| s.latents.concept.0[j])));
        }
        for j in 0..dims.style_cross {
            columns.push((format!("sc{j}"), col(&|s| s.latents.style.cross[j])));
        }
        for j in 0..dims.style_intra {
            columns.push((format!("si{j}"), col(&|s| s.latents.style.intra[j])));
        }
        let pearson = |a: &[f64], bb: &[f64]| {
            let ma = a.iter().sum::<f64>() / n as f64;
            let mb = bb.iter().sum::<f64>() / n as f64;
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..n {
                cov += (a[i] - ma) * (bb[i] - mb);
                va += (a[i] - ma).powi(2);
                vb += (bb[i] - mb).powi(2);
            }
            cov / (va.sqrt() * vb.sqrt())
        };
        // Cross-kind pairs only: concept coordinates are correlated among
        // themselves through the class label, which is expected.
        let kinds = |name: &str| name.chars().take_while(|c| c.is_alphabetic()).count();
        for i in 0..columns.len() {
            for j in i + 1..columns.len() {
                let (na, a) = &columns[i];
                let (nb, bb) = &columns[j];
                if na[..kinds(na)] == nb[..kinds(nb)] {
                    continue;
                }
                let r = pearson(a, bb);
                assert!(
                    r.abs() < 0.05,
                    "correlation between {na} and {nb} is {r}"
                );
            }
        }
    }
}
