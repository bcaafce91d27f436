//! Discrete structural causal model over (domain D, concept C, cross
//! style S_C, intra style S_I, class Y) with the graph D→S_C, D→S_I,
//! C→Y, and a deterministic observation x = obs(c, s_c, s_i).
//!
//! Two independent routes compute the effect of forcing an observation:
//! `interventional_bruteforce` mutilates the graph and enumerates the
//! remaining free variables, while `adjustment_estimate` evaluates the
//! style-stratified adjustment sum on the observational joint table.
//! On a conforming model the two agree exactly when the adjustment uses
//! the complete style set.

use crate::error::{CoreError, Result};
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub n_concept: usize,
    pub n_style_cross: usize,
    pub n_style_intra: usize,
    pub n_domain: usize,
    pub n_class: usize,
    /// P(D)
    pub p_domain: Vec<f64>,
    /// P(C); the concept has no parents.
    pub p_concept: Vec<f64>,
    /// P(S_C | D), indexed [domain][style].
    pub p_style_cross: Vec<Vec<f64>>,
    /// P(S_I | D), indexed [domain][style].
    pub p_style_intra: Vec<Vec<f64>>,
    /// P(Y | C, S_C), indexed [concept][style_cross][class]. Conforming
    /// models repeat the same row across S_C (the class depends on the
    /// concept only); a style-dependent table deliberately violates that
    /// assumption for demonstration purposes.
    pub p_class: Vec<Vec<Vec<f64>>>,
}

fn check_row(name: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|&p| p < 0.0) {
        return Err(CoreError::Config(format!("{name} has a negative entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(CoreError::Config(format!(
            "{name} sums to {sum}, expected 1 within 1e-12"
        )));
    }
    Ok(())
}

impl ScmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p_domain.len() != self.n_domain {
            return Err(CoreError::Config("p_domain length mismatch".into()));
        }
        if self.p_concept.len() != self.n_concept {
            return Err(CoreError::Config("p_concept length mismatch".into()));
        }
        check_row("p_domain", &self.p_domain)?;
        check_row("p_concept", &self.p_concept)?;
        if self.p_style_cross.len() != self.n_domain || self.p_style_intra.len() != self.n_domain {
            return Err(CoreError::Config("style table row count mismatch".into()));
        }
        for (d, row) in self.p_style_cross.iter().enumerate() {
            if row.len() != self.n_style_cross {
                return Err(CoreError::Config(format!(
                    "p_style_cross[{d}] length mismatch"
                )));
            }
            check_row("p_style_cross", row)?;
        }
        for (d, row) in self.p_style_intra.iter().enumerate() {
            if row.len() != self.n_style_intra {
                return Err(CoreError::Config(format!(
                    "p_style_intra[{d}] length mismatch"
                )));
            }
            check_row("p_style_intra", row)?;
        }
        if self.p_class.len() != self.n_concept {
            return Err(CoreError::Config("p_class concept count mismatch".into()));
        }
        for rows in &self.p_class {
            if rows.len() != self.n_style_cross {
                return Err(CoreError::Config("p_class style count mismatch".into()));
            }
            for row in rows {
                if row.len() != self.n_class {
                    return Err(CoreError::Config("p_class class count mismatch".into()));
                }
                check_row("p_class", row)?;
            }
        }
        Ok(())
    }

    /// True when P(Y | C, S_C) is constant across S_C.
    pub fn class_depends_only_on_concept(&self) -> bool {
        self.p_class.iter().all(|rows| {
            rows.windows(2).all(|w| {
                w[0].iter()
                    .zip(w[1].iter())
                    .all(|(a, b)| (a - b).abs() < 1e-15)
            })
        })
    }

    /// Convenience constructor for conforming models: one P(Y|C) row per
    /// concept, repeated across the style axis.
    pub fn with_concept_only_class(
        n_style_cross: usize,
        p_class_given_concept: Vec<Vec<f64>>,
    ) -> Vec<Vec<Vec<f64>>> {
        p_class_given_concept
            .into_iter()
            .map(|row| vec![row; n_style_cross])
            .collect()
    }

    /// Deterministic observation map: a bijective packing of the latent
    /// triple into one index.
    pub fn obs(&self, c: usize, sc: usize, si: usize) -> usize {
        (c * self.n_style_cross + sc) * self.n_style_intra + si
    }

    /// Inverse of `obs`; errors when `x` is outside the image.
    pub fn decode(&self, x: usize) -> Result<(usize, usize, usize)> {
        let total = self.n_concept * self.n_style_cross * self.n_style_intra;
        if x >= total {
            return Err(CoreError::NotInImage(x));
        }
        let si = x % self.n_style_intra;
        let rest = x / self.n_style_intra;
        let sc = rest % self.n_style_cross;
        let c = rest / self.n_style_cross;
        Ok((c, sc, si))
    }

    /// Every observation value in the image of `obs`.
    pub fn all_observations(&self) -> Vec<usize> {
        (0..self.n_concept * self.n_style_cross * self.n_style_intra).collect()
    }

    /// Every (s_c, s_i) pair.
    pub fn full_style_set(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_style_cross * self.n_style_intra);
        for sc in 0..self.n_style_cross {
            for si in 0..self.n_style_intra {
                out.push((sc, si));
            }
        }
        out
    }

    /// A deterministic subsample of the style set of the given size,
    /// always containing the factual styles of `x`. Mirrors the reduced
    /// variant sets the generators produce at training time.
    pub fn subsampled_style_set(&self, x: usize, size: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
        let (_, sc, si) = self.decode(x)?;
        let mut pool: Vec<(usize, usize)> = self
            .full_style_set()
            .into_iter()
            .filter(|&p| p != (sc, si))
            .collect();
        let mut r = rng::stream(seed, 0x53_43_4d);
        pool.shuffle(&mut r);
        let mut out = vec![(sc, si)];
        out.extend(pool.into_iter().take(size.saturating_sub(1)));
        Ok(out)
    }

    /// Observational joint table P(d, c, sc, si, y), built by exhaustive
    /// enumeration of the unmutilated model.
    pub fn joint(&self) -> JointTable {
        let mut t = JointTable::zeros(self);
        for d in 0..self.n_domain {
            for c in 0..self.n_concept {
                for sc in 0..self.n_style_cross {
                    for si in 0..self.n_style_intra {
                        for y in 0..self.n_class {
                            let p = self.p_domain[d]
                                * self.p_concept[c]
                                * self.p_style_cross[d][sc]
                                * self.p_style_intra[d][si]
                                * self.p_class[c][sc][y];
                            t.set(d, c, sc, si, y, p);
                        }
                    }
                }
            }
        }
        t
    }
}

/// Dense joint probability table over (d, c, sc, si, y).
#[derive(Debug, Clone)]
pub struct JointTable {
    n_domain: usize,
    n_concept: usize,
    n_style_cross: usize,
    n_style_intra: usize,
    n_class: usize,
    p: Vec<f64>,
}

impl JointTable {
    fn zeros(scm: &ScmSpec) -> Self {
        JointTable {
            n_domain: scm.n_domain,
            n_concept: scm.n_concept,
            n_style_cross: scm.n_style_cross,
            n_style_intra: scm.n_style_intra,
            n_class: scm.n_class,
            p: vec![
                0.0;
                scm.n_domain * scm.n_concept * scm.n_style_cross * scm.n_style_intra * scm.n_class
            ],
        }
    }

    fn idx(&self, d: usize, c: usize, sc: usize, si: usize, y: usize) -> usize {
        (((d * self.n_concept + c) * self.n_style_cross + sc) * self.n_style_intra + si)
            * self.n_class
            + y
    }

    fn set(&mut self, d: usize, c: usize, sc: usize, si: usize, y: usize, v: f64) {
        let i = self.idx(d, c, sc, si, y);
        self.p[i] = v;
    }

    pub fn get(&self, d: usize, c: usize, sc: usize, si: usize, y: usize) -> f64 {
        self.p[self.idx(d, c, sc, si, y)]
    }

    /// P(c, sc, si, d) marginalized over y.
    pub fn stratum_mass(&self, d: usize, c: usize, sc: usize, si: usize) -> f64 {
        (0..self.n_class).map(|y| self.get(d, c, sc, si, y)).sum()
    }

    /// P(y | c, sc, si, d); None when the stratum has zero mass.
    pub fn conditional_class(
        &self,
        d: usize,
        c: usize,
        sc: usize,
        si: usize,
    ) -> Option<Vec<f64>> {
        let mass = self.stratum_mass(d, c, sc, si);
        if mass <= 0.0 {
            return None;
        }
        Some(
            (0..self.n_class)
                .map(|y| self.get(d, c, sc, si, y) / mass)
                .collect(),
        )
    }
}

/// P(Y | do(X = x)): forcing an observation pins its disentangled latent
/// triple, which severs the domain's influence on the styles; the domain
/// remains free with its prior and the class is drawn from its CPT. The
/// result is computed by enumerating all assignments of the mutilated
/// model.
pub fn interventional_bruteforce(scm: &ScmSpec, x: usize) -> Result<Vec<f64>> {
    let (c, sc, _si) = scm.decode(x)?;
    let mut out = vec![0.0; scm.n_class];
    for d in 0..scm.n_domain {
        for (y, o) in out.iter_mut().enumerate() {
            *o += scm.p_domain[d] * scm.p_class[c][sc][y];
        }
    }
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::NonFinite {
            op: "interventional_bruteforce",
            detail: Some("zero total probability".into()),
        });
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// The style-stratified adjustment estimate of P(Y | do(X = x)): a sum of
/// P(Y | c, ŝ_c, ŝ_i, d) weighted by the stratum mass P(c, ŝ_c, ŝ_i, d),
/// over the supplied style interventions, normalized at the end. All
/// quantities come from the observational joint table. With the complete
/// style set this equals the brute-force interventional distribution; a
/// singleton set holding the factual styles reduces it to the
/// observational conditional P(Y | X = x).
pub fn adjustment_estimate(
    scm: &ScmSpec,
    x: usize,
    styles: &[(usize, usize)],
) -> Result<Vec<f64>> {
    if styles.is_empty() {
        return Err(CoreError::EmptyInterventionSet);
    }
    let (c, _, _) = scm.decode(x)?;
    let joint = scm.joint();
    let mut acc = vec![0.0; scm.n_class];
    let mut mass = 0.0;
    for &(sc, si) in styles {
        if sc >= scm.n_style_cross || si >= scm.n_style_intra {
            return Err(CoreError::Config(format!(
                "style intervention ({sc}, {si}) out of range"
            )));
        }
        for d in 0..scm.n_domain {
            let w = joint.stratum_mass(d, c, sc, si);
            if w <= 0.0 {
                continue;
            }
            let cond = joint.conditional_class(d, c, sc, si).unwrap();
            for (a, p) in acc.iter_mut().zip(cond.iter()) {
                *a += w * p;
            }
            mass += w;
        }
    }
    if mass <= 0.0 {
        return Err(CoreError::NonFinite {
            op: "adjustment_estimate",
            detail: Some("all requested strata have zero probability".into()),
        });
    }
    for v in &mut acc {
        *v /= mass;
    }
    Ok(acc)
}

/// Observational conditional P(Y | X = x) from the joint table.
pub fn observational_conditional(scm: &ScmSpec, x: usize) -> Result<Vec<f64>> {
    let (c, sc, si) = scm.decode(x)?;
    let joint = scm.joint();
    let mut out = vec![0.0; scm.n_class];
    let mut mass = 0.0;
    for d in 0..scm.n_domain {
        for (y, o) in out.iter_mut().enumerate() {
            *o += joint.get(d, c, sc, si, y);
        }
        mass += joint.stratum_mass(d, c, sc, si);
    }
    if mass <= 0.0 {
        return Err(CoreError::NotInImage(x));
    }
    for v in &mut out {
        *v /= mass;
    }
    Ok(out)
}

/// Total variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// The shipped conforming model: binary domain/concept/styles, two
/// classes, class depends on the concept only.
pub fn default_scm() -> ScmSpec {
    ScmSpec {
        n_concept: 2,
        n_style_cross: 2,
        n_style_intra: 2,
        n_domain: 2,
        n_class: 2,
        p_domain: vec![0.5, 0.5],
        p_concept: vec![0.6, 0.4],
        p_style_cross: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
        p_style_intra: vec![vec![0.6, 0.4], vec![0.45, 0.55]],
        p_class: ScmSpec::with_concept_only_class(2, vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
    }
}

/// A model where the class depends deterministically on the concept.
pub fn deterministic_scm() -> ScmSpec {
    let mut scm = default_scm();
    scm.p_class = ScmSpec::with_concept_only_class(2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    scm
}

/// A deliberately non-conforming model: the class leaks dependence on the
/// cross-domain style, so the adjustment no longer matches the
/// observational conditional.
pub fn violating_scm() -> ScmSpec {
    let mut scm = default_scm();
    scm.p_class = vec![
        vec![vec![0.9, 0.1], vec![0.55, 0.45]],
        vec![vec![0.2, 0.8], vec![0.5, 0.5]],
    ];
    scm
}
