//! Synthetic dataset generation from an explicit disentangled latent
//! model: class-determined concept coordinates plus cross-domain and
//! intra-domain style coordinates, rendered through a fixed nonlinear
//! map. Labels of unlabeled/test splits are hidden behind an audited
//! accessor so trainer code cannot read them silently.

pub mod csvio;
pub mod generate;
pub mod render;

pub use generate::{generate_bundle, uniform_marginal, zipf_marginal, ConceptModel, SizeSpec};
pub use render::{Dims, RenderParams};

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    SourceLabeled,
    TargetLabeled,
    TargetUnlabeled,
    TargetTest,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::SourceLabeled => "s_l",
            Split::TargetLabeled => "t_l",
            Split::TargetUnlabeled => "t_u",
            Split::TargetTest => "t_test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "s_l" => Some(Split::SourceLabeled),
            "t_l" => Some(Split::TargetLabeled),
            "t_u" => Some(Split::TargetUnlabeled),
            "t_test" => Some(Split::TargetTest),
            _ => None,
        }
    }
}

/// Latent class-determining coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector(pub Vec<f64>);

/// Latent nuisance coordinates: `cross` varies between domains, `intra`
/// varies within a domain. Both are drawn independently of the concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    pub cross: Vec<f64>,
    pub intra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub concept: ConceptVector,
    pub style: StyleVector,
}

/// One observation. `latents` are retained for oracle checks only; the
/// sealed view used by trainers strips them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x: Vec<f64>,
    pub y: usize,
    pub latents: Latents,
    pub domain: Domain,
    pub labeled: bool,
}

/// Per-domain generative settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Mean of the cross-domain style coordinates.
    pub style_mean: Vec<f64>,
    /// Diagonal covariance of the cross-domain style coordinates.
    pub style_cov_diag: Vec<f64>,
    /// Standard deviation of the intra-domain style coordinates.
    pub intra_sigma: f64,
    /// Class marginal this domain draws labels from.
    pub label_marginal: Vec<f64>,
    /// Observation noise standard deviation.
    pub noise_sigma: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.style_mean.len() != self.style_cov_diag.len() {
            return Err(CoreError::Config(
                "style_mean and style_cov_diag lengths differ".into(),
            ));
        }
        if self.style_cov_diag.iter().any(|&v| v < 0.0) {
            return Err(CoreError::Config("negative style covariance".into()));
        }
        if self.intra_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(CoreError::Config("negative sigma".into()));
        }
        let sum: f64 = self.label_marginal.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::Config(format!(
                "label_marginal sums to {sum}, expected 1"
            )));
        }
        if self.label_marginal.iter().any(|&p| p < 0.0) {
            return Err(CoreError::Config("negative label marginal entry".into()));
        }
        Ok(())
    }
}

/// Label-read audit: counts accesses to the labels of protected splits.
#[derive(Debug, Default)]
pub struct LabelAudit {
    unlabeled_reads: AtomicU64,
    test_reads: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSnapshot {
    pub unlabeled_reads: u64,
    pub test_reads: u64,
}

/// A sample as visible to training code: no latents, and labels only on
/// labeled splits.
#[derive(Debug, Clone, Copy)]
pub struct SealedSample<'a> {
    pub id: u64,
    pub x: &'a [f64],
    pub domain: Domain,
    pub y: Option<usize>,
}

/// The three training splits plus a held-out target test set.
#[derive(Debug)]
pub struct DatasetBundle {
    pub s_l: Vec<Sample>,
    pub t_l: Vec<Sample>,
    pub t_u: Vec<Sample>,
    pub t_test: Vec<Sample>,
    pub n_classes: usize,
    pub render: RenderParams,
    pub source: DomainSpec,
    pub target: DomainSpec,
    audit: LabelAudit,
}

impl DatasetBundle {
    pub(crate) fn assemble(
        s_l: Vec<Sample>,
        t_l: Vec<Sample>,
        t_u: Vec<Sample>,
        t_test: Vec<Sample>,
        n_classes: usize,
        render: RenderParams,
        source: DomainSpec,
        target: DomainSpec,
    ) -> Self {
        DatasetBundle {
            s_l,
            t_l,
            t_u,
            t_test,
            n_classes,
            render,
            source,
            target,
            audit: LabelAudit::default(),
        }
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::SourceLabeled => &self.s_l,
            Split::TargetLabeled => &self.t_l,
            Split::TargetUnlabeled => &self.t_u,
            Split::TargetTest => &self.t_test,
        }
    }

    /// Training-facing view: labels appear only on labeled splits.
    pub fn sealed(&self, split: Split) -> Vec<SealedSample<'_>> {
        let labeled = matches!(split, Split::SourceLabeled | Split::TargetLabeled);
        self.split(split)
            .iter()
            .map(|s| SealedSample {
                id: s.id,
                x: &s.x,
                domain: s.domain,
                y: labeled.then_some(s.y),
            })
            .collect()
    }

    /// Ground-truth label of a sample in a protected split. Every call is
    /// counted; evaluation and ledger-correctness paths are the only
    /// legitimate callers.
    pub fn true_label(&self, split: Split, index: usize) -> usize {
        match split {
            Split::TargetUnlabeled => {
                self.audit.unlabeled_reads.fetch_add(1, Ordering::Relaxed);
            }
            Split::TargetTest => {
                self.audit.test_reads.fetch_add(1, Ordering::Relaxed);
            }
            _ => {}
        }
        self.split(split)[index].y
    }

    pub fn audit(&self) -> AuditSnapshot {
        AuditSnapshot {
            unlabeled_reads: self.audit.unlabeled_reads.load(Ordering::Relaxed),
            test_reads: self.audit.test_reads.load(Ordering::Relaxed),
        }
    }

    /// All ids across splits, for disjointness checks.
    pub fn all_ids(&self) -> Vec<u64> {
        self.s_l
            .iter()
            .chain(&self.t_l)
            .chain(&self.t_u)
            .chain(&self.t_test)
            .map(|s| s.id)
            .collect()
    }
}
