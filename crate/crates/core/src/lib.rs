//! Desk-scale testbed for semi-supervised domain adaptation built around
//! an explicit disentangled causal data model.
//!
//! The crate generates synthetic source/target classification data from a
//! latent (concept, cross-domain style, intra-domain style) model, trains
//! small MLP classifiers with hand-derived gradients, and implements the
//! full training stack under study: style-intervention variant generation,
//! an invariance-regularized classification loss, and a co-training loop
//! with debiased pseudo-label exchange. A discrete structural causal model
//! with brute-force enumeration verifies the adjustment identity that
//! motivates the variant generators.
//!
//! Individual training runs are single-threaded and deterministic under
//! their seed. Suites of runs (ablations, threshold sweeps) dispatch
//! independent jobs in parallel via rayon when the default `parallel`
//! feature is enabled, and fall back to sequential dispatch otherwise;
//! results are identical either way.

pub mod cdl;
pub mod config;
pub mod data;
pub mod error;
pub mod factor;
pub mod icl;
pub mod linalg;
pub mod nn;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod scm;
pub mod trainer;

pub use error::{CoreError, Result};
pub use linalg::Matrix;
