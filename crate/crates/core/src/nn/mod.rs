//! Minimal dense neural-network kernel: an MLP with explicit
//! backpropagation, classification/divergence losses, SGD with momentum,
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod losses;
pub mod mlp;
pub mod optim;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use losses::{bce_with_logits, cross_entropy, kl_divergence, CrossEntropyOut};
pub use mlp::{CheckpointMeta, Forward, Grads, Head, Mlp};
pub use optim::SgdMomentum;
