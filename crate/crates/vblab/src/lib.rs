//! A desk-scale laboratory for noise-tolerant classification losses.
//!
//! The central quantity is the *variation ratio* of a loss: the ratio
//! between the largest and smallest magnitude its gradient can take as the
//! predicted label probability moves across `(0, 1)`. Losses with a small
//! ratio treat every sample about equally and resist label noise; losses
//! with an unbounded ratio (cross entropy) pour gradient into confidently
//! mispredicted samples, which is exactly what makes them memorize wrong
//! labels. This crate implements a family of losses whose ratio is a tunable
//! hyperparameter, plus everything needed to study them end to end:
//!
//! - [`losses`]: per-sample loss values and exact gradients.
//! - [`analysis`]: variation ratios, noise-robustness bounds and
//!   asymmetry certificates, each backed by a brute-force oracle.
//! - [`noise`]: symmetric, circular and instance-dependent label
//!   corruption with reproducible RNG streams.
//! - [`data`]: Gaussian-blob generation, IDX image ingestion, stratified
//!   splitting and standardization.
//! - [`nn`]: a small MLP with exact backprop and SGD (momentum, L1 decay,
//!   cosine annealing).
//! - [`trainer`]: corrupt → train → evaluate experiment orchestration with
//!   accuracy/ECE metrics and hyperparameter sweeps.
//! - [`rng`]: the seed/stream-splitting contract everything above shares.

pub mod analysis;
pub mod data;
pub mod losses;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod trainer;

/// The long-form guide, included verbatim from `book/src` so that every
/// code block in the book compiles and runs as a doc-test of this crate.
/// Read it rendered with `mdbook serve book` or right here in rustdoc.
pub mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}

    #[doc = include_str!("../../../book/src/losses.md")]
    pub mod loss_catalog {}

    #[doc = include_str!("../../../book/src/certification.md")]
    pub mod certification {}

    #[doc = include_str!("../../../book/src/noise.md")]
    pub mod label_noise {}

    #[doc = include_str!("../../../book/src/data.md")]
    pub mod datasets {}

    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}

    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod command_line {}
}
