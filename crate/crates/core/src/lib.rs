//! Monotonic alignment regularization for attention-based sequence
//! transducers.
//!
//! The crate has two halves. [`align`] is the regularizer itself: centroids
//! of attention columns, the margin hinge loss over consecutive frames, its
//! subgradient, and diagnostics. Everything else exists to watch that loss
//! act on a real (if tiny) model: a tape-based reverse-mode engine
//! ([`autodiff`]), a synthetic monotonic transduction corpus ([`data`]), a
//! location-sensitive attention encoder/decoder ([`model`]), and a
//! deterministic training and λ-sweep harness with stability metrics
//! ([`train`]).

pub mod align;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod gradcheck;
pub mod model;
pub mod numfmt;
pub mod train;

pub use align::{
    alignment_loss, alignment_loss_grad, centroids, monotonicity_report, AlignConfig, AlignError,
    AlignmentMatrix, CentroidSeries, MonotonicityReport,
};
pub use autodiff::{finite_diff_check, AutodiffError, Tape, Tensor, Var};
pub use data::{Dataset, DatasetConfig, Example, SymbolTable};
pub use model::{ForwardResult, ModelConfig, ToyModelParams};
pub use train::{SweepReport, TrainConfig, TrainLog};
