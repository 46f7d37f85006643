//! Continual learning with saliency-masked episodic storage and
//! associative-memory completion of the dropped channels.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod am;
pub mod error;
pub mod math;
pub mod model;
pub mod replay;
pub mod saliency;
pub mod stream;
pub mod trainer;

pub use am::{AmConfig, AmKind, AssociativeMemory, Cue};
pub use error::{Result, SharcError};
pub use math::{Matrix, RngStream, Tensor3};
pub use model::FeatureMap;
pub use replay::{Budget, EpisodicBuffer, Strategy};
pub use saliency::SparseFeatureMap;
pub use trainer::{run_experiment, ExperimentConfig, RunResult, Scenario};
