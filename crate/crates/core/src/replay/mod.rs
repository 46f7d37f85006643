//! Episodic buffer and the replay strategies that consume it.

mod buffer;
mod projection;
mod strategy;

pub use buffer::{sample_indices, Budget, BufferItem, EpisodicBuffer};
pub use projection::{agem_project, gem_project};
pub use strategy::{strategy_step, StepContext, StepOutcome, Strategy};
