//! Run configuration, the training loop and ablation sweeps.

mod ablate;
mod config;
mod trainer;

pub use ablate::{ablate, AblationAxis};
pub use config::RunConfig;
pub use trainer::Trainer;
