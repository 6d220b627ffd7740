//! MldrNet and the three single-path baselines.
//!
//! MldrNet is a trunk of conv stages (conv → ReLU → 2×2 max-pool) with a
//! classification branch tapped after every stage:
//!
//! ```text
//! 1×1 conv (reduce) → ReLU → global avg-pool → flatten
//!   → linear(branch_hidden) → ReLU → [dropout] → linear(n_classes)
//! ```
//!
//! The branch logits are fused (`concat`/`min`/`max`/`mean`); `concat` is
//! followed by a linear map back to `n_classes`.

pub mod checkpoint;
mod config;
mod network;

pub use checkpoint::{load, save, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Arch, ModelConfig, StageShape};
pub use network::{Model, ModelOutput, ModelProbe};
