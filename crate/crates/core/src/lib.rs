//! Rollout down-sampling for group-relative policy optimization.
//!
//! Generating many rollouts per prompt is cheap when batched; updating on all
//! of them is not. This crate trains on a chosen subset of each group:
//!
//! - [`selection`]: down-sampling rules, including the `O(n log n)`
//!   max-variance rule and an exhaustive oracle.
//! - [`objective`]: subset-normalized advantages and the clipped surrogate
//!   with its exact gradient.
//! - [`policy_env`]: a small verifiable-reward task with a log-linear policy.
//! - [`trainer`]: the generate / select / update loop, comparisons and sweeps.
//! - [`costmodel`]: simulated iteration time and the speedup metric.
//! - [`cli`]: the `pods` command-line driver and its file formats.

pub mod cli;
pub mod costmodel;
pub mod curve;
pub mod error;
pub mod objective;
pub mod optim;
pub mod policy_env;
pub mod selection;
pub mod trainer;

pub use costmodel::{speedup_ratio, CostModelParams};
pub use curve::{CurvePoint, TrainingCurve};
pub use error::{PodsError, Result};
pub use objective::ClipConfig;
pub use selection::{DownSampleRule, RewardVector, RuleKind, SelectionResult};
pub use trainer::{train, Strategy, TrainConfig, Trainer};
