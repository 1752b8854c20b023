//! Reasoning reward-model training and motion-corrective preference
//! alignment over a synthetic video world.
//!
//! Stages: a single-dimension cold start and a pairwise hierarchical stage
//! train a toy sequence policy with group-relative policy optimization
//! ([`grpo`]); the trained scorer then drives weighted preference
//! optimization of a toy generator ([`align`]).

pub mod align;
pub mod error;
pub mod format;
pub mod grpo;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod rubric;
pub mod stages;
pub mod world;

pub use error::{Error, Result};
