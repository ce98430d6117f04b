//! Safe model-predictive reinforcement learning on 2D navigation tasks.
//!
//! The pipeline has three stages:
//!
//! 1. **Demonstrations** — hand controllers ([`demos`]) or unsupervised
//!    skill discovery ([`unsup`]) fill a partitioned dataset with
//!    goal-reaching and constraint-violating episodes.
//! 2. **Offline learning** — [`models`] fits a probabilistic dynamics
//!    ensemble, a value ensemble, a safe-set classifier, a constraint
//!    estimator and a goal indicator on that dataset.
//! 3. **Online control** — [`planner`] runs chance-constrained
//!    cross-entropy planning over sampled model rollouts, and
//!    [`safe_loop`] wraps it in an episode loop with model updates and
//!    optimistic forgetting of low-return episode windows.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability, and the `saferl` binary for file-based runs.

pub mod config;
pub mod dataset;
pub mod demos;
pub mod env;
pub mod error;
pub mod geom;
pub mod models;
pub mod nn;
pub mod planner;
pub mod report;
pub mod safe_loop;
// pub mod unsup;

pub use error::{Error, Result};
