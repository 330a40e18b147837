//! Desk-scale multi-task and meta-reinforcement-learning manipulation
//! benchmark.
//!
//! The crate is organized around the benchmark pipeline:
//!
//! - [`fuzzy`]: the fuzzy constraint calculus behind the shaped (V2) rewards.
//! - [`task`]: the quasi-static manipulation simulator, its 12-task catalog,
//!   both reward versions, and scripted expert policies.
//! - [`registry`]: named task sets (MT/ML, custom, mixed-difficulty).
//! - [`vector`]: batched stepping with sync and async strategies.
//! - [`evaluation`]: multi-task and meta-learning protocols plus IQM and
//!   stratified-bootstrap aggregation.
//! - [`learn`]: MLPs with reverse-mode gradients, Adam, SAC, the multi-head
//!   multi-task variant, and PCGrad.

pub mod error;
pub mod evaluation;
pub mod fuzzy;
pub mod learn;
pub mod registry;
pub mod rng;
pub mod task;
pub mod vector;

pub use error::{Error, Result};
pub use task::{EnvConfig, Mode, Observation, RewardVersion, TaskEnv, TaskId};
