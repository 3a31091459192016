//! Backward imitation and forward reinforcement: a model-based RL loop that imitates
//! reversed rollouts of a learned backward model and reinforces the policy with
//! soft actor-critic on forward model rollouts.

pub mod agent;
pub mod approx;
pub mod buffers;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod orchestrator;
pub mod theory;
pub mod traits;
pub mod vgan;

pub use error::{Error, Result};
