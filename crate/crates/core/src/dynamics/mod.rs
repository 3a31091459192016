//! Bi-directional probabilistic ensembles, the backward policy and model rollouts.

mod backward_policy;
mod ensemble;
mod fit;
mod rollout;

pub use backward_policy::{backward_policy_dataset, BackwardPolicy};
pub use ensemble::{model_dataset, Direction, Ensemble, EnsembleConfig, EnsembleReport};
pub use fit::{fit_gaussian, nll, nll_and_grad, FitConfig, FitReport};
pub use rollout::{backward_rollout, forward_rollout, RolloutBatch};
