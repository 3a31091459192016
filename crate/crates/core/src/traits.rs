//! Narrow capabilities that let prioritization, rollouts and the GAN regularizer run
//! against either the trained networks or hand-built stubs.

use ndarray::{Array1, Array2, ArrayView2};
use rand::RngCore;

use crate::error::Result;

/// `V(s)` for a batch of states (rows).
pub trait StateValue {
    fn values(&self, states: ArrayView2<'_, f64>) -> Array1<f64>;
}

/// Action selection for a batch of states.
pub trait ActionSource {
    fn actions(&self, states: ArrayView2<'_, f64>, deterministic: bool, rng: &mut dyn RngCore) -> Result<Array2<f64>>;
}

/// One sampled model step: `(next or previous states, rewards)`.
pub trait StepModel {
    fn step_batch(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, Array1<f64>)>;
}

impl<F> StateValue for F
where
    F: Fn(ArrayView2<'_, f64>) -> Array1<f64>,
{
    fn values(&self, states: ArrayView2<'_, f64>) -> Array1<f64> {
        self(states)
    }
}

/// Mean prediction of `[Δstate, reward]` for a batch of `(state, action)` rows.
pub trait MeanModel {
    fn mean_delta(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}
