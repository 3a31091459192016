use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::fit::{fit_gaussian, FitConfig, FitReport};
use crate::approx::{layer_sizes, standard_normal_matrix, Activation, Adam, GaussianBatch, Mlp, Standardizer};
use crate::envs::{EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::traits::ActionSource;

/// Gaussian `q(a_{t-1} | s_t)`: which action most plausibly led into a state.
/// Samples are clipped to the action box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardPolicy {
    net: Mlp,
    opt: Adam,
    norm: Standardizer,
    low: Vec<f64>,
    high: Vec<f64>,
    trained: bool,
    fit: FitConfig,
}

pub fn backward_policy_dataset(data: &[&Transition], state_dim: usize, action_dim: usize) -> (Array2<f64>, Array2<f64>) {
    let mut x = Array2::zeros((data.len(), state_dim));
    let mut y = Array2::zeros((data.len(), action_dim));
    for (i, t) in data.iter().enumerate() {
        for j in 0..state_dim {
            x[[i, j]] = t.next_state[j];
        }
        for j in 0..action_dim {
            y[[i, j]] = t.action[j];
        }
    }
    (x, y)
}

impl BackwardPolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        hidden: &[usize],
        activation: Activation,
        lr: f64,
        fit: FitConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::new(&layer_sizes(spec.state_dim, hidden, 2 * spec.action_dim), activation, rng)?;
        let opt = Adam::new(net.params().len(), lr);
        Ok(Self {
            net,
            opt,
            norm: Standardizer::identity(spec.state_dim),
            low: spec.action_low.clone(),
            high: spec.action_high.clone(),
            trained: false,
            fit,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn norm(&self) -> &Standardizer {
        &self.norm
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn set_trained(&mut self, norm: Standardizer) {
        self.norm = norm;
        self.trained = true;
    }

    pub fn train<R: Rng + ?Sized>(&mut self, train: &[&Transition], holdout: &[&Transition], rng: &mut R) -> Result<FitReport> {
        if train.is_empty() || holdout.is_empty() {
            return Ok(FitReport::default());
        }
        let sd = self.net.input_dim();
        let ad = self.low.len();
        let (x, y) = backward_policy_dataset(train, sd, ad);
        let (hx, hy) = backward_policy_dataset(holdout, sd, ad);
        self.norm = Standardizer::fit(x.view());
        let sample: Vec<usize> = (0..x.nrows()).collect();
        let report = fit_gaussian(&mut self.net, &mut self.opt, &self.norm, &x, &y, &sample, (&hx, &hy), &self.fit, "backward policy", rng)?;
        self.trained = true;
        Ok(report)
    }

    pub fn heads(&self, states: ArrayView2<'_, f64>) -> Result<GaussianBatch> {
        Ok(GaussianBatch::from_output(&self.net.forward_batch(self.norm.transform(states).view())?))
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, states: ArrayView2<'_, f64>, deterministic: bool, rng: &mut R) -> Result<Array2<f64>> {
        if !self.trained {
            return Err(Error::State("backward policy used before training".into()));
        }
        let heads = self.heads(states)?;
        let mut a = heads.mean.clone();
        if !deterministic {
            let eps = standard_normal_matrix(rng, a.nrows(), a.ncols());
            a = a + &(heads.log_var.mapv(|lv| (0.5 * lv).exp()) * &eps);
        }
        for mut row in a.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = v.clamp(self.low[j], self.high[j]);
            }
        }
        Ok(a)
    }
}

impl ActionSource for BackwardPolicy {
    fn actions(&self, states: ArrayView2<'_, f64>, deterministic: bool, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        self.sample_batch(states, deterministic, rng)
    }
}
