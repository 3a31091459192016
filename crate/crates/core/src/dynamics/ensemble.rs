use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::fit::{fit_gaussian, nll_and_grad, FitConfig};
use crate::approx::{
    concat_cols, layer_sizes, standard_normal_matrix, Activation, Adam, GaussianBatch, GradientRecord, Mlp,
    Standardizer,
};
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::traits::{MeanModel, StepModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(s_t, a_t) -> (s_{t+1} - s_t, r_t)`
    Forward,
    /// `(s_t, a_{t-1}) -> (s_{t-1} - s_t, r_{t-1})`
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub fit: FitConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            activation: Activation::Swish,
            lr: 1e-3,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub skipped: bool,
    /// Mean over members of the restored holdout NLL.
    pub holdout_loss: f64,
    pub member_history: Vec<Vec<f64>>,
}

/// Bootstrapped ensemble of probabilistic networks over `[Δstate, reward]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub direction: Direction,
    pub state_dim: usize,
    pub action_dim: usize,
    members: Vec<Mlp>,
    optimizers: Vec<Adam>,
    input_norm: Standardizer,
    trained: bool,
    config: EnsembleConfig,
}

/// Network inputs and targets extracted from transitions for one direction.
pub fn model_dataset(direction: Direction, data: &[&Transition], state_dim: usize, action_dim: usize) -> (Array2<f64>, Array2<f64>) {
    let n = data.len();
    let mut x = Array2::zeros((n, state_dim + action_dim));
    let mut y = Array2::zeros((n, state_dim + 1));
    for (i, t) in data.iter().enumerate() {
        let (cur, other) = match direction {
            Direction::Forward => (&t.state, &t.next_state),
            Direction::Backward => (&t.next_state, &t.state),
        };
        for j in 0..state_dim {
            x[[i, j]] = cur[j];
            y[[i, j]] = other[j] - cur[j];
        }
        for j in 0..action_dim {
            x[[i, state_dim + j]] = t.action[j];
        }
        y[[i, state_dim]] = t.reward;
    }
    (x, y)
}

impl Ensemble {
    pub fn new<R: Rng + ?Sized>(
        direction: Direction,
        state_dim: usize,
        action_dim: usize,
        config: EnsembleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.members < 2 {
            return Err(Error::Config(format!("ensemble needs >= 2 members, got {}", config.members)));
        }
        let sizes = layer_sizes(state_dim + action_dim, &config.hidden, 2 * (state_dim + 1));
        let members = (0..config.members)
            .map(|_| Mlp::new(&sizes, config.activation, rng))
            .collect::<Result<Vec<_>>>()?;
        let optimizers = members.iter().map(|m| Adam::new(m.params().len(), config.lr)).collect();
        Ok(Self {
            direction,
            state_dim,
            action_dim,
            members,
            optimizers,
            input_norm: Standardizer::identity(state_dim + action_dim),
            trained: false,
            config,
        })
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn member(&self, i: usize) -> &Mlp {
        &self.members[i]
    }

    pub fn member_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.members[i]
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn input_norm(&self) -> &Standardizer {
        &self.input_norm
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    /// Mark as usable without training; for hand-set parameters in tests and stubs.
    pub fn set_trained(&mut self, norm: Standardizer) {
        self.input_norm = norm;
        self.trained = true;
    }

    /// Batch-mean NLL of one member on raw inputs, with its parameter gradient.
    pub fn member_loss_and_grad(
        &self,
        member: usize,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
    ) -> Result<(f64, GradientRecord)> {
        nll_and_grad(&self.members[member], &self.input_norm, inputs, targets)
    }

    /// Refit every member on its own bootstrap draw of `train`; early-stop on `holdout`.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        train: &[&Transition],
        holdout: &[&Transition],
        rng: &mut R,
    ) -> Result<EnsembleReport> {
        if train.is_empty() || holdout.is_empty() || train.len() < holdout.len() {
            log::warn!(
                "{:?} model: {} training vs {} holdout samples, skipping refit",
                self.direction,
                train.len(),
                holdout.len()
            );
            return Ok(EnsembleReport {
                skipped: true,
                ..Default::default()
            });
        }
        let (x, y) = model_dataset(self.direction, train, self.state_dim, self.action_dim);
        let (hx, hy) = model_dataset(self.direction, holdout, self.state_dim, self.action_dim);
        self.input_norm = Standardizer::fit(x.view());
        let what = match self.direction {
            Direction::Forward => "forward model",
            Direction::Backward => "backward model",
        };
        let n = x.nrows();
        let mut report = EnsembleReport::default();
        let mut total = 0.0;
        for (net, opt) in self.members.iter_mut().zip(self.optimizers.iter_mut()) {
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let r = fit_gaussian(net, opt, &self.input_norm, &x, &y, &boot, (&hx, &hy), &self.config.fit, what, rng)?;
            total += r.best;
            report.member_history.push(r.history);
        }
        report.holdout_loss = total / self.members.len() as f64;
        self.trained = true;
        Ok(report)
    }

    fn require_trained(&self) -> Result<()> {
        if !self.trained {
            return Err(Error::State(format!("{:?} ensemble used before training", self.direction)));
        }
        Ok(())
    }

    /// Uniform member assignment for `n` predictions.
    pub fn sample_members<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.members.len())).collect()
    }

    /// Gaussian heads of one member for raw `(state, action)` rows.
    pub fn member_heads(&self, member: usize, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<GaussianBatch> {
        let x = self.input_norm.transform(concat_cols(states, actions).view());
        Ok(GaussianBatch::from_output(&self.members[member].forward_batch(x.view())?))
    }

    /// Each row goes through a uniformly drawn member; returns `(state + Δ, reward)`.
    /// With `deterministic` the member mean is used instead of a sample.
    pub fn predict_batch<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.require_trained()?;
        let n = states.nrows();
        let d = self.state_dim;
        let assign = self.sample_members(n, rng);
        let noise = if deterministic {
            Array2::zeros((n, d + 1))
        } else {
            standard_normal_matrix(rng, n, d + 1)
        };
        let mut next = states.to_owned();
        let mut reward = Array1::zeros(n);
        for m in 0..self.members.len() {
            let rows: Vec<usize> = (0..n).filter(|&i| assign[i] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let heads = self.member_heads(m, states.select(Axis(0), &rows).view(), actions.select(Axis(0), &rows).view())?;
            for (k, &i) in rows.iter().enumerate() {
                for j in 0..=d {
                    let v = heads.mean[[k, j]] + (0.5 * heads.log_var[[k, j]]).exp() * noise[[i, j]];
                    if j < d {
                        next[[i, j]] += v;
                    } else {
                        reward[i] = v;
                    }
                }
            }
        }
        Ok((next, reward))
    }

    pub fn predict<R: Rng + ?Sized>(&self, state: &[f64], action: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Input(e.to_string()))?;
        let a = ArrayView2::from_shape((1, action.len()), action).map_err(|e| Error::Input(e.to_string()))?;
        let (next, r) = self.predict_batch(s, a, false, rng)?;
        Ok((next.row(0).to_vec(), r[0]))
    }

    /// Ensemble-averaged mean prediction of `[Δstate, reward]`.
    pub fn mean_delta(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.require_trained()?;
        let mut acc = Array2::zeros((states.nrows(), self.state_dim + 1));
        for m in 0..self.members.len() {
            acc += &self.member_heads(m, states, actions)?.mean;
        }
        Ok(acc / self.members.len() as f64)
    }

    /// Reward channel of one member at `(states, actions)`, reparameterized with `eps`,
    /// and its gradient with respect to the states and the actions. With `reparam` off the
    /// reward is still sampled but contributes no gradient.
    pub fn reward_with_input_grad(
        &self,
        member: usize,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        eps: &Array1<f64>,
        reparam: bool,
    ) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
        let d = self.state_dim;
        let n = states.nrows();
        let x = self.input_norm.transform(concat_cols(states, actions).view());
        let (out, cache) = self.members[member].forward_cached(x.view())?;
        let heads = GaussianBatch::from_output(&out);
        let sd = heads.log_var.column(d).mapv(|lv| (0.5 * lv).exp());
        let r = &heads.mean.column(d) + &(&sd * eps);
        if !reparam {
            return Ok((r, Array2::zeros((n, d)), Array2::zeros((n, self.action_dim))));
        }
        let mut d_mean = Array2::zeros((n, d + 1));
        let mut d_lv = Array2::zeros((n, d + 1));
        d_mean.column_mut(d).fill(1.0);
        d_lv.column_mut(d).assign(&(0.5 * &sd * eps));
        let d_out = heads.backprop(d_mean.view(), d_lv.view());
        let d_x = self.input_norm.backprop(&self.members[member].input_gradient(&cache, d_out.view()));
        Ok((r, d_x.slice(s![.., ..d]).to_owned(), d_x.slice(s![.., d..]).to_owned()))
    }
}

impl StepModel for Ensemble {
    fn step_batch(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.predict_batch(states, actions, false, rng)
    }
}

impl MeanModel for Ensemble {
    fn mean_delta(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ensemble::mean_delta(self, states, actions)
    }
}
