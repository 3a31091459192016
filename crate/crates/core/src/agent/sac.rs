use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::StochasticPolicy;
use crate::approx::{concat_cols, layer_sizes, Activation, GradientRecord, Mlp};
use crate::envs::{EnvSpec, Transition};
use crate::error::{check_dim, Result};
use crate::traits::StateValue;

/// Column-stacked minibatch of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct SacBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 where the next state is terminal.
    pub terminal: Array1<f64>,
}

impl SacBatch {
    pub fn from_transitions(data: &[&Transition]) -> Result<Self> {
        let n = data.len();
        let sd = data.first().map_or(0, |t| t.state.len());
        let ad = data.first().map_or(0, |t| t.action.len());
        let mut b = Self {
            states: Array2::zeros((n, sd)),
            actions: Array2::zeros((n, ad)),
            rewards: Array1::zeros(n),
            next_states: Array2::zeros((n, sd)),
            terminal: Array1::zeros(n),
        };
        for (i, t) in data.iter().enumerate() {
            check_dim(sd, t.state.len())?;
            check_dim(sd, t.next_state.len())?;
            check_dim(ad, t.action.len())?;
            b.states.row_mut(i).assign(&ndarray::aview1(&t.state));
            b.next_states.row_mut(i).assign(&ndarray::aview1(&t.next_state));
            b.actions.row_mut(i).assign(&ndarray::aview1(&t.action));
            b.rewards[i] = t.reward;
            b.terminal[i] = if t.terminal { 1.0 } else { 0.0 };
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// One-step soft Bellman target `r + gamma (1 - terminal) V_target(s')`.
pub fn q_target(rewards: &Array1<f64>, terminal: &Array1<f64>, v_next: &Array1<f64>, gamma: f64) -> Array1<f64> {
    rewards + &(gamma * &(1.0 - terminal) * v_next)
}

/// `KL(π || exp((Q - V) / alpha))` for a discrete action set.
pub fn soft_policy_kl(probs: &[f64], q: &[f64], v: f64, alpha: f64) -> f64 {
    probs
        .iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p.ln() - (q - v) / alpha))
        .sum()
}

/// Two action-value networks, a state-value network and its slowly tracking copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critics {
    pub q1: Mlp,
    pub q2: Mlp,
    pub v: Mlp,
    pub v_target: Mlp,
}

fn column(x: Array2<f64>) -> Array1<f64> {
    x.index_axis_move(Axis(1), 0)
}

impl Critics {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let q_sizes = layer_sizes(spec.state_dim + spec.action_dim, hidden, 1);
        let q1 = Mlp::new(&q_sizes, activation, rng)?;
        let q2 = Mlp::new(&q_sizes, activation, rng)?;
        let v = Mlp::new(&layer_sizes(spec.state_dim, hidden, 1), activation, rng)?;
        Ok(Self {
            q1,
            q2,
            v_target: v.clone(),
            v,
        })
    }

    pub fn q(&self, which: usize, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let net = if which == 0 { &self.q1 } else { &self.q2 };
        Ok(column(net.forward_batch(concat_cols(states, actions).view())?))
    }

    pub fn q_min(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let a = self.q(0, states, actions)?;
        let b = self.q(1, states, actions)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|x, y| x.min(*y)))
    }

    /// `min(Q1, Q2)` per row with its gradient with respect to the state and the action.
    pub fn q_min_with_input_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
        let x = concat_cols(states, actions);
        let (o1, c1) = self.q1.forward_cached(x.view())?;
        let (o2, c2) = self.q2.forward_cached(x.view())?;
        let n = x.nrows();
        let mut q = Array1::zeros(n);
        let mut m1 = Array2::zeros((n, 1));
        let mut m2 = Array2::zeros((n, 1));
        for i in 0..n {
            if o1[[i, 0]] <= o2[[i, 0]] {
                q[i] = o1[[i, 0]];
                m1[[i, 0]] = 1.0;
            } else {
                q[i] = o2[[i, 0]];
                m2[[i, 0]] = 1.0;
            }
        }
        let g = self.q1.input_gradient(&c1, m1.view()) + self.q2.input_gradient(&c2, m2.view());
        let sd = states.ncols();
        Ok((
            q,
            g.slice(ndarray::s![.., ..sd]).to_owned(),
            g.slice(ndarray::s![.., sd..]).to_owned(),
        ))
    }

    pub fn value(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(column(self.v.forward_batch(states)?))
    }

    pub fn target_value(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(column(self.v_target.forward_batch(states)?))
    }

    pub fn update_target(&mut self, tau: f64) {
        self.v_target.soft_update_from(&self.v, tau);
    }
}

impl StateValue for Critics {
    fn values(&self, states: ArrayView2<'_, f64>) -> Array1<f64> {
        // dimensions were validated when the critic was built for this environment
        self.value(states).expect("value network input width")
    }
}

/// `½ mean (f(x) - y)²` for a scalar-output network, with its parameter gradient.
pub fn regression_loss_and_grad(net: &Mlp, inputs: ArrayView2<'_, f64>, targets: &Array1<f64>) -> Result<(f64, GradientRecord)> {
    check_dim(inputs.nrows(), targets.len())?;
    let (out, cache) = net.forward_cached(inputs)?;
    let n = inputs.nrows().max(1) as f64;
    let err = &out.column(0) - targets;
    let loss = 0.5 * err.mapv(|e| e * e).sum() / n;
    let d_out = (err / n).insert_axis(Axis(1));
    Ok((loss, net.backward(&cache, d_out.view(), false).0))
}

/// Q-network loss against a precomputed soft Bellman target.
pub fn q_loss_and_grad(q: &Mlp, batch: &SacBatch, target: &Array1<f64>) -> Result<(f64, GradientRecord)> {
    regression_loss_and_grad(q, concat_cols(batch.states.view(), batch.actions.view()).view(), target)
}

/// Actor objective `mean(alpha log π(ã|s) - min Q(s, ã))` with `ã` reparameterized by `eps`.
/// Returns the loss, its policy gradient and the sample's log-densities.
pub fn actor_loss_and_grad(
    policy: &StochasticPolicy,
    critics: &Critics,
    states: ArrayView2<'_, f64>,
    eps: Array2<f64>,
    alpha: f64,
) -> Result<(f64, GradientRecord, Array1<f64>, Array2<f64>)> {
    let sample = policy.sample_with_noise(states, eps)?;
    let (q, _, dq_da) = critics.q_min_with_input_grad(states, sample.actions.view())?;
    let n = states.nrows().max(1) as f64;
    let loss = (alpha * &sample.log_prob - &q).sum() / n;
    let d_logp = Array1::from_elem(states.nrows(), alpha / n);
    let d_action = -dq_da / n;
    let grad = policy.backprop_sample(&sample, &d_logp, &d_action);
    Ok((loss, grad, sample.log_prob, sample.actions))
}

/// Temperature loss `-log_alpha * mean(log π + target_entropy)` and its derivative.
pub fn temperature_loss_and_grad(log_alpha: f64, log_prob: &Array1<f64>, target_entropy: f64) -> (f64, f64) {
    let m = log_prob.mean().unwrap_or(0.0) + target_entropy;
    (-log_alpha * m, -m)
}
