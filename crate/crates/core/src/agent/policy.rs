use std::f64::consts::{LN_2, PI};

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::approx::{
    layer_sizes, softplus, standard_normal_matrix, Activation, ForwardCache, GaussianBatch, GradientRecord, Mlp,
};
use crate::envs::EnvSpec;
use crate::error::{check_dim, Result};
use crate::traits::ActionSource;

/// Demonstration actions at the box edge are pulled in to this fraction of the half-width
/// before inverting the squash.
pub const ACTION_EDGE: f64 = 0.999;

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Tanh-squashed diagonal Gaussian policy over a box action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    net: Mlp,
    center: Array1<f64>,
    scale: Array1<f64>,
}

/// A reparameterized batch of actions with everything needed for backprop.
#[derive(Debug)]
pub struct PolicySample {
    pub heads: GaussianBatch,
    pub cache: ForwardCache,
    pub eps: Array2<f64>,
    /// Pre-squash sample `mean + std * eps`.
    pub pre: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
}

impl StochasticPolicy {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(&layer_sizes(spec.state_dim, hidden, 2 * spec.action_dim), activation, rng)?;
        Ok(Self::from_net(net, spec))
    }

    pub fn from_net(net: Mlp, spec: &EnvSpec) -> Self {
        Self {
            net,
            center: Array1::from(spec.action_center()),
            scale: Array1::from(spec.action_scale()),
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.center.len()
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn heads(&self, states: ArrayView2<'_, f64>) -> Result<GaussianBatch> {
        Ok(GaussianBatch::from_output(&self.net.forward_batch(states)?))
    }

    fn squash(&self, pre: &Array2<f64>) -> Array2<f64> {
        let mut a = pre.mapv(f64::tanh);
        a *= &self.scale;
        a += &self.center;
        a
    }

    /// Inverse of the squash, with actions pulled inside the open box.
    pub fn unsquash(&self, actions: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = &actions - &self.center;
        y /= &self.scale;
        y.mapv(|v| v.clamp(-ACTION_EDGE, ACTION_EDGE).atanh())
    }

    /// Log-density of squashed actions given the pre-squash values `pre`.
    fn log_prob_pre(&self, heads: &GaussianBatch, pre: &Array2<f64>) -> Array1<f64> {
        let d = self.action_dim();
        let log_scale: f64 = self.scale.iter().map(|k| k.ln()).sum();
        let mut out = Array1::zeros(pre.nrows());
        for i in 0..pre.nrows() {
            let mut lp = -0.5 * d as f64 * (2.0 * PI).ln() - log_scale;
            for j in 0..d {
                let (m, lv, u) = (heads.mean[[i, j]], heads.log_var[[i, j]], pre[[i, j]]);
                lp -= 0.5 * ((u - m).powi(2) * (-lv).exp() + lv) + log_one_minus_tanh_sq(u);
            }
            out[i] = lp;
        }
        out
    }

    /// Log-density of given actions (squashed space).
    pub fn log_prob(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.action_dim(), actions.ncols())?;
        let heads = self.heads(states)?;
        Ok(self.log_prob_pre(&heads, &self.unsquash(actions)))
    }

    /// Reparameterized draw with caller-provided standard-normal noise.
    pub fn sample_with_noise(&self, states: ArrayView2<'_, f64>, eps: Array2<f64>) -> Result<PolicySample> {
        check_dim(self.action_dim(), eps.ncols())?;
        let (out, cache) = self.net.forward_cached(states)?;
        let heads = GaussianBatch::from_output(&out);
        let std = heads.log_var.mapv(|lv| (0.5 * lv).exp());
        let pre = &heads.mean + &(&std * &eps);
        let actions = self.squash(&pre);
        let log_prob = self.log_prob_pre(&heads, &pre);
        Ok(PolicySample {
            heads,
            cache,
            eps,
            pre,
            actions,
            log_prob,
        })
    }

    pub fn sample(&self, states: ArrayView2<'_, f64>, rng: &mut dyn RngCore) -> Result<PolicySample> {
        let eps = standard_normal_matrix(rng, states.nrows(), self.action_dim());
        self.sample_with_noise(states, eps)
    }

    /// Backprop `d_log_prob` (per row) and `d_action` (per element) through a sample onto
    /// the policy parameters.
    pub fn backprop_sample(&self, s: &PolicySample, d_log_prob: &Array1<f64>, d_action: &Array2<f64>) -> GradientRecord {
        let n = s.pre.nrows();
        let d = self.action_dim();
        let mut d_mean = Array2::zeros((n, d));
        let mut d_lv = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                let t = s.pre[[i, j]].tanh();
                let half_sd_eps = 0.5 * (0.5 * s.heads.log_var[[i, j]]).exp() * s.eps[[i, j]];
                // d log π / du = 2 tanh(u); the Gaussian term is constant in eps-space
                let d_pre = d_log_prob[i] * 2.0 * t + d_action[[i, j]] * self.scale[j] * (1.0 - t * t);
                d_mean[[i, j]] = d_pre;
                d_lv[[i, j]] = d_pre * half_sd_eps - 0.5 * d_log_prob[i];
            }
        }
        let d_out = s.heads.backprop(d_mean.view(), d_lv.view());
        self.net.backward(&s.cache, d_out.view(), false).0
    }

    /// Squashed mean actions.
    pub fn deterministic(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.squash(&self.heads(states)?.mean))
    }

    /// Squashed mean actions with a closure that maps `dL/da` to `dL/ds`.
    pub fn deterministic_with_state_grad(
        &self,
        states: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, impl Fn(&Array2<f64>) -> Array2<f64> + '_)> {
        let (out, cache) = self.net.forward_cached(states)?;
        let d = self.action_dim();
        let mean = out.slice(ndarray::s![.., ..d]).to_owned();
        let actions = self.squash(&mean);
        let back = move |d_action: &Array2<f64>| {
            let mut d_out = Array2::zeros((mean.nrows(), 2 * d));
            Zip::from(d_out.slice_mut(ndarray::s![.., ..d]))
                .and(d_action)
                .and(&mean)
                .and_broadcast(&self.scale)
                .for_each(|o, &g, &m, &k| {
                    let t = m.tanh();
                    *o = g * k * (1.0 - t * t);
                });
            self.net.input_gradient(&cache, d_out.view())
        };
        Ok((actions, back))
    }

    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| crate::Error::Input(e.to_string()))?;
        let a = self.actions(s, deterministic, rng)?;
        Ok(a.row(0).to_vec())
    }

    /// Mean negative log-density of demonstration actions and its parameter gradient.
    pub fn imitation_loss_and_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(f64, GradientRecord)> {
        check_dim(self.action_dim(), actions.ncols())?;
        check_dim(states.nrows(), actions.nrows())?;
        let (out, cache) = self.net.forward_cached(states)?;
        let heads = GaussianBatch::from_output(&out);
        let pre = self.unsquash(actions);
        let n = states.nrows().max(1) as f64;
        let loss = -self.log_prob_pre(&heads, &pre).sum() / n;
        let mut d_mean = Array2::zeros(pre.raw_dim());
        let mut d_lv = Array2::zeros(pre.raw_dim());
        Zip::from(&mut d_mean)
            .and(&mut d_lv)
            .and(&heads.mean)
            .and(&heads.log_var)
            .and(&pre)
            .for_each(|dm, dl, &m, &lv, &u| {
                let inv = (-lv).exp();
                *dm = -(u - m) * inv / n;
                *dl = 0.5 * (1.0 - (u - m).powi(2) * inv) / n;
            });
        let d_out = heads.backprop(d_mean.view(), d_lv.view());
        Ok((loss, self.net.backward(&cache, d_out.view(), false).0))
    }
}

impl ActionSource for StochasticPolicy {
    fn actions(&self, states: ArrayView2<'_, f64>, deterministic: bool, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        if deterministic {
            self.deterministic(states)
        } else {
            Ok(self.sample(states, rng)?.actions)
        }
    }
}
