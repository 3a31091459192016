//! Squashed Gaussian policy, soft actor-critic with a state-value network, and behavior
//! cloning on reversed backward-rollout traces.

mod policy;
mod sac;

use ndarray::{Array1, ArrayView2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::approx::{standard_normal_matrix, Activation, Adam, GradientRecord, ParamVector};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};

pub use policy::{log_one_minus_tanh_sq, PolicySample, StochasticPolicy, ACTION_EDGE};
pub use sac::{
    actor_loss_and_grad, q_loss_and_grad, q_target, regression_loss_and_grad, soft_policy_kl,
    temperature_loss_and_grad, Critics, SacBatch,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub init_alpha: f64,
    /// Tune the temperature toward `target_entropy`; otherwise it stays at `init_alpha`.
    pub auto_alpha: bool,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            init_alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_alpha >= 0.0) || (self.auto_alpha && self.init_alpha <= 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.init_alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("need 0 <= gamma < 1 and 0 <= tau <= 1, got {} and {}", self.gamma, self.tau)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths {:?} must be non-empty and positive", self.hidden)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub actor: f64,
    pub q1: f64,
    pub q2: f64,
    pub v: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: StochasticPolicy,
    pub critics: Critics,
    policy_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    v_opt: Adam,
    log_alpha: ParamVector,
    alpha_opt: Adam,
    target_entropy: f64,
    config: AgentConfig,
    pub imitation_steps: u64,
    pub sac_steps: u64,
    pub skipped_imitation: u64,
    pub skipped_sac: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy = StochasticPolicy::new(spec, &config.hidden, config.activation, rng)?;
        let critics = Critics::new(spec, &config.hidden, config.activation, rng)?;
        Ok(Self {
            policy_opt: Adam::new(policy.net().params().len(), config.lr_policy),
            q1_opt: Adam::new(critics.q1.params().len(), config.lr_critic),
            q2_opt: Adam::new(critics.q2.params().len(), config.lr_critic),
            v_opt: Adam::new(critics.v.params().len(), config.lr_critic),
            log_alpha: ParamVector {
                values: vec![config.init_alpha.max(1e-8).ln()],
            },
            alpha_opt: Adam::new(1, config.lr_alpha),
            target_entropy: config.target_entropy.unwrap_or(-(spec.action_dim as f64)),
            policy,
            critics,
            config,
            imitation_steps: 0,
            sac_steps: 0,
            skipped_imitation: 0,
            skipped_sac: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        if self.config.auto_alpha {
            self.log_alpha.values[0].exp()
        } else {
            self.config.init_alpha
        }
    }

    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.policy.act(state, deterministic, rng)
    }

    pub fn estimate_value(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.critics.value(states)
    }

    fn apply(opt: &mut Adam, params: &mut ParamVector, grad: &GradientRecord, loss: f64, what: &'static str, step: u64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { what, batch: step as usize });
        }
        opt.step(params, grad)?;
        Ok(())
    }

    /// One behavior-cloning step on demonstration pairs. Returns `None` (and counts a skip)
    /// when there are no demonstrations.
    pub fn imitation_update(&mut self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Option<f64>> {
        if states.nrows() == 0 {
            self.skipped_imitation += 1;
            return Ok(None);
        }
        let (loss, grad) = self.policy.imitation_loss_and_grad(states, actions)?;
        Self::apply(&mut self.policy_opt, self.policy.net_mut().params_mut(), &grad, loss, "imitation", self.imitation_steps)?;
        self.imitation_steps += 1;
        Ok(Some(loss))
    }

    /// One step each for both Q networks, V, the actor and the temperature, all computed
    /// from the parameters at entry; then the target V tracks V.
    pub fn sac_update(&mut self, batch: &SacBatch, rng: &mut dyn RngCore) -> Result<Option<SacLosses>> {
        if batch.is_empty() {
            self.skipped_sac += 1;
            return Ok(None);
        }
        let step = self.sac_steps;
        let alpha = self.alpha();
        let v_next = self.critics.target_value(batch.next_states.view())?;
        let y = q_target(&batch.rewards, &batch.terminal, &v_next, self.config.gamma);
        let (l1, g1) = q_loss_and_grad(&self.critics.q1, batch, &y)?;
        let (l2, g2) = q_loss_and_grad(&self.critics.q2, batch, &y)?;

        let eps = standard_normal_matrix(rng, batch.len(), self.policy.action_dim());
        let (la, ga, log_prob, actions) = actor_loss_and_grad(&self.policy, &self.critics, batch.states.view(), eps, alpha)?;
        let v_target = self.critics.q_min(batch.states.view(), actions.view())? - &(alpha * &log_prob);
        let (lv, gv) = regression_loss_and_grad(&self.critics.v, batch.states.view(), &v_target)?;
        let (lt, gt) = temperature_loss_and_grad(self.log_alpha.values[0], &log_prob, self.target_entropy);

        Self::apply(&mut self.q1_opt, self.critics.q1.params_mut(), &g1, l1, "q1", step)?;
        Self::apply(&mut self.q2_opt, self.critics.q2.params_mut(), &g2, l2, "q2", step)?;
        Self::apply(&mut self.v_opt, self.critics.v.params_mut(), &gv, lv, "value", step)?;
        Self::apply(&mut self.policy_opt, self.policy.net_mut().params_mut(), &ga, la, "actor", step)?;
        if self.config.auto_alpha {
            let g = GradientRecord { values: vec![gt] };
            Self::apply(&mut self.alpha_opt, &mut self.log_alpha, &g, lt, "temperature", step)?;
        }
        self.critics.update_target(self.config.tau);
        self.sac_steps += 1;
        Ok(Some(SacLosses {
            actor: la,
            q1: l1,
            q2: l2,
            v: lv,
            temperature: lt,
            alpha,
            entropy: -log_prob.mean().unwrap_or(0.0),
        }))
    }
}
