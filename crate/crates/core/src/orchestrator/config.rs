use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::approx::Activation;
use crate::dynamics::{EnsembleConfig, FitConfig};
use crate::envs::env_names;
use crate::error::{Error, Result};
use crate::vgan::{AlphaSchedule, GanMode, VganConfig};

use super::schedule::ScheduleSpec;
use super::strategy::{find_preset, BackwardMode};

/// Every knob of a training run. Loaded from flat `key = value` text (TOML syntax) laid
/// over the per-environment defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Name of the preset the flags below were seeded from.
    pub preset: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Uniform-random actions for the first environment steps.
    pub random_steps: usize,
    pub eval_episodes: usize,
    /// Stop once the evaluation return reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_return: Option<f64>,

    pub model_based: bool,
    pub backward: BackwardMode,
    pub gan: GanMode,

    pub kb: ScheduleSpec,
    pub kf: ScheduleSpec,
    /// Keep backward rollouts strictly shorter than forward ones.
    pub kb_strict: bool,
    /// Percent of aggregated states kept for backward starts.
    pub top_k: f64,
    pub beta: f64,
    /// Z-score values and TD residuals before the Boltzmann draw.
    pub priority_normalization: bool,
    pub window: usize,
    /// Generated states per environment state in the aggregated collection.
    pub gan_ratio: f64,
    pub m1: usize,
    pub m2: usize,
    pub g1: usize,
    pub g2: usize,
    pub real_ratio: f64,
    pub retain_epochs: usize,
    pub capacity: usize,
    pub batch_size: usize,
    pub imitation_batch: usize,

    pub hidden: Vec<usize>,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub init_alpha: f64,
    pub auto_alpha: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_entropy: Option<f64>,

    pub model_members: usize,
    pub model_hidden: Vec<usize>,
    pub model_lr: f64,
    pub model_batch: usize,
    pub model_max_steps: usize,
    pub model_eval_every: usize,
    pub model_patience: usize,
    /// Most recent transitions used for a model refit.
    pub model_window: usize,
    pub bp_hidden: Vec<usize>,
    pub bp_lr: f64,

    pub lambda: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub e_alpha: usize,
    pub gan_z_dim: usize,
    pub gan_hidden: Vec<usize>,
    pub gan_lr: f64,
    pub gan_batch: usize,
    pub gan_steps: usize,
    pub gan_reparameterize: bool,

    /// Epochs between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub checkpoint_buffers: bool,
}

impl RunConfig {
    /// Defaults for one environment with the `bifrl` preset.
    pub fn defaults(env: &str) -> Result<Self> {
        if !env_names().contains(&env) {
            return Err(Error::Config(format!("unknown env '{env}', expected one of {:?}", env_names())));
        }
        let pendulum = env == "pendulum";
        let (steps, epochs) = if pendulum { (200, 150) } else { (1000, 50) };
        let mut c = Self {
            env: env.to_string(),
            preset: "bifrl".into(),
            seed: 0,
            epochs,
            steps_per_epoch: steps,
            random_steps: steps,
            eval_episodes: 10,
            stop_at_return: None,
            model_based: true,
            backward: BackwardMode::Imitate,
            gan: GanMode::Value,
            kb: ScheduleSpec::new(1.0, 3.0, 1, 5)?,
            kf: ScheduleSpec::new(1.0, 5.0, 1, 5)?,
            kb_strict: true,
            top_k: 10.0,
            beta: 0.7,
            priority_normalization: true,
            window: 10_000,
            gan_ratio: 1.0,
            m1: 400,
            m2: 1000,
            g1: 20,
            g2: 200,
            real_ratio: 0.05,
            retain_epochs: 1,
            capacity: 1_000_000,
            batch_size: 256,
            imitation_batch: 256,
            hidden: vec![64, 64],
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            init_alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
            model_members: 5,
            model_hidden: vec![64, 64],
            model_lr: 1e-3,
            model_batch: 256,
            model_max_steps: 200,
            model_eval_every: 25,
            model_patience: 5,
            model_window: 20_000,
            bp_hidden: vec![64, 64],
            bp_lr: 1e-3,
            lambda: if pendulum { 1e-3 } else { 1e-4 },
            alpha_start: 0.2,
            alpha_end: 0.95,
            e_alpha: 10,
            gan_z_dim: 4,
            gan_hidden: vec![64, 64],
            gan_lr: 1e-3,
            gan_batch: 128,
            gan_steps: 50,
            gan_reparameterize: true,
            checkpoint_every: 0,
            checkpoint_buffers: true,
        };
        c.apply_preset("bifrl")?;
        Ok(c)
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let p = find_preset(name)?;
        self.preset = p.name.to_string();
        self.model_based = p.model_based;
        self.backward = p.backward;
        self.gan = p.gan;
        Ok(())
    }

    /// Parse flat key-value text, then apply `overrides` (raw values, TOML syntax or bare
    /// strings). `env` and `preset` pick the defaults; every other key must name a field.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        for (k, v) in overrides {
            user.insert(k.clone(), parse_value(v));
        }
        if let Some((k, _)) = user.iter().find(|(_, v)| v.is_table()) {
            return Err(Error::Config(format!("config key '{k}' is a table; only flat key-value pairs are allowed")));
        }
        let env = match user.get("env") {
            None => "pendulum".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(v) => return Err(Error::Config(format!("env must be a string, got {v}"))),
        };
        let mut base = Self::defaults(&env)?;
        match user.get("preset") {
            None => {}
            Some(toml::Value::String(p)) => base.apply_preset(p)?,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        }
        let mut table = match toml::Value::try_from(&base) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config("defaults do not serialize to a table".into())),
        };
        for (k, v) in user {
            table.insert(k, v);
        }
        let c: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !env_names().contains(&self.env.as_str()) {
            return fail(format!("unknown env '{}'", self.env));
        }
        find_preset(&self.preset)?;
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return fail("epochs and steps_per_epoch must be positive".into());
        }
        if !(self.top_k > 0.0 && self.top_k <= 100.0) {
            return fail(format!("top_k = {} must lie in (0, 100]", self.top_k));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return fail(format!("real_ratio = {} must lie in [0, 1]", self.real_ratio));
        }
        if !(self.gan_ratio >= 0.0 && self.gan_ratio.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("gan_ratio and lambda must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.alpha_start) || !(0.0..=1.0).contains(&self.alpha_end) {
            return fail("alpha_start and alpha_end must lie in [0, 1]".into());
        }
        if self.model_members < 2 {
            return fail("model_members must be at least 2".into());
        }
        for (name, v) in [
            ("window", self.window),
            ("capacity", self.capacity),
            ("batch_size", self.batch_size),
            ("imitation_batch", self.imitation_batch),
            ("model_batch", self.model_batch),
            ("model_eval_every", self.model_eval_every),
            ("model_window", self.model_window),
            ("gan_batch", self.gan_batch),
            ("gan_z_dim", self.gan_z_dim),
            ("retain_epochs", self.retain_epochs),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
            ("model_lr", self.model_lr),
            ("bp_lr", self.bp_lr),
            ("gan_lr", self.gan_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be positive"));
            }
        }
        if let Some(t) = self.stop_at_return {
            if !t.is_finite() {
                return fail("stop_at_return must be finite".into());
            }
        }
        self.agent_config().validate()
    }

    /// Rollout lengths at `epoch`, with `k_b < k_f` enforced under `kb_strict`.
    pub fn rollout_lengths(&self, epoch: usize) -> (usize, usize) {
        let kf = self.kf.length(epoch);
        let kb = self.kb.length(epoch);
        let kb = if self.kb_strict { kb.min(kf.saturating_sub(1)) } else { kb };
        (kb, kf)
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        AlphaSchedule {
            start: self.alpha_start,
            end: self.alpha_end,
            horizon: self.e_alpha,
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden: self.hidden.clone(),
            activation: Activation::Relu,
            lr_policy: self.lr_policy,
            lr_critic: self.lr_critic,
            lr_alpha: self.lr_alpha,
            gamma: self.gamma,
            tau: self.tau,
            init_alpha: self.init_alpha,
            auto_alpha: self.auto_alpha,
            target_entropy: self.target_entropy,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            batch_size: self.model_batch,
            max_steps: self.model_max_steps,
            eval_every: self.model_eval_every,
            patience: self.model_patience,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            members: self.model_members,
            hidden: self.model_hidden.clone(),
            activation: Activation::Swish,
            lr: self.model_lr,
            fit: self.fit_config(),
        }
    }

    pub fn vgan_config(&self) -> VganConfig {
        VganConfig {
            z_dim: self.gan_z_dim,
            hidden: self.gan_hidden.clone(),
            activation: Activation::Relu,
            lr: self.gan_lr,
            lambda: self.lambda,
            batch_size: self.gan_batch,
            steps: self.gan_steps,
            reparameterize: self.gan_reparameterize,
        }
    }
}

/// A TOML value if `raw` parses as one, else the bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
