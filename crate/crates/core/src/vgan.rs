//! Least-squares GAN over states whose generator is additionally pushed toward states the
//! critic and the forward model consider valuable.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agent::{Critics, StochasticPolicy};
use crate::approx::{layer_sizes, standard_normal_matrix, Activation, Adam, GradientRecord, Mlp, Standardizer};
use crate::dynamics::Ensemble;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    Off,
    /// Adversarial objective only (no value term).
    Vanilla,
    Value,
}

impl GanMode {
    pub const ALL: [GanMode; 3] = [GanMode::Off, GanMode::Vanilla, GanMode::Value];

    pub fn name(self) -> &'static str {
        match self {
            GanMode::Off => "off",
            GanMode::Vanilla => "vanilla",
            GanMode::Value => "value",
        }
    }
}

impl fmt::Display for GanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GanMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gan mode `{s}` (expected off, vanilla or value)")))
    }
}

/// Linear ramp of the value weighting from `start` at epoch 1 to `end` at epoch `horizon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: usize,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            start: 0.2,
            end: 0.95,
            horizon: 10,
        }
    }
}

impl AlphaSchedule {
    pub fn value(&self, epoch: usize) -> f64 {
        if self.horizon <= 1 || epoch >= self.horizon {
            return self.end;
        }
        let e = epoch.max(1);
        self.start + (e - 1) as f64 / (self.horizon - 1) as f64 * (self.end - self.start)
    }
}

/// Per-state value signal `L_v(s)` and its gradient with respect to `s`.
pub trait ValueSignal {
    fn value_and_grad(&self, states: ArrayView2<'_, f64>, alpha: f64, rng: &mut dyn RngCore) -> Result<(Array1<f64>, Array2<f64>)>;
}

/// `alpha Q(s, π(s)) + (1 - alpha) r(s, π(s))` with `π(s)` the deterministic policy action,
/// `Q = min(Q1, Q2)` and `r` the reward head of one uniformly drawn forward-model member.
pub struct CriticValue<'a> {
    pub policy: &'a StochasticPolicy,
    pub critics: &'a Critics,
    pub model: &'a Ensemble,
    /// Differentiate through the reward sample; otherwise it is treated as a constant.
    pub reparameterize: bool,
}

impl ValueSignal for CriticValue<'_> {
    fn value_and_grad(&self, states: ArrayView2<'_, f64>, alpha: f64, rng: &mut dyn RngCore) -> Result<(Array1<f64>, Array2<f64>)> {
        let (actions, back) = self.policy.deterministic_with_state_grad(states)?;
        let (q, dq_ds, dq_da) = self.critics.q_min_with_input_grad(states, actions.view())?;
        let member = rng.random_range(0..self.model.num_members());
        let eps = Array1::from(crate::approx::standard_normal(rng, states.nrows()));
        let (r, dr_ds, dr_da) = self.model.reward_with_input_grad(member, states, actions.view(), &eps, self.reparameterize)?;
        let value = alpha * &q + &((1.0 - alpha) * &r);
        let d_a = alpha * &dq_da + &((1.0 - alpha) * &dr_da);
        let grad = alpha * &dq_ds + &((1.0 - alpha) * &dr_ds) + back(&d_a);
        Ok((value, grad))
    }
}

/// Fixed critic and reward values; no gradient.
#[derive(Clone, Copy, Debug)]
pub struct ConstantValue {
    pub q: f64,
    pub reward: f64,
}

impl ValueSignal for ConstantValue {
    fn value_and_grad(&self, states: ArrayView2<'_, f64>, alpha: f64, _rng: &mut dyn RngCore) -> Result<(Array1<f64>, Array2<f64>)> {
        let v = alpha * self.q + (1.0 - alpha) * self.reward;
        Ok((Array1::from_elem(states.nrows(), v), Array2::zeros(states.raw_dim())))
    }
}

/// Known value function with analytic gradient, for synthetic experiments.
pub struct FnValue<F>(pub F);

impl<F> ValueSignal for FnValue<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn value_and_grad(&self, states: ArrayView2<'_, f64>, _alpha: f64, _rng: &mut dyn RngCore) -> Result<(Array1<f64>, Array2<f64>)> {
        let mut v = Array1::zeros(states.nrows());
        let mut g = Array2::zeros(states.raw_dim());
        for (i, row) in states.rows().into_iter().enumerate() {
            let (val, grad) = (self.0)(&row.to_vec());
            check_dim(states.ncols(), grad.len())?;
            v[i] = val;
            g.row_mut(i).assign(&Array1::from(grad));
        }
        Ok((v, g))
    }
}

/// Batch mean of the value signal.
pub fn value_regularizer(signal: &dyn ValueSignal, states: ArrayView2<'_, f64>, alpha: f64, rng: &mut dyn RngCore) -> Result<f64> {
    Ok(signal.value_and_grad(states, alpha, rng)?.0.mean().unwrap_or(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VganConfig {
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    /// Discriminator/generator step pairs per training call.
    pub steps: usize,
    pub reparameterize: bool,
}

impl Default for VganConfig {
    fn default() -> Self {
        Self {
            z_dim: 4,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 1e-3,
            lambda: 1e-4,
            batch_size: 128,
            steps: 50,
            reparameterize: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanReport {
    pub d_loss: f64,
    pub g_loss: f64,
    pub value: f64,
    /// Mean discriminator score on the last generated batch.
    pub d_fake: f64,
    pub d_real: f64,
}

/// Generator `z -> s` and discriminator `s -> score`, both operating on states standardized
/// with statistics of the real data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vgan {
    pub generator: Mlp,
    pub discriminator: Mlp,
    gen_opt: Adam,
    disc_opt: Adam,
    norm: Standardizer,
    config: VganConfig,
}

impl Vgan {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, config: VganConfig, rng: &mut R) -> Result<Self> {
        if config.z_dim == 0 {
            return Err(Error::Config("z_dim must be positive".into()));
        }
        let generator = Mlp::new(&layer_sizes(config.z_dim, &config.hidden, state_dim), config.activation, rng)?;
        let discriminator = Mlp::new(&layer_sizes(state_dim, &config.hidden, 1), config.activation, rng)?;
        Ok(Self {
            gen_opt: Adam::new(generator.params().len(), config.lr),
            disc_opt: Adam::new(discriminator.params().len(), config.lr),
            generator,
            discriminator,
            norm: Standardizer::identity(state_dim),
            config,
        })
    }

    pub fn config(&self) -> &VganConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn norm(&self) -> &Standardizer {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: Standardizer) {
        self.norm = norm;
    }

    pub fn latent<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        standard_normal_matrix(rng, n, self.config.z_dim)
    }

    fn denormalize(&self, g: &Array2<f64>) -> Array2<f64> {
        g * &self.norm.std + &self.norm.mean
    }

    /// Generated states in the environment's coordinates.
    pub fn generate(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.denormalize(&self.generator.forward_batch(z)?))
    }

    /// `n` generated states; rows with non-finite entries are dropped.
    pub fn sample_states<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let s = self.generate(self.latent(n, rng).view())?;
        Ok(s.rows()
            .into_iter()
            .filter(|r| r.iter().all(|v| v.is_finite()))
            .map(|r| r.to_vec())
            .collect())
    }

    /// Discriminator scores on states in the environment's coordinates.
    pub fn score(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.discriminator.forward_batch(self.norm.transform(states).view())?.index_axis_move(Axis(1), 0))
    }

    /// `mean (D(s) - 1)^2 + mean D(G(z))^2` with its discriminator gradient.
    pub fn discriminator_loss_and_grad(&self, real: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> Result<(f64, GradientRecord)> {
        let xr = self.norm.transform(real);
        let xf = self.generator.forward_batch(z)?;
        let (or, cr) = self.discriminator.forward_cached(xr.view())?;
        let (of, cf) = self.discriminator.forward_cached(xf.view())?;
        let nr = real.nrows().max(1) as f64;
        let nf = z.nrows().max(1) as f64;
        let loss = or.mapv(|d| (d - 1.0).powi(2)).sum() / nr + of.mapv(|d| d * d).sum() / nf;
        let mut grad = self.discriminator.backward(&cr, or.mapv(|d| 2.0 * (d - 1.0) / nr).view(), false).0;
        grad.add_assign(&self.discriminator.backward(&cf, of.mapv(|d| 2.0 * d / nf).view(), false).0);
        Ok((loss, grad))
    }

    /// `mean (D(G(z)) - 1)^2 - lambda mean L_v(G(z))` with its generator gradient. The value
    /// signal is evaluated on the generated states in environment coordinates. Also returns
    /// the mean value term.
    pub fn generator_loss_and_grad(
        &self,
        z: ArrayView2<'_, f64>,
        signal: &dyn ValueSignal,
        alpha: f64,
        lambda: f64,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, GradientRecord, f64)> {
        let n = z.nrows().max(1) as f64;
        let (g, gcache) = self.generator.forward_cached(z)?;
        let (d, dcache) = self.discriminator.forward_cached(g.view())?;
        let adv = d.mapv(|v| (v - 1.0).powi(2)).sum() / n;
        let mut d_g = self.discriminator.input_gradient(&dcache, d.mapv(|v| 2.0 * (v - 1.0) / n).view());
        let mut value = 0.0;
        if lambda != 0.0 {
            let states = self.denormalize(&g);
            let (lv, dlv) = signal.value_and_grad(states.view(), alpha, rng)?;
            value = lv.mean().unwrap_or(0.0);
            d_g = d_g - &(dlv * &self.norm.std * (lambda / n));
        }
        let grad = self.generator.backward(&gcache, d_g.view(), false).0;
        Ok((adv - lambda * value, grad, value))
    }

    pub fn discriminator_step(&mut self, real: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> Result<f64> {
        if real.nrows() == 0 {
            return Err(Error::Input("discriminator step needs real states".into()));
        }
        let (loss, grad) = self.discriminator_loss_and_grad(real, z)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "discriminator",
                batch: self.disc_opt.steps() as usize,
            });
        }
        self.disc_opt.step(self.discriminator.params_mut(), &grad)?;
        Ok(loss)
    }

    pub fn generator_step(
        &mut self,
        z: ArrayView2<'_, f64>,
        signal: &dyn ValueSignal,
        alpha: f64,
        lambda: f64,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, f64)> {
        let (loss, grad, value) = self.generator_loss_and_grad(z, signal, alpha, lambda, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "generator",
                batch: self.gen_opt.steps() as usize,
            });
        }
        self.gen_opt.step(self.generator.params_mut(), &grad)?;
        Ok((loss, value))
    }

    /// `config.steps` alternating discriminator/generator updates against minibatches of
    /// `real`. The standardization is refit to `real` first. `Vanilla` ignores the value
    /// signal; `Off` does nothing.
    pub fn train(
        &mut self,
        real: ArrayView2<'_, f64>,
        mode: GanMode,
        signal: &dyn ValueSignal,
        alpha: f64,
        rng: &mut dyn RngCore,
    ) -> Result<GanReport> {
        let mut report = GanReport::default();
        if mode == GanMode::Off || real.nrows() == 0 {
            return Ok(report);
        }
        check_dim(self.state_dim(), real.ncols())?;
        self.norm = Standardizer::fit(real);
        let lambda = if mode == GanMode::Value { self.config.lambda } else { 0.0 };
        let b = self.config.batch_size.min(real.nrows()).max(1);
        for _ in 0..self.config.steps {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..real.nrows())).collect();
            let rb = real.select(Axis(0), &idx);
            let z = self.latent(b, rng);
            report.d_loss = self.discriminator_step(rb.view(), z.view())?;
            let z = self.latent(b, rng);
            let (g, v) = self.generator_step(z.view(), signal, alpha, lambda, rng)?;
            report.g_loss = g;
            report.value = v;
            report.d_real = self.score(rb.view())?.mean().unwrap_or(0.0);
            let fake = self.generator.forward_batch(z.view())?;
            report.d_fake = self
                .discriminator
                .forward_batch(fake.view())?
                .mean()
                .unwrap_or(0.0);
        }
        Ok(report)
    }
}

/// Outcome of [`planted_value_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedReport {
    pub mean_value_real: f64,
    pub mean_value_generated: f64,
    pub mean_score_generated: f64,
    pub mean_score_real: f64,
}

/// 2-D sanity experiment: real states are standard normal, the value is a Gaussian bump
/// centred at `(1, 1)`; a value-mode GAN is trained for `steps` step pairs and its samples
/// are scored by the known value and the discriminator.
pub fn planted_value_experiment(seed: u64, steps: usize, lambda: f64) -> Result<PlantedReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bump = |s: &[f64]| {
        let (dx, dy) = (s[0] - 1.0, s[1] - 1.0);
        let v = (-(dx * dx + dy * dy) / 2.0).exp();
        (v, vec![-dx * v, -dy * v])
    };
    let real = standard_normal_matrix(&mut rng, 4096, 2);
    let config = VganConfig {
        hidden: vec![32, 32],
        lambda,
        steps,
        batch_size: 128,
        ..VganConfig::default()
    };
    let mut gan = Vgan::new(2, config, &mut rng)?;
    gan.train(real.view(), GanMode::Value, &FnValue(bump), 1.0, &mut rng)?;
    let fake = gan.generate(gan.latent(4096, &mut rng).view())?;
    let mean_value = |x: &Array2<f64>| x.rows().into_iter().map(|r| bump(&r.to_vec()).0).sum::<f64>() / x.nrows() as f64;
    Ok(PlantedReport {
        mean_value_real: mean_value(&real),
        mean_value_generated: mean_value(&fake),
        mean_score_generated: gan.score(fake.view())?.mean().unwrap_or(0.0),
        mean_score_real: gan.score(real.view())?.mean().unwrap_or(0.0),
    })
}
