use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, SacBatch, SacLosses};
use crate::buffers::{
    aggregate_states, boltzmann_sample, compute_td_priority, select_top_k, standardize, states_to_array, ReplayBuffer,
};
use crate::dynamics::{backward_rollout, forward_rollout, BackwardPolicy, Direction, Ensemble};
use crate::envs::{make_env, Env, EnvSpec, Episode, Transition};
use crate::error::{Error, Result};
use crate::theory::measure_divergences;
use crate::traits::ActionSource;
use crate::vgan::{ConstantValue, CriticValue, GanMode, Vgan};

use super::checkpoint;
use super::config::RunConfig;
use super::metrics::{MetricsRow, MetricsWriter};
use super::strategy::{backward_strategy, BackwardStrategy};

/// Upper bound on holdout transitions used for divergence measurement.
const DIVERGENCE_HOLDOUT: usize = 1000;

/// Stages of one epoch, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Collect,
    TrainModels,
    Aggregate,
    TopK,
    Boltzmann,
    BackwardRollouts,
    Imitation,
    ForwardRollouts,
    Sac,
    Divergence,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Everything a run needs to continue bit-identically; this is what checkpoints hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub config: RunConfig,
    pub agent: Agent,
    pub forward: Ensemble,
    pub backward: Ensemble,
    pub backward_policy: BackwardPolicy,
    pub vgan: Vgan,
    pub d_env: ReplayBuffer<Transition>,
    /// Backward-rollout transitions, one chunk per retained epoch.
    pub d_b: VecDeque<Vec<Transition>>,
    /// Forward-rollout transitions, one chunk per retained epoch.
    pub d_f: VecDeque<Vec<Transition>>,
    pub episode: Episode,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub env_steps: u64,
    pub rows: Vec<MetricsRow>,
    /// False when the checkpoint was written without replay data.
    pub has_buffers: bool,
}

/// Mean and population standard deviation of deterministic-policy episode returns.
pub fn evaluate_policy(
    policy: &dyn ActionSource,
    env: &dyn Env,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Ok((0.0, 0.0));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut ep = Episode::reset(env, rng);
        loop {
            let s = Array2::from_shape_vec((1, ep.state.len()), ep.state.clone())
                .map_err(|e| Error::Input(e.to_string()))?;
            let a = policy.actions(s.view(), true, rng)?;
            let (_, done) = ep.advance(env, a.row(0).as_slice().unwrap_or(&a.row(0).to_vec()), rng)?;
            if let Some(ret) = done {
                returns.push(ret);
                break;
            }
        }
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

fn push_chunk(buf: &mut VecDeque<Vec<Transition>>, chunk: Vec<Transition>, retain: usize) {
    buf.push_back(chunk);
    while buf.len() > retain {
        buf.pop_front();
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Rows `idx` of `states` as an array.
fn pick(states: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    states.select(Axis(0), idx)
}

/// The full training loop over one environment.
pub struct Trainer {
    pub state: TrainingState,
    env: Box<dyn Env>,
    strategy: Box<dyn BackwardStrategy>,
    trace: Vec<Stage>,
    stage_started: Option<Instant>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = make_env(&config.env)?;
        let spec = env.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = Agent::new(&spec, config.agent_config(), &mut rng)?;
        let ens = config.ensemble_config();
        let forward = Ensemble::new(Direction::Forward, spec.state_dim, spec.action_dim, ens.clone(), &mut rng)?;
        let backward = Ensemble::new(Direction::Backward, spec.state_dim, spec.action_dim, ens, &mut rng)?;
        let backward_policy = BackwardPolicy::new(
            &spec,
            &config.bp_hidden,
            crate::approx::Activation::Swish,
            config.bp_lr,
            config.fit_config(),
            &mut rng,
        )?;
        let vgan = Vgan::new(spec.state_dim, config.vgan_config(), &mut rng)?;
        let episode = Episode::reset(env.as_ref(), &mut rng);
        let state = TrainingState {
            d_env: ReplayBuffer::new(config.capacity),
            d_b: VecDeque::new(),
            d_f: VecDeque::new(),
            agent,
            forward,
            backward,
            backward_policy,
            vgan,
            episode,
            rng,
            epoch: 0,
            env_steps: 0,
            rows: Vec::new(),
            has_buffers: true,
            config,
        };
        Self::from_state(state)
    }

    pub fn from_state(state: TrainingState) -> Result<Self> {
        state.config.validate()?;
        let env = make_env(&state.config.env)?;
        let strategy = backward_strategy(state.config.backward);
        Ok(Self {
            state,
            env,
            strategy,
            trace: Vec::new(),
            stage_started: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.state.config
    }

    pub fn spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    /// Stages executed by the most recent epoch.
    pub fn last_trace(&self) -> &[Stage] {
        &self.trace
    }

    pub fn is_finished(&self) -> bool {
        let c = &self.state.config;
        let reached = match (c.stop_at_return, self.state.rows.last()) {
            (Some(t), Some(r)) => r.eval_return_mean >= t,
            _ => false,
        };
        reached || self.state.epoch >= c.epochs
    }

    fn enter(&mut self, stage: Stage) {
        self.finish_stage();
        log::debug!("epoch {} stage {stage}", self.state.epoch + 1);
        self.trace.push(stage);
        self.stage_started = Some(Instant::now());
    }

    fn finish_stage(&mut self) {
        if let (Some(t), Some(prev)) = (self.stage_started.take(), self.trace.last()) {
            log::debug!("stage {prev} took {:.3}s", t.elapsed().as_secs_f64());
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if self.state.config.checkpoint_buffers {
            checkpoint::save(path, &self.state)
        } else {
            let mut s = self.state.clone();
            s.d_env.clear();
            s.d_b.clear();
            s.d_f.clear();
            s.has_buffers = false;
            checkpoint::save(path, &s)
        }
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_state(checkpoint::load(path)?)
    }

    /// Run the remaining epochs, appending to `out/metrics.csv` and writing checkpoints.
    /// On an epoch error the current state goes to `out/abort.ckpt` before the error is
    /// returned.
    pub fn train(&mut self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        fs::write(out.join("config.toml"), self.state.config.to_text()?)?;
        let mut writer = MetricsWriter::create(&out.join("metrics.csv"), &self.state.rows)?;
        while !self.is_finished() {
            let row = match self.run_epoch() {
                Ok(r) => r,
                Err(e) => {
                    let path = out.join("abort.ckpt");
                    if let Err(save) = self.save_checkpoint(&path) {
                        log::error!("could not write {}: {save}", path.display());
                    }
                    return Err(e);
                }
            };
            writer.append(&row)?;
            log::info!(
                "epoch {} steps {} eval {:.2} ± {:.2} ({:.1}s)",
                row.epoch,
                row.env_steps,
                row.eval_return_mean,
                row.eval_return_std,
                row.wall_clock
            );
            let every = self.state.config.checkpoint_every;
            if every > 0 && row.epoch % every == 0 {
                self.save_checkpoint(&self.epoch_checkpoint(out, row.epoch))?;
            }
        }
        self.save_checkpoint(&out.join("final.ckpt"))
    }

    pub fn epoch_checkpoint(&self, out: &Path, epoch: usize) -> PathBuf {
        out.join(format!("epoch-{epoch}.ckpt"))
    }

    /// One pass of the loop: collect, fit models, pick start states, roll out both ways,
    /// imitate, reinforce, measure, evaluate.
    pub fn run_epoch(&mut self) -> Result<MetricsRow> {
        if !self.state.has_buffers {
            return Err(Error::State("checkpoint was saved without buffers; training cannot resume".into()));
        }
        let started = Instant::now();
        self.trace.clear();
        let epoch = self.state.epoch + 1;
        let cfg = self.state.config.clone();
        let (k_b, k_f) = cfg.rollout_lengths(epoch);
        let gan_alpha = cfg.alpha_schedule().value(epoch);
        let mut row = MetricsRow {
            epoch,
            k_b,
            k_f,
            gan_alpha,
            ..Default::default()
        };
        let backward_on = self.strategy.rollouts();
        let gan_on = cfg.gan != GanMode::Off;
        let needs_forward = cfg.model_based || backward_on || gan_on;

        self.enter(Stage::Collect);
        row.train_return = self.collect(&cfg)?;

        if needs_forward || backward_on || gan_on {
            self.enter(Stage::TrainModels);
            self.train_models(&cfg, needs_forward, backward_on, gan_alpha, &mut row)?;
        }

        let mut hs_b = Array2::zeros((0, self.spec().state_dim));
        let mut hs_f = Array2::zeros((0, self.spec().state_dim));
        if (cfg.model_based && k_f > 0) || (backward_on && k_b > 0) {
            self.enter(Stage::Aggregate);
            let collection = self.aggregate(&cfg, gan_on)?;
            let values = self.state.agent.estimate_value(collection.view())?;
            let values = values.to_vec();
            if backward_on && k_b > 0 {
                self.enter(Stage::TopK);
                let idx = select_top_k(&values, cfg.top_k)?;
                hs_b = pick(&collection, &idx);
            }
            if cfg.model_based && k_f > 0 && self.state.forward.is_trained() {
                self.enter(Stage::Boltzmann);
                hs_f = self.boltzmann(&cfg, &collection, values)?;
            }
        }
        row.n_hs_b = hs_b.nrows();
        row.n_hs_f = hs_f.nrows();

        if backward_on {
            self.enter(Stage::BackwardRollouts);
            let chunk = self.backward_rollouts(&cfg, &hs_b, k_b, &mut row)?;
            push_chunk(&mut self.state.d_b, chunk, cfg.retain_epochs);
            self.enter(Stage::Imitation);
            let d_b: Vec<Transition> = self.state.d_b.iter().flatten().cloned().collect();
            let s = &mut self.state;
            row.imitation_loss = self
                .strategy
                .policy_phase(&mut s.agent, &d_b, cfg.g1, cfg.imitation_batch, &mut s.rng)?;
        }

        if cfg.model_based {
            self.enter(Stage::ForwardRollouts);
            let chunk = self.forward_rollouts(&hs_f, k_f, &mut row)?;
            push_chunk(&mut self.state.d_f, chunk, cfg.retain_epochs);
        }

        self.enter(Stage::Sac);
        self.reinforce(&cfg, &mut row)?;

        if self.state.forward.is_trained() && self.state.backward.is_trained() && self.state.backward_policy.is_trained()
        {
            self.enter(Stage::Divergence);
            let s = &mut self.state;
            let holdout = holdout_split(&s.d_env, cfg.model_window).1;
            let start = holdout.len().saturating_sub(DIVERGENCE_HOLDOUT);
            if let Some(d) =
                measure_divergences(epoch, &holdout[start..], &s.forward, &s.backward, &s.backward_policy, &mut s.rng)?
            {
                row.forward_mse = Some(d.forward_mse);
                row.backward_mse = Some(d.backward_mse);
                row.policy_mse = Some(d.policy_mse);
            }
        }

        self.enter(Stage::Evaluate);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        eval_rng.set_stream(epoch as u64);
        let (m, sd) = evaluate_policy(&self.state.agent.policy, self.env.as_ref(), cfg.eval_episodes, &mut eval_rng)?;
        row.eval_return_mean = m;
        row.eval_return_std = sd;
        row.env_steps = self.state.env_steps;
        row.alpha = self.state.agent.alpha();
        self.finish_stage();
        row.wall_clock = started.elapsed().as_secs_f64();

        self.state.epoch = epoch;
        self.state.rows.push(row.clone());
        Ok(row)
    }

    fn collect(&mut self, cfg: &RunConfig) -> Result<Option<f64>> {
        let s = &mut self.state;
        let env = self.env.as_ref();
        let spec = env.spec();
        let mut finished = Vec::new();
        for _ in 0..cfg.steps_per_epoch {
            let action: Vec<f64> = if s.env_steps < cfg.random_steps as u64 {
                spec.action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(lo, hi)| s.rng.random_range(*lo..*hi))
                    .collect()
            } else {
                s.agent.act(&s.episode.state, false, &mut s.rng)?
            };
            let (tr, ret) = s.episode.advance(env, &action, &mut s.rng)?;
            s.d_env.push(tr);
            s.env_steps += 1;
            finished.extend(ret);
        }
        Ok(mean(&finished))
    }

    fn train_models(
        &mut self,
        cfg: &RunConfig,
        needs_forward: bool,
        backward_on: bool,
        gan_alpha: f64,
        row: &mut MetricsRow,
    ) -> Result<()> {
        let s = &mut self.state;
        let (train, holdout) = holdout_split(&s.d_env, cfg.model_window);
        if needs_forward {
            let r = s.forward.train(&train, &holdout, &mut s.rng)?;
            row.forward_model_loss = (!r.skipped).then_some(r.holdout_loss);
        }
        if backward_on {
            let r = s.backward.train(&train, &holdout, &mut s.rng)?;
            row.backward_model_loss = (!r.skipped).then_some(r.holdout_loss);
            if train.len() >= holdout.len() {
                let r = s.backward_policy.train(&train, &holdout, &mut s.rng)?;
                row.backward_policy_loss = (r.steps > 0).then_some(r.best);
            }
        }
        if cfg.gan != GanMode::Off {
            let real: Vec<Vec<f64>> = s.d_env.recent(cfg.window).map(|t| t.state.clone()).collect();
            let real = states_to_array(&real, self.env.spec().state_dim)?;
            let report = if cfg.gan == GanMode::Value && s.forward.is_trained() {
                let signal = CriticValue {
                    policy: &s.agent.policy,
                    critics: &s.agent.critics,
                    model: &s.forward,
                    reparameterize: cfg.gan_reparameterize,
                };
                s.vgan.train(real.view(), cfg.gan, &signal, gan_alpha, &mut s.rng)?
            } else {
                let signal = ConstantValue { q: 0.0, reward: 0.0 };
                let mode = if cfg.gan == GanMode::Value { GanMode::Vanilla } else { cfg.gan };
                s.vgan.train(real.view(), mode, &signal, gan_alpha, &mut s.rng)?
            };
            row.gan_d_loss = Some(report.d_loss);
            row.gan_g_loss = Some(report.g_loss);
            row.gan_value = Some(report.value);
            row.gan_d_fake = Some(report.d_fake);
        }
        Ok(())
    }

    fn aggregate(&mut self, cfg: &RunConfig, gan_on: bool) -> Result<Array2<f64>> {
        let s = &mut self.state;
        let sd = self.env.spec().state_dim;
        let n_env = s.d_env.len().min(cfg.window);
        let ratio = if gan_on { cfg.gan_ratio } else { 0.0 };
        let n_gen = (ratio * n_env as f64).round() as usize;
        let mut generated = if n_gen > 0 {
            s.vgan.sample_states(n_gen, &mut s.rng)?
        } else {
            Vec::new()
        };
        let states = aggregate_states(&s.d_env, cfg.window, ratio, sd, |_| std::mem::take(&mut generated))?;
        states_to_array(&states, sd)
    }

    fn boltzmann(&mut self, cfg: &RunConfig, collection: &Array2<f64>, values: Vec<f64>) -> Result<Array2<f64>> {
        let s = &mut self.state;
        if cfg.m2 == 0 {
            return Ok(Array2::zeros((0, collection.ncols())));
        }
        let deltas = compute_td_priority(
            collection.view(),
            &s.agent.critics,
            &s.agent.policy,
            &s.forward,
            cfg.gamma,
            &mut s.rng,
        )?;
        let (v, d) = if cfg.priority_normalization {
            (standardize(&values), standardize(&deltas))
        } else {
            (values, deltas)
        };
        let idx = boltzmann_sample(&v, &d, cfg.beta, cfg.m2, &mut s.rng)?;
        Ok(pick(collection, &idx))
    }

    fn backward_rollouts(&mut self, cfg: &RunConfig, hs_b: &Array2<f64>, k_b: usize, row: &mut MetricsRow) -> Result<Vec<Transition>> {
        let s = &mut self.state;
        if k_b == 0 || cfg.m1 == 0 || hs_b.nrows() == 0 || !s.backward.is_trained() || !s.backward_policy.is_trained() {
            return Ok(Vec::new());
        }
        let idx: Vec<usize> = (0..cfg.m1).map(|_| s.rng.random_range(0..hs_b.nrows())).collect();
        let starts = pick(hs_b, &idx);
        let env = self.env.as_ref();
        let batch = backward_rollout(
            starts.view(),
            k_b,
            &s.backward_policy,
            &s.backward,
            &|x: &[f64]| env.termination_fn(x),
            &mut s.rng,
        )?;
        row.non_finite += batch.non_finite;
        row.n_backward = batch.len();
        Ok(batch.into_transitions())
    }

    fn forward_rollouts(&mut self, hs_f: &Array2<f64>, k_f: usize, row: &mut MetricsRow) -> Result<Vec<Transition>> {
        let s = &mut self.state;
        if k_f == 0 || hs_f.nrows() == 0 || !s.forward.is_trained() {
            return Ok(Vec::new());
        }
        let env = self.env.as_ref();
        let batch = forward_rollout(
            hs_f.view(),
            k_f,
            &s.agent.policy,
            &s.forward,
            &|x: &[f64]| env.termination_fn(x),
            &mut s.rng,
        )?;
        row.non_finite += batch.non_finite;
        row.n_forward = batch.len();
        Ok(batch.into_transitions())
    }

    /// `G2` SAC updates on minibatches mixing real transitions with the model pool.
    fn reinforce(&mut self, cfg: &RunConfig, row: &mut MetricsRow) -> Result<()> {
        let s = &mut self.state;
        let mut pool: Vec<&Transition> = s.d_f.iter().flatten().collect();
        if self.strategy.feeds_sac() {
            pool.extend(s.d_b.iter().flatten());
        }
        let n_real = if pool.is_empty() {
            cfg.batch_size
        } else {
            (cfg.real_ratio * cfg.batch_size as f64).round() as usize
        };
        let mut losses: Vec<SacLosses> = Vec::with_capacity(cfg.g2);
        for _ in 0..cfg.g2 {
            let mut batch: Vec<&Transition> = Vec::with_capacity(cfg.batch_size);
            for _ in 0..n_real {
                batch.push(s.d_env.get(s.rng.random_range(0..s.d_env.len())));
            }
            for _ in n_real..cfg.batch_size {
                batch.push(pool[s.rng.random_range(0..pool.len())]);
            }
            let b = SacBatch::from_transitions(&batch)?;
            if let Some(l) = s.agent.sac_update(&b, &mut s.rng)? {
                losses.push(l);
            }
        }
        let avg = |f: fn(&SacLosses) -> f64| mean(&losses.iter().map(f).collect::<Vec<_>>());
        row.actor_loss = avg(|l| l.actor);
        row.q1_loss = avg(|l| l.q1);
        row.q2_loss = avg(|l| l.q2);
        row.v_loss = avg(|l| l.v);
        row.entropy = avg(|l| l.entropy);
        Ok(())
    }
}

/// Split the `window` most recent transitions: every tenth by insertion index is held out.
pub fn holdout_split(d_env: &ReplayBuffer<Transition>, window: usize) -> (Vec<&Transition>, Vec<&Transition>) {
    let n = d_env.len().min(window);
    let first = d_env.inserted() - n as u64;
    let mut train = Vec::with_capacity(n);
    let mut holdout = Vec::with_capacity(n / 10 + 1);
    for (i, t) in d_env.recent(n).enumerate() {
        if (first + i as u64) % 10 == 9 {
            holdout.push(t);
        } else {
            train.push(t);
        }
    }
    (train, holdout)
}
