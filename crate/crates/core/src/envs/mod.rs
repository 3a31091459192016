//! Built-in environments with known rewards, termination predicates and, for the tabular
//! chain, exact dynamics.
//!
//! Environments are stateless value objects: the current state and the step counter live
//! in an [`Episode`], so `step` is a pure function of `(state, action, rng draw)`.

mod pendulum;
mod pointmass;
mod tabular;

use std::fmt::Debug;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use pendulum::Pendulum;
pub use pointmass::PointMass;
pub use tabular::{ChainEnv, TabularMDP, TabularPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub has_early_termination: bool,
    /// Bound on `|r|` for every reward the environment can emit.
    pub r_max: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.action_dim, self.action_low.len())?;
        check_dim(self.action_dim, self.action_high.len())?;
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("bad action bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn clip_action(&self, action: &mut [f64]) {
        for ((a, lo), hi) in action.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            *a = a.clamp(*lo, *hi);
        }
    }

    pub fn action_center(&self) -> Vec<f64> {
        self.action_low.iter().zip(&self.action_high).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn action_scale(&self) -> Vec<f64> {
        self.action_low.iter().zip(&self.action_high).map(|(l, h)| 0.5 * (h - l)).collect()
    }
}

/// One environment step.
///
/// `done` marks the end of an episode (termination predicate or step limit); `terminal`
/// is the termination predicate alone and is what value bootstrapping masks on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub terminal: bool,
}

pub trait Env: Debug + Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draw an initial state from the start distribution.
    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Next state and reward for an in-bounds action.
    fn dynamics(&self, state: &[f64], action: &[f64], rng: &mut dyn RngCore) -> (Vec<f64>, f64);

    /// Whether `state` is terminal. Always false for variants without early termination.
    fn termination_fn(&self, state: &[f64]) -> bool;
}

/// Apply one step at episode step index `t` (0-based). Actions outside the bounds are clipped.
pub fn step(env: &dyn Env, state: &[f64], action: &[f64], t: usize, rng: &mut dyn RngCore) -> Result<Transition> {
    let spec = env.spec();
    check_dim(spec.state_dim, state.len())?;
    check_dim(spec.action_dim, action.len())?;
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input(format!("non-finite action {action:?}")));
    }
    let mut a = action.to_vec();
    spec.clip_action(&mut a);
    let (next_state, reward) = env.dynamics(state, &a, rng);
    let terminal = env.termination_fn(&next_state);
    Ok(Transition {
        state: state.to_vec(),
        action: a,
        reward,
        next_state,
        done: terminal || t + 1 >= spec.max_episode_steps,
        terminal,
    })
}

/// Current state and step counter of a running episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub state: Vec<f64>,
    pub t: usize,
    pub ret: f64,
}

impl Episode {
    pub fn reset(env: &dyn Env, rng: &mut dyn RngCore) -> Self {
        Self {
            state: env.reset(rng),
            t: 0,
            ret: 0.0,
        }
    }

    /// Step and advance; resets automatically after `done`. Returns the transition and,
    /// when an episode finished, its undiscounted return.
    pub fn advance(&mut self, env: &dyn Env, action: &[f64], rng: &mut dyn RngCore) -> Result<(Transition, Option<f64>)> {
        let tr = step(env, &self.state, action, self.t, rng)?;
        self.ret += tr.reward;
        if tr.done {
            let ret = self.ret;
            *self = Episode::reset(env, rng);
            Ok((tr, Some(ret)))
        } else {
            self.state = tr.next_state.clone();
            self.t += 1;
            Ok((tr, None))
        }
    }
}

pub struct EnvEntry {
    pub name: &'static str,
    pub build: fn() -> Box<dyn Env>,
}

pub const REGISTRY: &[EnvEntry] = &[
    EnvEntry {
        name: "pendulum",
        build: || Box::new(Pendulum::default()),
    },
    EnvEntry {
        name: "pointmass",
        build: || Box::new(PointMass::new(true)),
    },
    EnvEntry {
        name: "pointmass-nt",
        build: || Box::new(PointMass::new(false)),
    },
    EnvEntry {
        name: "chain",
        build: || Box::new(ChainEnv::default()),
    },
];

pub fn env_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    REGISTRY
        .iter()
        .find(|e| e.name == name)
        .map(|e| (e.build)())
        .ok_or_else(|| Error::Config(format!("unknown env '{name}', expected one of {:?}", env_names())))
}
