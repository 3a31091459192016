use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::vgan::GanMode;

/// How backward-rollout traces reach the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackwardMode {
    /// No backward model, backward policy or backward rollouts.
    Off,
    /// Backward transitions join the SAC pool.
    Reinforce,
    /// Backward traces are imitated as demonstrations.
    Imitate,
}

impl BackwardMode {
    pub fn name(self) -> &'static str {
        match self {
            BackwardMode::Off => "off",
            BackwardMode::Reinforce => "br",
            BackwardMode::Imitate => "bi",
        }
    }
}

impl fmt::Display for BackwardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BACKWARD_REGISTRY
            .iter()
            .find(|e| e.mode.name().eq_ignore_ascii_case(s.trim()))
            .map(|e| e.mode)
            .ok_or_else(|| Error::Config(format!("unknown backward mode '{s}', expected off, br or bi")))
    }
}

impl TryFrom<String> for BackwardMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackwardMode> for String {
    fn from(m: BackwardMode) -> String {
        m.name().to_string()
    }
}

/// What an epoch does with the backward buffer `D_b`.
pub trait BackwardStrategy: fmt::Debug + Send + Sync {
    fn mode(&self) -> BackwardMode;

    /// Whether the backward model and backward policy are trained and rolled out.
    fn rollouts(&self) -> bool {
        true
    }

    /// Whether `D_b` transitions are mixed into SAC minibatches.
    fn feeds_sac(&self) -> bool {
        false
    }

    /// The `G1` policy updates on `D_b`. Returns the mean loss, or `None` when nothing ran.
    fn policy_phase(
        &self,
        _agent: &mut Agent,
        _d_b: &[Transition],
        _updates: usize,
        _batch: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Debug)]
pub struct NoBackward;

impl BackwardStrategy for NoBackward {
    fn mode(&self) -> BackwardMode {
        BackwardMode::Off
    }

    fn rollouts(&self) -> bool {
        false
    }
}

#[derive(Debug)]
pub struct BackwardReinforce;

impl BackwardStrategy for BackwardReinforce {
    fn mode(&self) -> BackwardMode {
        BackwardMode::Reinforce
    }

    fn feeds_sac(&self) -> bool {
        true
    }
}

#[derive(Debug)]
pub struct BackwardImitate;

impl BackwardStrategy for BackwardImitate {
    fn mode(&self) -> BackwardMode {
        BackwardMode::Imitate
    }

    fn policy_phase(
        &self,
        agent: &mut Agent,
        d_b: &[Transition],
        updates: usize,
        batch: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Option<f64>> {
        if d_b.is_empty() || updates == 0 {
            return Ok(None);
        }
        let sd = agent.policy.state_dim();
        let ad = agent.policy.action_dim();
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..updates {
            let mut s = Array2::zeros((batch, sd));
            let mut a = Array2::zeros((batch, ad));
            for i in 0..batch {
                let t = &d_b[rng.random_range(0..d_b.len())];
                s.row_mut(i).iter_mut().zip(&t.state).for_each(|(o, v)| *o = *v);
                a.row_mut(i).iter_mut().zip(&t.action).for_each(|(o, v)| *o = *v);
            }
            if let Some(l) = agent.imitation_update(s.view(), a.view())? {
                total += l;
                count += 1;
            }
        }
        Ok((count > 0).then(|| total / count as f64))
    }
}

pub struct BackwardEntry {
    pub mode: BackwardMode,
    pub build: fn() -> Box<dyn BackwardStrategy>,
}

pub const BACKWARD_REGISTRY: &[BackwardEntry] = &[
    BackwardEntry {
        mode: BackwardMode::Off,
        build: || Box::new(NoBackward),
    },
    BackwardEntry {
        mode: BackwardMode::Reinforce,
        build: || Box::new(BackwardReinforce),
    },
    BackwardEntry {
        mode: BackwardMode::Imitate,
        build: || Box::new(BackwardImitate),
    },
];

pub fn backward_strategy(mode: BackwardMode) -> Box<dyn BackwardStrategy> {
    let entry = BACKWARD_REGISTRY
        .iter()
        .find(|e| e.mode == mode)
        .expect("every backward mode is registered");
    (entry.build)()
}

/// A named algorithm variant: which model-based stages run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    /// Forward model rollouts feed SAC; otherwise SAC trains on real transitions only.
    pub model_based: bool,
    pub backward: BackwardMode,
    pub gan: GanMode,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "sac",
        model_based: false,
        backward: BackwardMode::Off,
        gan: GanMode::Off,
    },
    Preset {
        name: "baseline",
        model_based: true,
        backward: BackwardMode::Off,
        gan: GanMode::Off,
    },
    Preset {
        name: "baseline-br",
        model_based: true,
        backward: BackwardMode::Reinforce,
        gan: GanMode::Off,
    },
    Preset {
        name: "baseline-bi",
        model_based: true,
        backward: BackwardMode::Imitate,
        gan: GanMode::Off,
    },
    Preset {
        name: "baseline-bi-gan",
        model_based: true,
        backward: BackwardMode::Imitate,
        gan: GanMode::Vanilla,
    },
    Preset {
        name: "baseline-bi-vgan",
        model_based: true,
        backward: BackwardMode::Imitate,
        gan: GanMode::Value,
    },
    Preset {
        name: "bifrl",
        model_based: true,
        backward: BackwardMode::Imitate,
        gan: GanMode::Value,
    },
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn find_preset(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .copied()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}', expected one of {:?}", preset_names())))
}
