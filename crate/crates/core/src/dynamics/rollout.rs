use ndarray::{Array2, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::ensemble::Direction;
use crate::envs::Transition;
use crate::error::Result;
use crate::traits::{ActionSource, StepModel};

/// Output of a batch of model rollouts.
///
/// Backward rollouts are stored as transitions `(ŝ_{t-1}, â_{t-1}, r̂_{t-1}, ŝ_t)` in forward
/// temporal order, so `(state, action)` is the demonstration pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub direction: Option<Direction>,
    pub k: usize,
    /// One entry per rollout, each in forward temporal order.
    pub traces: Vec<Vec<Transition>>,
    /// Rollouts cut short by a non-finite model output.
    pub non_finite: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.traces.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.traces.iter().flatten()
    }

    pub fn into_transitions(self) -> Vec<Transition> {
        self.traces.into_iter().flatten().collect()
    }

    /// `(state, action)` demonstration pairs.
    pub fn pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.transitions().map(|t| (t.state.clone(), t.action.clone())).collect()
    }
}

fn finite_row(row: ndarray::ArrayView1<'_, f64>) -> bool {
    row.iter().all(|v| v.is_finite())
}

/// Shared stepping loop: all live rollouts advance together through one batched model call.
fn run<T>(
    starts: ArrayView2<'_, f64>,
    k: usize,
    policy: &dyn ActionSource,
    model: &dyn StepModel,
    terminal: &T,
    backward: bool,
    rng: &mut dyn RngCore,
) -> Result<RolloutBatch>
where
    T: Fn(&[f64]) -> bool + ?Sized,
{
    let n = starts.nrows();
    let mut batch = RolloutBatch {
        direction: Some(if backward { Direction::Backward } else { Direction::Forward }),
        k,
        traces: vec![Vec::new(); n],
        non_finite: 0,
    };
    let mut live: Vec<usize> = (0..n).collect();
    let mut cur: Array2<f64> = starts.to_owned();
    for _ in 0..k {
        if live.is_empty() {
            break;
        }
        let actions = policy.actions(cur.view(), false, rng)?;
        let (next, rewards) = model.step_batch(cur.view(), actions.view(), rng)?;
        let mut keep = Vec::with_capacity(live.len());
        for (row, &id) in live.iter().enumerate() {
            let s = cur.row(row);
            let a = actions.row(row);
            let s2 = next.row(row);
            if !finite_row(s2) || !finite_row(a) || !rewards[row].is_finite() {
                batch.non_finite += 1;
                continue;
            }
            let s2v = s2.to_vec();
            let hit = terminal(&s2v);
            if backward {
                // a terminal state has no successor, so it cannot be a predecessor either
                if hit {
                    continue;
                }
                batch.traces[id].push(Transition {
                    state: s2v,
                    action: a.to_vec(),
                    reward: rewards[row],
                    next_state: s.to_vec(),
                    done: false,
                    terminal: false,
                });
            } else {
                batch.traces[id].push(Transition {
                    state: s.to_vec(),
                    action: a.to_vec(),
                    reward: rewards[row],
                    next_state: s2v,
                    done: hit,
                    terminal: hit,
                });
                if hit {
                    continue;
                }
            }
            keep.push(row);
        }
        cur = next.select(Axis(0), &keep);
        live = keep.iter().map(|&r| live[r]).collect();
    }
    if backward {
        for trace in &mut batch.traces {
            trace.reverse();
        }
    }
    Ok(batch)
}

/// `k` steps of `â ~ q(·|s)`, `ŝ_prev ~ p̃(·|s, â)` from each start state. Each trace is
/// returned reversed into forward order and ends at its start state. A rollout stops when
/// the generated predecessor is terminal or non-finite.
pub fn backward_rollout<T>(
    starts: ArrayView2<'_, f64>,
    k: usize,
    backward_policy: &dyn ActionSource,
    backward_model: &dyn StepModel,
    terminal: &T,
    rng: &mut dyn RngCore,
) -> Result<RolloutBatch>
where
    T: Fn(&[f64]) -> bool + ?Sized,
{
    run(starts, k, backward_policy, backward_model, terminal, true, rng)
}

/// `k` steps of `a ~ π(·|s)`, `(s', r) ~ p(·|s, a)` from each start state. A rollout stops
/// after entering a terminal state (flagged done) or on a non-finite prediction.
pub fn forward_rollout<T>(
    starts: ArrayView2<'_, f64>,
    k: usize,
    policy: &dyn ActionSource,
    forward_model: &dyn StepModel,
    terminal: &T,
    rng: &mut dyn RngCore,
) -> Result<RolloutBatch>
where
    T: Fn(&[f64]) -> bool + ?Sized,
{
    run(starts, k, policy, forward_model, terminal, false, rng)
}
