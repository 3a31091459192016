//! Replay storage and start-state prioritization.
//!
//! Two strategies pick rollout start states from one aggregated collection per epoch:
//! greedy top-K by value for backward rollouts, and a Boltzmann draw over value and
//! one-step TD residual for forward rollouts.

use ndarray::{Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::approx::rows_to_array;
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::traits::{ActionSource, StateValue, StepModel};

/// Fixed-capacity FIFO ring buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    head: usize,
    inserted: u64,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            head: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of items ever added, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
        }
        self.head = (self.head + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn extend<I: IntoIterator<Item = T>>(&mut self, items: I) {
        for it in items {
            self.push(it);
        }
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.head = 0;
    }

    /// Item `i` in insertion order, oldest first.
    pub fn get(&self, i: usize) -> &T {
        if self.items.len() < self.capacity {
            &self.items[i]
        } else {
            &self.items[(self.head + i) % self.capacity]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// The `n` most recent items, oldest first.
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &T> + '_ {
        let start = self.len().saturating_sub(n);
        (start..self.len()).map(move |i| self.get(i))
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.len())).collect())
    }

    /// Uniform mini-batch with replacement. Entries are copies.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<T>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| self.get(i).clone())
            .collect())
    }
}

/// A candidate rollout start state with its priorities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedState {
    pub state: Vec<f64>,
    pub value: f64,
    pub td_priority: f64,
}

/// Collect the `window` most recent environment states and `round(ratio * n_env)` generated
/// states. Generated states with the wrong width or non-finite entries are dropped.
pub fn aggregate_states<F>(
    d_env: &ReplayBuffer<Transition>,
    window: usize,
    ratio: f64,
    state_dim: usize,
    mut generate: F,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(usize) -> Vec<Vec<f64>>,
{
    if d_env.is_empty() {
        return Err(Error::State("state aggregation needs a non-empty environment buffer".into()));
    }
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("aggregation ratio {ratio} must be >= 0")));
    }
    let mut out: Vec<Vec<f64>> = d_env.recent(window).map(|t| t.state.clone()).collect();
    let n_gen = (ratio * out.len() as f64).round() as usize;
    if n_gen > 0 {
        out.extend(
            generate(n_gen)
                .into_iter()
                .filter(|s| s.len() == state_dim && s.iter().all(|v| v.is_finite())),
        );
    }
    Ok(out)
}

/// Absolute one-step TD residual `|V(s) - (r + gamma V(s + Δs))|` with `(Δs, r)` drawn from
/// the model at the policy's deterministic action.
pub fn compute_td_priority(
    states: ArrayView2<'_, f64>,
    values: &dyn StateValue,
    policy: &dyn ActionSource,
    model: &dyn StepModel,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if states.nrows() == 0 {
        return Ok(Vec::new());
    }
    let v = values.values(states);
    let actions = policy.actions(states, true, rng)?;
    let (next, r) = model.step_batch(states, actions.view(), rng)?;
    let v_next = values.values(next.view());
    Ok((0..states.nrows())
        .map(|j| (v[j] - (r[j] + gamma * v_next[j])).abs())
        .collect())
}

/// Indices of the `ceil(K/100 * n)` largest values, best first; ties keep the earlier index.
pub fn select_top_k(values: &[f64], k_percent: f64) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::State("top-K selection over an empty collection".into()));
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::Config(format!("K = {k_percent} must lie in (0, 100]")));
    }
    let count = ((k_percent / 100.0) * values.len() as f64).ceil().max(1.0) as usize;
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps insertion order among equal values; adding 0.0 merges -0.0 into 0.0
    idx.sort_by(|&a, &b| (values[b] + 0.0).total_cmp(&(values[a] + 0.0)));
    idx.truncate(count.min(values.len()));
    Ok(idx)
}

/// Normalized `exp(beta V + (1 - beta) delta)`, computed after subtracting the max logit.
pub fn boltzmann_probabilities(values: &[f64], deltas: &[f64], beta: f64) -> Result<Vec<f64>> {
    if values.len() != deltas.len() {
        return Err(Error::Dimension {
            expected: values.len(),
            got: deltas.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::State("Boltzmann sampling over an empty collection".into()));
    }
    let logits: Vec<f64> = values
        .iter()
        .zip(deltas)
        .map(|(v, d)| beta * v + (1.0 - beta) * d)
        .collect();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Input("non-finite sampling priority".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// `m` independent draws (with replacement) from [`boltzmann_probabilities`].
pub fn boltzmann_sample<R: Rng + ?Sized>(
    values: &[f64],
    deltas: &[f64],
    beta: f64,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta = {beta} must lie in (0, 1)")));
    }
    if m == 0 {
        return Err(Error::Config("Boltzmann draw count must be >= 1".into()));
    }
    let p = boltzmann_probabilities(values, deltas, beta)?;
    let dist = WeightedIndex::new(&p).map_err(|e| Error::State(format!("sampling weights: {e}")))?;
    Ok((0..m).map(|_| dist.sample(rng)).collect())
}

/// Z-score a priority vector; a constant vector maps to zeros.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

pub fn states_to_array(states: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    rows_to_array(states, dim)
}
