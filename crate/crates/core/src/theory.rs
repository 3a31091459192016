//! Return-discrepancy bound between the current policy in the real dynamics and a presumed
//! expert in a presumed model, checked exactly on small tabular instances, plus the
//! continuous-space divergence measurements reported during training.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::envs::{TabularMDP, TabularPolicy, Transition};
use crate::error::{check_dim, Error, Result};
use crate::traits::{ActionSource, MeanModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub r_max: f64,
    pub gamma: f64,
    pub k_b: usize,
    pub eps_pi: f64,
    pub eps_m: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_max >= 0.0 && self.r_max.is_finite()) {
            return Err(Error::Input(format!("r_max {} must be finite and >= 0", self.r_max)));
        }
        if self.gamma == 1.0 {
            return Err(Error::Input("gamma = 1 makes the bound singular".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Input(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for (name, v) in [("eps_pi", self.eps_pi), ("eps_m", self.eps_m)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `2 r_max (1 - gamma^{k_b+1}) / (1 - gamma) * (eps_pi + k_b (eps_pi + eps_m))`.
pub fn discrepancy_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let BoundInputs { r_max, gamma, k_b, eps_pi, eps_m } = *inputs;
    let horizon = (1.0 - gamma.powi(k_b as i32 + 1)) / (1.0 - gamma);
    Ok(2.0 * r_max * horizon * (eps_pi + k_b as f64 * (eps_pi + eps_m)))
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `(eps_pi, eps_m)`: the largest over `t = 0..=horizon` of the expected total variation
/// between the policies, and between the dynamics, with `(s, a)` drawn from the time-`t`
/// occupancy of `pi` in `p`.
pub fn exact_divergences(
    p: &TabularMDP,
    p_e: &TabularMDP,
    pi: &TabularPolicy,
    pi_e: &TabularPolicy,
    horizon: usize,
) -> Result<(f64, f64)> {
    check_dim(p.n_states, p_e.n_states)?;
    check_dim(p.n_actions, p_e.n_actions)?;
    for q in [pi, pi_e] {
        check_dim(p.n_states, q.n_states)?;
        check_dim(p.n_actions, q.n_actions)?;
    }
    let mut eps_pi: f64 = 0.0;
    let mut eps_m: f64 = 0.0;
    for d in p.state_marginals(pi, horizon) {
        let mut ep = 0.0;
        let mut em = 0.0;
        for (s, &ds) in d.iter().enumerate() {
            ep += ds * total_variation(pi.row(s), pi_e.row(s));
            for a in 0..p.n_actions {
                em += ds * pi.prob(s, a) * total_variation(p.next_dist(s, a), p_e.next_dist(s, a));
            }
        }
        eps_pi = eps_pi.max(ep);
        eps_m = eps_m.max(em);
    }
    Ok((eps_pi.min(1.0), eps_m.min(1.0)))
}

/// One checked instance: the truncated returns, the divergences and the bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub k_b: usize,
    pub eta: f64,
    pub eta_expert: f64,
    pub discrepancy: f64,
    pub eps_pi: f64,
    pub eps_m: f64,
    pub bound: f64,
}

impl BoundCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.discrepancy
    }

    pub fn holds(&self) -> bool {
        // the returns are sums of at most a few dozen terms; allow their round-off
        self.discrepancy <= self.bound + 1e-12 * (1.0 + self.bound)
    }
}

/// Everything needed to reproduce a violation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub index: usize,
    pub check: BoundCheck,
    pub p: TabularMDP,
    pub p_expert: TabularMDP,
    pub pi: TabularPolicy,
    pub pi_expert: TabularPolicy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<BoundCheck>,
    pub violations: Vec<Counterexample>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn margins(&self) -> Vec<f64> {
        self.checks.iter().map(BoundCheck::margin).collect()
    }

    pub fn median_margin(&self) -> f64 {
        let mut m = self.margins();
        if m.is_empty() {
            return 0.0;
        }
        m.sort_by(f64::total_cmp);
        let n = m.len();
        if n % 2 == 1 {
            m[n / 2]
        } else {
            0.5 * (m[n / 2 - 1] + m[n / 2])
        }
    }

    /// Equal-width histogram of the margins: `(lower, upper, count)` per bin.
    pub fn margin_histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let m = self.margins();
        if m.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for v in m {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
            .collect()
    }

    pub fn write_histogram_csv(&self, path: &Path, bins: usize) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bin_lower,bin_upper,count")?;
        for (lo, hi, c) in self.margin_histogram(bins) {
            writeln!(f, "{lo},{hi},{c}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn write_instances_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,n_states,n_actions,gamma,k_b,eta,eta_expert,discrepancy,eps_pi,eps_m,bound,margin")?;
        for (i, c) in self.checks.iter().enumerate() {
            writeln!(
                f,
                "{i},{},{},{},{},{},{},{},{},{},{},{}",
                c.n_states,
                c.n_actions,
                c.gamma,
                c.k_b,
                c.eta,
                c.eta_expert,
                c.discrepancy,
                c.eps_pi,
                c.eps_m,
                c.bound,
                c.margin()
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Exact check of the bound for one pair of (dynamics, policy) with truncated returns.
pub fn check_instance(
    p: &TabularMDP,
    p_e: &TabularMDP,
    pi: &TabularPolicy,
    pi_e: &TabularPolicy,
    k_b: usize,
) -> Result<BoundCheck> {
    if p.r != p_e.r || p.rho0 != p_e.rho0 || p.gamma != p_e.gamma {
        return Err(Error::Input("the model pair must share rewards, start distribution and discount".into()));
    }
    let eta = p.truncated_return(pi, k_b)?;
    let eta_expert = p_e.truncated_return(pi_e, k_b)?;
    let (eps_pi, eps_m) = exact_divergences(p, p_e, pi, pi_e, k_b)?;
    let bound = discrepancy_bound(&BoundInputs {
        r_max: p.r_max(),
        gamma: p.gamma,
        k_b,
        eps_pi,
        eps_m,
    })?;
    Ok(BoundCheck {
        n_states: p.n_states,
        n_actions: p.n_actions,
        gamma: p.gamma,
        k_b,
        eta,
        eta_expert,
        discrepancy: (eta - eta_expert).abs(),
        eps_pi,
        eps_m,
        bound,
    })
}

/// Random instances with up to 6 states, 3 actions and `k_b` in `1..=3`. The presumed
/// expert and model are random mixtures of the real ones with weights in `[0, 0.5]`.
pub fn validate_bound(rng: &mut dyn RngCore, n_instances: usize) -> Result<ValidationReport> {
    if n_instances == 0 {
        return Err(Error::Input("need at least one instance".into()));
    }
    let mut report = ValidationReport::default();
    for index in 0..n_instances {
        let ns = rng.random_range(2..=6);
        let na = rng.random_range(2..=3);
        let gamma = rng.random_range(0.5..0.99);
        let k_b = rng.random_range(1..=3);
        let p = TabularMDP::random(rng, ns, na, gamma);
        let p_e = p.mix_dynamics(&TabularMDP::random(rng, ns, na, gamma), rng.random_range(0.0..=0.5));
        let pi = TabularPolicy::random(rng, ns, na);
        let pi_e = pi.mix(&TabularPolicy::random(rng, ns, na), rng.random_range(0.0..=0.5));
        let check = check_instance(&p, &p_e, &pi, &pi_e, k_b)?;
        if !check.holds() {
            log::error!("bound violated on instance {index}: {check:?}");
            report.violations.push(Counterexample {
                index,
                check: check.clone(),
                p,
                p_expert: p_e,
                pi,
                pi_expert: pi_e,
            });
        }
        report.checks.push(check);
    }
    Ok(report)
}

/// Mean squared errors of the learned models and the backward policy on held-out data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub epoch: usize,
    pub forward_mse: f64,
    pub backward_mse: f64,
    pub policy_mse: f64,
}

/// Smallest holdout for which [`measure_divergences`] reports anything.
pub const MIN_HOLDOUT: usize = 8;

/// Forward error: model mean `Δs` against `s' - s`. Backward error: backward-model mean at
/// `(s', a)` against `s - s'`. Policy divergence: backward-policy mean at `s'` against the
/// action `a` that led there. Returns `None` when the holdout is too small.
pub fn measure_divergences(
    epoch: usize,
    holdout: &[&Transition],
    forward: &dyn MeanModel,
    backward: &dyn MeanModel,
    backward_policy: &dyn ActionSource,
    rng: &mut dyn RngCore,
) -> Result<Option<DivergenceReport>> {
    if holdout.len() < MIN_HOLDOUT {
        log::warn!("divergence holdout has {} samples (< {MIN_HOLDOUT}), skipping", holdout.len());
        return Ok(None);
    }
    let n = holdout.len();
    let sd = holdout[0].state.len();
    let ad = holdout[0].action.len();
    let s = Array2::from_shape_fn((n, sd), |(i, j)| holdout[i].state[j]);
    let s2 = Array2::from_shape_fn((n, sd), |(i, j)| holdout[i].next_state[j]);
    let a = Array2::from_shape_fn((n, ad), |(i, j)| holdout[i].action[j]);
    let mse = |x: Array2<f64>, y: &Array2<f64>| (x - y).mapv(|e| e * e).mean().unwrap_or(0.0);

    let fwd = forward.mean_delta(s.view(), a.view())?;
    let forward_mse = mse(fwd.slice(s![.., ..sd]).to_owned(), &(&s2 - &s));
    let bwd = backward.mean_delta(s2.view(), a.view())?;
    let backward_mse = mse(bwd.slice(s![.., ..sd]).to_owned(), &(&s - &s2));
    let policy_mse = mse(backward_policy.actions(s2.view(), true, rng)?, &a);
    Ok(Some(DivergenceReport {
        epoch,
        forward_mse,
        backward_mse,
        policy_mse,
    }))
}
