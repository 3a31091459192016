use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Env, EnvSpec};
use crate::error::{check_dim, Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP with transition tensor `P(s'|s,a)` stored as `p[(s * n_actions + a) * n_states + s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    pub rho0: Vec<f64>,
}

/// Stochastic policy table `pi(a|s)` stored row-major by state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

fn is_distribution(row: &[f64], tol: f64) -> bool {
    row.iter().all(|&x| x >= 0.0 && x.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // normalized exponentials give a uniform draw on the simplex
    let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_dim(n_states * n_actions, probs.len())?;
        let pol = Self { n_states, n_actions, probs };
        for s in 0..n_states {
            if !is_distribution(pol.row(s), 1e-9) {
                return Err(Error::Input(format!("policy row {s} is not a distribution: {:?}", pol.row(s))));
            }
        }
        Ok(pol)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Self {
        let probs = (0..n_states).flat_map(|_| random_simplex(rng, n_actions)).collect();
        Self { n_states, n_actions, probs }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// `(1 - w) * self + w * other`, row by row.
    pub fn mix(&self, other: &TabularPolicy, w: f64) -> TabularPolicy {
        let probs = self.probs.iter().zip(&other.probs).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        TabularPolicy { probs, ..self.clone() }
    }
}

impl TabularMDP {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, r: Vec<f64>, gamma: f64, rho0: Vec<f64>) -> Result<Self> {
        check_dim(n_states * n_actions * n_states, p.len())?;
        check_dim(n_states * n_actions, r.len())?;
        check_dim(n_states, rho0.len())?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Input(format!("discount {gamma} outside [0, 1)")));
        }
        if !is_distribution(&rho0, STOCHASTIC_TOL) {
            return Err(Error::Input("initial distribution does not sum to 1".into()));
        }
        let mdp = Self { n_states, n_actions, p, r, gamma, rho0 };
        for s in 0..n_states {
            for a in 0..n_actions {
                if !is_distribution(mdp.next_dist(s, a), STOCHASTIC_TOL) {
                    return Err(Error::Input(format!("P(.|{s},{a}) is not a distribution")));
                }
            }
        }
        if mdp.r.iter().any(|r| !r.is_finite()) {
            return Err(Error::Input("non-finite reward".into()));
        }
        Ok(mdp)
    }

    /// `n`-state chain: action 0 moves left, action 1 moves right, each slipping to the
    /// opposite direction with probability `slip`. Moving right at the right end pays 1.
    pub fn chain(n: usize, slip: f64, gamma: f64) -> Result<Self> {
        let (na, mut p, mut r) = (2, vec![0.0; n * 2 * n], vec![0.0; n * 2]);
        for s in 0..n {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            for a in 0..na {
                let (go, other) = if a == 1 { (right, left) } else { (left, right) };
                let base = (s * na + a) * n;
                p[base + go] += 1.0 - slip;
                p[base + other] += slip;
            }
            if s == n - 1 {
                r[s * na + 1] = 1.0;
            }
        }
        let mut rho0 = vec![0.0; n];
        rho0[0] = 1.0;
        Self::new(n, na, p, r, gamma, rho0)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> Self {
        let p = (0..n_states * n_actions).flat_map(|_| random_simplex(rng, n_states)).collect();
        let r = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let rho0 = random_simplex(rng, n_states);
        Self { n_states, n_actions, p, r, gamma, rho0 }
    }

    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.p[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn r_max(&self) -> f64 {
        self.r.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Same reward, discount and start distribution; transitions mixed toward `other`.
    pub fn mix_dynamics(&self, other: &TabularMDP, w: f64) -> TabularMDP {
        let p = self.p.iter().zip(&other.p).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        TabularMDP { p, ..self.clone() }
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.next_dist(s, a), rng)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.rho0, rng)
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        check_dim(self.n_states, policy.n_states)?;
        check_dim(self.n_actions, policy.n_actions)?;
        for s in 0..self.n_states {
            if !is_distribution(policy.row(s), 1e-9) {
                return Err(Error::Input(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(())
    }

    /// State values solving `V = r_pi + gamma P_pi V` exactly.
    pub fn policy_values(&self, policy: &TabularPolicy) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            for act in 0..self.n_actions {
                let pi = policy.prob(s, act);
                b[s] += pi * self.reward(s, act);
                for (s2, p) in self.next_dist(s, act).iter().enumerate() {
                    a[(s, s2)] -= self.gamma * pi * p;
                }
            }
        }
        let v = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::State("singular policy evaluation system".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// Infinite-horizon discounted return `rho0^T V`.
    pub fn exact_return(&self, policy: &TabularPolicy) -> Result<f64> {
        let v = self.policy_values(policy)?;
        Ok(self.rho0.iter().zip(&v).map(|(p, v)| p * v).sum())
    }

    /// State marginals `p_t(s)` for `t = 0..=horizon` under `policy` started from `rho0`.
    pub fn state_marginals(&self, policy: &TabularPolicy, horizon: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(horizon + 1);
        let mut cur = self.rho0.clone();
        out.push(cur.clone());
        for _ in 0..horizon {
            let mut next = vec![0.0; self.n_states];
            for (s, &ps) in cur.iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                for a in 0..self.n_actions {
                    let w = ps * policy.prob(s, a);
                    for (s2, p) in self.next_dist(s, a).iter().enumerate() {
                        next[s2] += w * p;
                    }
                }
            }
            cur = next;
            out.push(cur.clone());
        }
        out
    }

    /// Discounted return truncated after step `horizon`: `sum_{t=0}^{horizon} gamma^t E[r_t]`.
    pub fn truncated_return(&self, policy: &TabularPolicy, horizon: usize) -> Result<f64> {
        self.check_policy(policy)?;
        let marg = self.state_marginals(policy, horizon);
        let mut total = 0.0;
        for (t, ps) in marg.iter().enumerate() {
            let step: f64 = ps
                .iter()
                .enumerate()
                .map(|(s, p)| p * (0..self.n_actions).map(|a| policy.prob(s, a) * self.reward(s, a)).sum::<f64>())
                .sum();
            total += self.gamma.powi(t as i32) * step;
        }
        Ok(total)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Chain MDP exposed through the continuous interface: one-hot state, scalar action whose
/// sign selects right (`>= 0`) or left.
#[derive(Clone, Debug)]
pub struct ChainEnv {
    spec: EnvSpec,
    pub mdp: TabularMDP,
}

impl Default for ChainEnv {
    fn default() -> Self {
        Self::new(TabularMDP::chain(6, 0.1, 0.9).expect("valid chain"))
    }
}

impl ChainEnv {
    pub fn new(mdp: TabularMDP) -> Self {
        let spec = EnvSpec {
            name: "chain".into(),
            state_dim: mdp.n_states,
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            max_episode_steps: 30,
            has_early_termination: false,
            r_max: mdp.r_max(),
        };
        Self { spec, mdp }
    }

    pub fn encode(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states];
        v[s] = 1.0;
        v
    }

    pub fn decode(state: &[f64]) -> usize {
        state
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0
    }
}

impl Env for ChainEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.encode(self.mdp.sample_initial(rng))
    }

    fn dynamics(&self, state: &[f64], action: &[f64], rng: &mut dyn RngCore) -> (Vec<f64>, f64) {
        let s = Self::decode(state);
        let a = usize::from(action[0] >= 0.0);
        let s2 = self.mdp.sample_next(s, a, rng);
        (self.encode(s2), self.mdp.reward(s, a))
    }

    fn termination_fn(&self, _state: &[f64]) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn zero_reward_returns_zero() {
        let mut mdp = TabularMDP::chain(4, 0.2, 0.9).unwrap();
        mdp.r.iter_mut().for_each(|r| *r = 0.0);
        assert_eq!(mdp.exact_return(&TabularPolicy::uniform(4, 2)).unwrap(), 0.0);
    }

    #[test]
    fn geometric_series() {
        let mdp = TabularMDP::new(1, 1, vec![1.0], vec![1.0], 0.9, vec![1.0]).unwrap();
        let eta = mdp.exact_return(&TabularPolicy::uniform(1, 1)).unwrap();
        assert!((eta - 10.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(TabularMDP::new(1, 1, vec![0.9], vec![1.0], 0.9, vec![1.0]).is_err());
        assert!(TabularMDP::new(1, 1, vec![1.0], vec![1.0], 1.0, vec![1.0]).is_err());
        let mdp = TabularMDP::chain(3, 0.0, 0.5).unwrap();
        let bad = TabularPolicy { n_states: 3, n_actions: 2, probs: vec![0.5, 0.6, 0.5, 0.5, 1.0, 0.0] };
        assert!(matches!(mdp.exact_return(&bad), Err(Error::Input(_))));
        assert!(TabularPolicy::new(3, 2, bad.probs.clone()).is_err());
    }

    #[test]
    fn bellman_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMDP::random(&mut rng, 6, 3, 0.95);
        let pi = TabularPolicy::random(&mut rng, 6, 3);
        let v = mdp.policy_values(&pi).unwrap();
        for s in 0..6 {
            let mut backup = 0.0;
            for a in 0..3 {
                let ev: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                backup += pi.prob(s, a) * (mdp.reward(s, a) + mdp.gamma * ev);
            }
            assert!((backup - v[s]).abs() < 1e-10);
        }
    }

    #[test]
    fn truncated_return_approaches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMDP::random(&mut rng, 5, 2, 0.8);
        let pi = TabularPolicy::random(&mut rng, 5, 2);
        let exact = mdp.exact_return(&pi).unwrap();
        let trunc = mdp.truncated_return(&pi, 200).unwrap();
        assert!((exact - trunc).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = TabularMDP::random(&mut rng, 5, 2, 0.5);
        let pi = TabularPolicy::random(&mut rng, 5, 2);
        let exact = mdp.exact_return(&pi).unwrap();
        let episodes = 1_000_000;
        let horizon = 60; // 0.5^60 is far below the Monte-Carlo resolution
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..episodes {
            let mut s = mdp.sample_initial(&mut rng);
            let (mut g, mut disc) = (0.0, 1.0);
            for _ in 0..horizon {
                let a = sample_categorical(pi.row(s), &mut rng);
                g += disc * mdp.reward(s, a);
                disc *= mdp.gamma;
                s = mdp.sample_next(s, a, &mut rng);
            }
            sum += g;
            sq += g * g;
        }
        let n = episodes as f64;
        let mean = sum / n;
        let se = ((sq / n - mean * mean) / n).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn sampled_transitions_match_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = TabularMDP::random(&mut rng, 6, 2, 0.9);
        let n = 100_000;
        let mut counts = vec![0usize; 6];
        for _ in 0..n {
            counts[mdp.sample_next(3, 1, &mut rng)] += 1;
        }
        let probs = mdp.next_dist(3, 1);
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        let crit = ChiSquared::new(5.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} crit {crit}");
    }

    #[test]
    fn point_mass_start_distribution() {
        let mdp = TabularMDP::chain(4, 0.1, 0.9).unwrap();
        let env = ChainEnv::new(mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            assert_eq!(ChainEnv::decode(&env.reset(&mut rng)), 0);
        }
    }

    #[test]
    fn marginals_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = TabularMDP::random(&mut rng, 6, 3, 0.9);
        let pi = TabularPolicy::random(&mut rng, 6, 3);
        for m in mdp.state_marginals(&pi, 5) {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
