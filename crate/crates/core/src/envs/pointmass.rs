use rand::{Rng, RngCore};

use super::{Env, EnvSpec};

/// Point mass on a plane that must reach a fixed goal. State `[x, y, vx, vy]`, action is a
/// bounded acceleration. With early termination, leaving the arena ends the episode; the
/// `-nt` variant has walls instead.
#[derive(Clone, Debug)]
pub struct PointMass {
    spec: EnvSpec,
    pub dt: f64,
    pub arena: f64,
    pub max_speed: f64,
    pub goal: [f64; 2],
}

impl PointMass {
    pub fn new(early_termination: bool) -> Self {
        Self {
            spec: EnvSpec {
                name: if early_termination { "pointmass" } else { "pointmass-nt" }.into(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps: 100,
                has_early_termination: early_termination,
                r_max: 5.5,
            },
            dt: 0.1,
            arena: 2.0,
            max_speed: 1.0,
            goal: [1.5, 1.5],
        }
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 0.0, 0.0]
    }

    fn dynamics(&self, state: &[f64], action: &[f64], _rng: &mut dyn RngCore) -> (Vec<f64>, f64) {
        let mut next = vec![0.0; 4];
        for d in 0..2 {
            next[d] = state[d] + state[d + 2] * self.dt;
            next[d + 2] = (state[d + 2] + action[d] * self.dt).clamp(-self.max_speed, self.max_speed);
            if !self.spec.has_early_termination && next[d].abs() > self.arena {
                next[d] = next[d].clamp(-self.arena, self.arena);
                next[d + 2] = 0.0;
            }
        }
        let dist = ((next[0] - self.goal[0]).powi(2) + (next[1] - self.goal[1]).powi(2)).sqrt();
        let effort = 0.01 * (action[0] * action[0] + action[1] * action[1]);
        // clamp keeps the reward within r_max for states handed in from outside the arena
        (next, -(dist + effort).min(self.spec.r_max))
    }

    fn termination_fn(&self, state: &[f64]) -> bool {
        self.spec.has_early_termination && (state[0].abs() > self.arena || state[1].abs() > self.arena)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn explicit_euler_position() {
        let env = PointMass::new(true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.2, -0.4, 0.5, -0.3];
        let tr = step(&env, &s, &[1.0, 0.5], 0, &mut rng).unwrap();
        assert!((tr.next_state[0] - (0.2 + 0.5 * 0.1)).abs() < 1e-15);
        assert!((tr.next_state[1] - (-0.4 - 0.3 * 0.1)).abs() < 1e-15);
        assert!((tr.next_state[2] - 0.6).abs() < 1e-15);
        assert!((tr.next_state[3] - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn out_of_arena_terminates() {
        let env = PointMass::new(true);
        assert!(env.termination_fn(&[2.1, 0.0, 0.0, 0.0]));
        assert!(env.termination_fn(&[0.0, -3.0, 0.0, 0.0]));
        assert!(!env.termination_fn(&[1.9, 1.9, 0.0, 0.0]));
    }

    #[test]
    fn nt_variant_never_terminates() {
        let env = PointMass::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert!(!env.termination_fn(&s));
        }
        let tr = step(&env, &[1.98, 0.0, 1.0, 0.0], &[1.0, 0.0], 0, &mut rng).unwrap();
        assert_eq!(tr.next_state[0], 2.0);
        assert_eq!(tr.next_state[2], 0.0);
        assert!(!tr.terminal);
    }
}
