use std::f64::consts::PI;

use rand::{Rng, RngCore};

use super::{Env, EnvSpec};

/// Torque-limited inverted pendulum swing-up with observation `[cos θ, sin θ, θ̇]`;
/// `θ = 0` is upright.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub max_speed: f64,
    pub max_torque: f64,
    pub dt: f64,
    pub g: f64,
    pub m: f64,
    pub l: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        let max_speed: f64 = 8.0;
        let max_torque: f64 = 2.0;
        Self {
            spec: EnvSpec {
                name: "pendulum".into(),
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-max_torque],
                action_high: vec![max_torque],
                max_episode_steps: 200,
                has_early_termination: false,
                r_max: PI * PI + 0.1 * max_speed * max_speed + 0.001 * max_torque * max_torque,
            },
            max_speed,
            max_torque,
            dt: 0.05,
            g: 10.0,
            m: 1.0,
            l: 1.0,
        }
    }
}

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn observe(theta: f64, theta_dot: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin(), theta_dot]
    }

    pub fn angle(state: &[f64]) -> f64 {
        state[1].atan2(state[0])
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let theta = rng.random_range(-PI..=PI);
        let theta_dot = rng.random_range(-1.0..=1.0);
        Self::observe(theta, theta_dot)
    }

    fn dynamics(&self, state: &[f64], action: &[f64], _rng: &mut dyn RngCore) -> (Vec<f64>, f64) {
        let th = Self::angle(state);
        let thdot = state[2];
        let u = action[0].clamp(-self.max_torque, self.max_torque);
        let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;
        let new_thdot = (thdot
            + (3.0 * self.g / (2.0 * self.l) * th.sin() + 3.0 / (self.m * self.l * self.l) * u) * self.dt)
            .clamp(-self.max_speed, self.max_speed);
        let new_th = th + new_thdot * self.dt;
        (Self::observe(new_th, new_thdot), -cost)
    }

    fn termination_fn(&self, _state: &[f64]) -> bool {
        false
    }
}
