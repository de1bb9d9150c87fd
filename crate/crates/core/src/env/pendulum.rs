use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, Step};
use crate::error::{Error, Result};

const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const DT: f64 = 0.05;
const G: f64 = 10.0;

fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Torque-limited swing-up; upright is `theta = 0`. Observation is
/// `[cos θ, sin θ, ω / 8]`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    pub frame_skip: usize,
    pub t_max: usize,
    theta: f64,
    omega: f64,
    t: usize,
    done: bool,
}

impl Pendulum {
    pub fn new(frame_skip: usize, t_max: usize) -> Result<Self> {
        if frame_skip == 0 {
            return Err(Error::config("env.frame_skip", "must be positive"));
        }
        if t_max == 0 {
            return Err(Error::config("env.t_max", "must be positive"));
        }
        Ok(Pendulum {
            frame_skip,
            t_max,
            theta: PI,
            omega: 0.0,
            t: 0,
            done: false,
        })
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega / MAX_SPEED]
    }
}

impl Env for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.t_max
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..PI);
        self.omega = rng.random_range(-1.0..1.0);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        if action.len() != 1 {
            return Err(Error::shape("pendulum action", 1, action.len()));
        }
        if !action[0].is_finite() {
            return Err(Error::Env("non-finite action".into()));
        }
        let u = MAX_TORQUE * action[0].clamp(-1.0, 1.0);
        let mut reward = 0.0;
        for _ in 0..self.frame_skip {
            let th = wrap(self.theta);
            reward -= th * th + 0.1 * self.omega * self.omega + 0.001 * u * u;
            self.omega = (self.omega + (1.5 * G * self.theta.sin() + 3.0 * u) * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.theta += self.omega * DT;
        }
        self.t += 1;
        self.done = self.t >= self.t_max;
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.done,
            success: false,
        })
    }
}
