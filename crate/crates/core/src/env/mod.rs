//! Environment interface with a pendulum sanity task and the MoveField
//! point-mass task.

mod field;
mod move_field;
mod pendulum;
mod reward;

use serde::{Deserialize, Serialize};

pub use field::{VectorField, GRID_CENTER, GRID_SIDE};
pub use move_field::{follow_field_action, MoveField, MoveFieldState, Physics, SCRIPTED_GAIN};
pub use pendulum::Pendulum;
pub use reward::{reward_terms, shaped_reward, RewardParams, RewardTerms};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The task was completed (as opposed to running out of time).
    pub success: bool,
}

pub trait Env: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Episode length limit in agent steps.
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one agent step; errors once the episode is over.
    fn step(&mut self, action: &[f64]) -> Result<Step>;
    /// Hand-written reference policy for the current state, if any.
    fn scripted_action(&self) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    #[default]
    MoveField,
    Pendulum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// Field at the agent, position, velocity and time: 7 values.
    #[default]
    Compact,
    /// Full 11x11 field grid instead of the centre vector: 247 values.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub name: EnvName,
    pub mode: ObsMode,
    pub reward: RewardParams,
    pub physics: Physics,
    pub frame_skip: usize,
    pub t_max: usize,
    /// A second field appears after the first sink is reached.
    pub second_phase: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: EnvName::MoveField,
            mode: ObsMode::Compact,
            reward: RewardParams::default(),
            physics: Physics::default(),
            frame_skip: 4,
            t_max: 500,
            second_phase: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        make_env(self).map(|_| ())
    }

    pub fn obs_dim(&self) -> usize {
        match self.name {
            EnvName::MoveField => match self.mode {
                ObsMode::Compact => 7,
                ObsMode::Grid => 2 * GRID_SIDE * GRID_SIDE + 5,
            },
            EnvName::Pendulum => 3,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.name {
            EnvName::MoveField => 2,
            EnvName::Pendulum => 1,
        }
    }
}

pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Env>> {
    Ok(match cfg.name {
        EnvName::MoveField => Box::new(MoveField::new(cfg.physics, cfg.reward, cfg.mode, cfg.frame_skip, cfg.t_max, cfg.second_phase)?),
        EnvName::Pendulum => Box::new(Pendulum::new(cfg.frame_skip, cfg.t_max)?),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub ret: f64,
    pub steps: usize,
    pub success: bool,
}

/// Runs one episode from `seed`, calling `policy` on every observation.
pub fn rollout(env: &mut dyn Env, seed: u64, mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<EpisodeSummary> {
    let mut obs = env.reset(seed);
    let mut summary = EpisodeSummary {
        ret: 0.0,
        steps: 0,
        success: false,
    };
    loop {
        let step = env.step(&policy(&obs)?)?;
        summary.ret += step.reward;
        summary.steps += 1;
        if step.done {
            summary.success = step.success;
            return Ok(summary);
        }
        if summary.steps > env.max_steps() {
            return Err(Error::Env("episode exceeded its step limit".into()));
        }
        obs = step.obs;
    }
}

/// Mean return of the environment's scripted controller over `seeds`.
pub fn scripted_return(env: &mut dyn Env, seeds: &[u64]) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        env.reset(seed);
        loop {
            let a = env.scripted_action().ok_or_else(|| Error::Env(format!("{} has no scripted controller", env.name())))?;
            let s = env.step(&a)?;
            total += s.reward;
            if s.done {
                break;
            }
        }
    }
    Ok(total / seeds.len().max(1) as f64)
}
