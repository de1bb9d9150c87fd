use serde::{Deserialize, Serialize};

use super::gamma::{gamma_grid_of, GammaGrid, GridKind};
use crate::error::{Error, Result};
use crate::nn::OptimizerSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    Ddpg,
    #[default]
    Td3,
    Sac,
}

impl AlgoKind {
    pub fn n_critics(self) -> usize {
        match self {
            AlgoKind::Ddpg => 1,
            AlgoKind::Td3 | AlgoKind::Sac => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoConfig {
    pub algo: AlgoKind,
    /// Discount of the single head when `hyperbolic` is off.
    pub gamma: f64,
    pub n_step: usize,
    pub tau: f64,
    pub batch_size: usize,
    /// TD3 target policy smoothing noise and its clip.
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    /// Critic updates per actor update.
    pub actor_delay: u64,
    /// SAC entropy coefficient.
    pub alpha_ent: f64,
    /// Quantile Huber threshold.
    pub kappa: f64,
    /// Targets use the slowly tracking actor copy; otherwise the online actor.
    pub use_target_actor: bool,
    /// Multiplies rewards before they enter TD targets.
    pub reward_scale: f64,
    pub hyperbolic: bool,
    pub n_heads: usize,
    pub gamma_max: f64,
    pub k: f64,
    pub eps_low: f64,
    pub gamma_grid: GridKind,
    pub actor_optimizer: OptimizerSpec,
    pub critic_optimizer: OptimizerSpec,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algo: AlgoKind::Td3,
            gamma: 0.99,
            n_step: 1,
            tau: 0.005,
            batch_size: 256,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            actor_delay: 1,
            alpha_ent: 1.0,
            kappa: 1.0,
            use_target_actor: true,
            reward_scale: 1.0,
            hyperbolic: false,
            n_heads: 10,
            gamma_max: 0.99,
            k: 0.1,
            eps_low: 0.01,
            gamma_grid: GridKind::LogGamma,
            actor_optimizer: OptimizerSpec::adam(1e-3),
            critic_optimizer: OptimizerSpec::adam(1e-3),
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_open_unit(self.gamma) {
            return Err(Error::config("algo.gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.gamma_max < 1.0 && self.gamma_max > 0.0) {
            return Err(Error::config("algo.gamma_max", format!("must lie in (0, 1), got {}", self.gamma_max)));
        }
        if self.n_step == 0 {
            return Err(Error::config("algo.n_step", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("algo.tau", format!("must lie in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("algo.batch_size", "must be positive"));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::config("algo.smoothing_sigma", "must be >= 0"));
        }
        if !(self.smoothing_clip > 0.0) {
            return Err(Error::config("algo.smoothing_clip", "must be > 0"));
        }
        if self.actor_delay == 0 {
            return Err(Error::config("algo.actor_delay", "must be at least 1"));
        }
        if !(self.alpha_ent >= 0.0) {
            return Err(Error::config("algo.alpha_ent", "must be >= 0"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::config("algo.kappa", "must be > 0"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::config("algo.reward_scale", "must be > 0"));
        }
        if self.n_heads == 0 {
            return Err(Error::config("algo.n_heads", "must be at least 1"));
        }
        self.actor_optimizer.validate("algo.actor_optimizer")?;
        self.critic_optimizer.validate("algo.critic_optimizer")?;
        self.grid().map(|_| ())
    }

    /// Number of gamma heads the critics must carry.
    pub fn n_gamma_heads(&self) -> usize {
        if self.hyperbolic {
            self.n_heads
        } else {
            1
        }
    }

    pub fn grid(&self) -> Result<GammaGrid> {
        if self.hyperbolic {
            gamma_grid_of(self.gamma_grid, self.n_heads, self.gamma_max, self.eps_low, self.k)
        } else {
            GammaGrid::single(self.gamma, self.k)
        }
    }
}
