//! TD targets and parameter updates for DDPG, TD3 and SAC.

mod config;
mod gamma;
mod learner;
mod targets;

pub use config::{AlgoConfig, AlgoKind};
pub use gamma::{fold_rewards, gamma_grid, gamma_grid_of, hyperbolic_q, n_step_fold, GammaGrid, GridKind, NStep};
pub use learner::{Learner, UpdateStats};
pub use targets::{ddpg_target, sac_target, single_target, td3_target, td_targets, TargetInputs, TargetNets};
