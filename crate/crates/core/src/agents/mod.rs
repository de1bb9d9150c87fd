//! Actor and critic networks.

mod actor;
mod checkpoint;
mod critic;

pub use actor::{ActorHeads, ActorKind, ActorSpec, ACTOR_HEAD_SCALE};
pub use checkpoint::AgentCheckpoint;
pub use critic::{CriticSpec, HeadKind};
pub use crate::distributional::{dist_mean, ValueDistribution};
