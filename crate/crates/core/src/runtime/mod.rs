//! Database, sampler and trainer nodes talking over a framed protocol on
//! TCP or an in-process channel.

mod broker;
mod eval;
pub mod local;
pub mod metrics;
pub mod plot;
mod sampler;
mod trainer;
mod transport;
pub mod wire;

pub use broker::{serve_db, Broker};
pub use eval::{evaluate_actor, evaluate_policy, mean, std_dev};
pub use metrics::{MetricsRecord, MetricsSink};
pub use sampler::{EpisodeReport, Sampler, SamplerOptions};
pub use trainer::{Trainer, TrainerOptions, TrainerReport};
pub use transport::{shutdown_db, Backoff, InProcess, TcpTransport, Transport};
pub use wire::{DbStatus, WireMessage};

/// Database address from `CRL_DB_ADDR` when set, else `configured`.
pub fn db_addr(configured: &str) -> String {
    std::env::var("CRL_DB_ADDR").ok().filter(|s| !s.trim().is_empty()).unwrap_or_else(|| configured.to_string())
}
