//! YAML experiment configuration: strict schema, validation naming the
//! offending key, canonical dump and fingerprint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{ActorKind, ActorSpec, CriticSpec, HeadKind};
use crate::algorithms::{AlgoConfig, AlgoKind};
use crate::ensemble::EnsembleConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::exploration::ExplorationConfig;
use crate::nn::Activation;

/// First seed of the validation list; seeds are consecutive from here.
pub const VALIDATION_SEED_BASE: u64 = 10_000;

/// The first `n` validation seeds.
pub fn validation_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| VALIDATION_SEED_BASE + i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorNet {
    pub kind: ActorKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for ActorNet {
    fn default() -> Self {
        ActorNet {
            kind: ActorKind::Deterministic,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            layer_norm: true,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticNet {
    pub head: HeadKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl Default for CriticNet {
    fn default() -> Self {
        CriticNet {
            head: HeadKind::Quantile { n_atoms: 51 },
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            layer_norm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub actor: ActorNet,
    pub critic: CriticNet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Transitions kept before the oldest episodes are evicted.
    pub capacity: usize,
    /// Valid start indices required before training begins.
    pub min_size: usize,
    /// Observations stacked into the policy input.
    pub history_len: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 1_000_000,
            min_size: 1_000,
            history_len: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub db_addr: String,
    pub n_samplers: usize,
    /// How many of the samplers run noise-free on the validation seeds.
    pub n_deterministic: usize,
    /// Samplers fetch weights every this many episodes.
    pub refresh_every: u64,
    /// Trainer publishes weights every this many updates.
    pub publish_every: u64,
    pub checkpoint_every: u64,
    /// Update budget of a trainer.
    pub updates: u64,
    /// Gradient updates per environment step in single-process runs.
    pub updates_per_step: f64,
    /// Sleep after every sampler step, in milliseconds.
    pub throttle_ms: u64,
    /// Environment steps between validation passes in single-process runs.
    pub eval_every: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            db_addr: "127.0.0.1:7878".into(),
            n_samplers: 3,
            n_deterministic: 1,
            refresh_every: 1,
            publish_every: 100,
            checkpoint_every: 5_000,
            updates: 200_000,
            updates_per_step: 1.0,
            throttle_ms: 0,
            eval_every: 5_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsConfig {
    pub train: u64,
    pub validation: Vec<u64>,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig {
            train: 0,
            validation: validation_seeds(64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Metrics, checkpoints and the resolved config go here.
    pub dir: PathBuf,
    pub level: String,
    /// Trainer metrics cadence in updates.
    pub metrics_every: u64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            dir: PathBuf::from("runs/default"),
            level: "info".into(),
            metrics_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub algo: AlgoConfig,
    pub exploration: ExplorationConfig,
    pub replay: ReplayConfig,
    pub runtime: RuntimeConfig,
    pub seeds: SeedsConfig,
    pub ensemble: EnsembleConfig,
    pub logging: LoggingConfig,
}

impl ExperimentConfig {
    pub fn from_yaml(text: &str) -> Result<Self> {
        // an empty document means all defaults
        let cfg: ExperimentConfig = if text.trim().is_empty() {
            ExperimentConfig::default()
        } else {
            serde_yaml::from_str(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_yaml(&text)
    }

    /// Canonical dump: every field, defaults resolved.
    pub fn to_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }

    /// CRC32 of the canonical dump.
    pub fn fingerprint(&self) -> Result<u32> {
        Ok(crc32fast::hash(self.to_yaml()?.as_bytes()))
    }

    pub fn actor_spec(&self) -> ActorSpec {
        let a = &self.agent.actor;
        ActorSpec {
            kind: a.kind,
            obs_dim: self.env.obs_dim() * self.replay.history_len,
            action_dim: self.env.action_dim(),
            hidden: a.hidden.clone(),
            activation: a.activation,
            layer_norm: a.layer_norm,
            log_std_min: a.log_std_min,
            log_std_max: a.log_std_max,
        }
    }

    pub fn critic_spec(&self) -> CriticSpec {
        let c = &self.agent.critic;
        CriticSpec {
            head: c.head,
            n_gamma_heads: self.algo.n_gamma_heads(),
            obs_dim: self.env.obs_dim() * self.replay.history_len,
            action_dim: self.env.action_dim(),
            hidden: c.hidden.clone(),
            activation: c.activation,
            layer_norm: c.layer_norm,
        }
    }

    /// Copy with a different history length, as used by one trainer of a
    /// shared-buffer ensemble.
    pub fn with_history_len(&self, history_len: usize) -> Result<Self> {
        let mut c = self.clone();
        c.replay.history_len = history_len;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.algo.validate()?;
        self.exploration.validate()?;
        self.ensemble.validate()?;
        let actor = self.actor_spec();
        actor.validate()?;
        self.critic_spec().validate()?;
        self.exploration.check_actor(&actor)?;
        if self.algo.algo == AlgoKind::Sac && actor.kind != ActorKind::Gaussian {
            return Err(Error::config("agent.actor.kind", "sac needs a gaussian actor"));
        }
        if self.replay.capacity == 0 {
            return Err(Error::config("replay.capacity", "must be positive"));
        }
        if self.replay.min_size == 0 {
            return Err(Error::config("replay.min_size", "must be positive"));
        }
        if self.replay.min_size > self.replay.capacity {
            return Err(Error::config("replay.min_size", "cannot exceed replay.capacity"));
        }
        if !(1..=64).contains(&self.replay.history_len) {
            return Err(Error::config("replay.history_len", "must lie in [1, 64]"));
        }
        let rt = &self.runtime;
        if rt.db_addr.trim().is_empty() {
            return Err(Error::config("runtime.db_addr", "must not be empty"));
        }
        if rt.n_deterministic > rt.n_samplers {
            return Err(Error::config("runtime.n_deterministic", "cannot exceed runtime.n_samplers"));
        }
        for (key, v) in [
            ("runtime.refresh_every", rt.refresh_every),
            ("runtime.publish_every", rt.publish_every),
            ("runtime.checkpoint_every", rt.checkpoint_every),
            ("runtime.eval_every", rt.eval_every),
            ("logging.metrics_every", self.logging.metrics_every),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(rt.updates_per_step > 0.0 && rt.updates_per_step.is_finite()) {
            return Err(Error::config("runtime.updates_per_step", "must be positive"));
        }
        if self.seeds.validation.is_empty() {
            return Err(Error::config("seeds.validation", "needs at least one seed"));
        }
        Ok(())
    }

    /// Writes `config.resolved.yaml` and `provenance.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.yaml");
        std::fs::write(&path, self.to_yaml()?)?;
        let provenance = serde_json::json!({
            "fingerprint": format!("{:08x}", self.fingerprint()?),
            "crate_version": env!("CARGO_PKG_VERSION"),
            "vcs_revision": vcs_revision(),
        });
        std::fs::write(dir.join("provenance.json"), serde_json::to_string_pretty(&provenance)?)?;
        Ok(path)
    }
}

/// Commit hash of the working tree, when git is available.
fn vcs_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    if !out.status.success() {
        return None;
    }
    Some(String::from_utf8_lossy(&out.stdout).trim().to_string())
}
