use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::MetricsRecord;
use super::transport::Transport;
use super::wire::WireMessage;
use crate::algorithms::{Learner, UpdateStats};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::replay::Batch;

#[derive(Clone, Debug)]
pub struct TrainerOptions {
    pub trainer_id: u32,
    pub history_len: usize,
    /// Valid start indices needed before the first update.
    pub min_size: u64,
    /// Update budget; 0 returns right after warm-up.
    pub updates: u64,
    pub publish_every: u64,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_every: u64,
    pub seed: u64,
    pub fingerprint: u32,
    pub poll: Duration,
}

impl TrainerOptions {
    pub fn from_config(cfg: &ExperimentConfig, trainer_id: u32) -> Result<Self> {
        Ok(TrainerOptions {
            trainer_id,
            history_len: cfg.replay.history_len,
            min_size: cfg.replay.min_size as u64,
            updates: cfg.runtime.updates,
            publish_every: cfg.runtime.publish_every,
            checkpoint_every: cfg.runtime.checkpoint_every,
            checkpoint_dir: Some(cfg.logging.dir.join("checkpoints")),
            metrics_every: cfg.logging.metrics_every,
            seed: cfg.seeds.train.wrapping_add(1_000 * trainer_id as u64),
            fingerprint: cfg.fingerprint()?,
            poll: Duration::from_millis(100),
        })
    }

    pub fn node_name(&self) -> String {
        format!("trainer-{}", self.trainer_id)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainerReport {
    pub updates: u64,
    pub version: u64,
    pub last: Option<UpdateStats>,
    pub checkpoints: Vec<PathBuf>,
}

pub struct Trainer {
    pub opts: TrainerOptions,
    learner: Learner,
    version: u64,
    updates: u64,
    batch_rng: ChaCha8Rng,
    last: Option<UpdateStats>,
    checkpoints: Vec<PathBuf>,
}

impl Trainer {
    pub fn new(opts: TrainerOptions, learner: Learner) -> Self {
        Trainer {
            batch_rng: ChaCha8Rng::seed_from_u64(opts.seed ^ 0xB47C_5EED),
            opts,
            learner,
            version: 0,
            updates: 0,
            last: None,
            checkpoints: Vec::new(),
        }
    }

    pub fn from_config(cfg: &ExperimentConfig, opts: TrainerOptions) -> Result<Self> {
        let cfg = cfg.with_history_len(opts.history_len)?;
        let learner = Learner::new(cfg.algo.clone(), cfg.actor_spec(), cfg.critic_spec(), opts.seed)?;
        Ok(Self::new(opts, learner))
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Blocks until the buffer holds `min_size` sampleable transitions.
    /// Returns false if stopped first.
    pub fn warm_up(&mut self, t: &mut dyn Transport, stop: &AtomicBool) -> Result<bool> {
        loop {
            if stop.load(Ordering::SeqCst) {
                return Ok(false);
            }
            match t.call(&WireMessage::StatusRequest)? {
                WireMessage::Status(s) if s.valid_starts >= self.opts.min_size => return Ok(true),
                WireMessage::Status(_) => std::thread::sleep(self.opts.poll),
                other => return Err(Error::Protocol(format!("unexpected reply type {} to a status request", other.type_byte()))),
            }
        }
    }

    pub fn request_batch(&mut self, t: &mut dyn Transport) -> Result<Batch> {
        let req = WireMessage::BatchRequest {
            trainer_id: self.opts.trainer_id,
            batch_size: self.learner.config().batch_size as u32,
            n_step: self.learner.config().n_step as u32,
            history_len: self.opts.history_len as u32,
            rng_seed: self.batch_rng.random(),
        };
        match t.call(&req)? {
            WireMessage::BatchResponse { batch } => Ok(batch),
            WireMessage::Error { message } => Err(Error::Empty(message)),
            other => Err(Error::Protocol(format!("unexpected reply type {} to a batch request", other.type_byte()))),
        }
    }

    /// One learner update. A non-finite loss writes a diagnostic dump and
    /// returns the error.
    pub fn train_step(&mut self, batch: &Batch) -> Result<UpdateStats> {
        match self.learner.update(batch) {
            Ok(stats) => {
                self.updates += 1;
                self.last = Some(stats.clone());
                Ok(stats)
            }
            Err(e @ Error::Numerical(_)) => {
                if let Some(dir) = self.opts.checkpoint_dir.clone() {
                    match self.dump_diagnostics(&dir, &e, batch) {
                        Ok(p) => log::error!("{}: {e}; diagnostics in {}", self.opts.node_name(), p.display()),
                        Err(d) => log::error!("{}: {e}; diagnostics dump failed: {d}", self.opts.node_name()),
                    }
                }
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    fn dump_diagnostics(&self, dir: &Path, err: &Error, batch: &Batch) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("nan_dump_trainer{}_u{}", self.opts.trainer_id, self.updates);
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let rewards: Vec<f64> = batch.rewards.iter().flatten().copied().collect();
        let report = serde_json::json!({
            "error": err.to_string(),
            "trainer_id": self.opts.trainer_id,
            "updates": self.updates,
            "version": self.version,
            "critic_steps": self.learner.critic_steps(),
            "actor_steps": self.learner.actor_steps(),
            "last_critic_loss": self.last.as_ref().map(|s| s.critic_loss),
            "last_critic_grad_norm": self.last.as_ref().map(|s| s.critic_grad_norm),
            "batch_rows": batch.len(),
            "batch_obs_finite": finite(&batch.obs),
            "batch_next_obs_finite": finite(&batch.next_obs),
            "batch_rewards_finite": finite(&rewards),
            "reward_min": rewards.iter().copied().fold(f64::INFINITY, f64::min),
            "reward_max": rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        self.learner.checkpoint(self.version, self.opts.fingerprint).save(&dir.join(format!("{stem}.crlw")))?;
        Ok(path)
    }

    pub fn publish(&mut self, t: &mut dyn Transport) -> Result<u64> {
        let version = self.version + 1;
        let blob = self.learner.checkpoint(version, self.opts.fingerprint).encode()?;
        match t.call(&WireMessage::WeightsPublish {
            trainer_id: self.opts.trainer_id,
            version,
            checkpoint: blob,
        })? {
            WireMessage::Ack => {
                self.version = version;
                Ok(version)
            }
            WireMessage::Error { message } => Err(Error::Protocol(message)),
            other => Err(Error::Protocol(format!("unexpected reply type {} to a publish", other.type_byte()))),
        }
    }

    pub fn save_checkpoint(&mut self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.opts.checkpoint_dir else {
            return Ok(None);
        };
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("trainer{}_u{:09}.crlw", self.opts.trainer_id, self.updates));
        self.learner.checkpoint(self.version, self.opts.fingerprint).save(&path)?;
        self.checkpoints.push(path.clone());
        Ok(Some(path))
    }

    fn metrics(&self, stats: &UpdateStats, updates_per_sec: f64, buffer: Option<u64>) -> MetricsRecord {
        let mut r = MetricsRecord::new(self.opts.node_name())
            .with("critic_loss", stats.critic_loss)
            .with("critic_grad_norm", stats.critic_grad_norm)
            .with("updates", self.updates as f64)
            .with("policy_version", self.version as f64)
            .with("updates_per_sec", updates_per_sec);
        if let Some(a) = stats.actor_loss {
            r = r.with("actor_loss", a);
        }
        if let Some(b) = buffer {
            r = r.with("buffer_size", b as f64);
        }
        r
    }

    /// Warm-up, then request/update/publish until the budget is spent or
    /// `stop` is set.
    pub fn run(&mut self, t: &mut dyn Transport, stop: &AtomicBool) -> Result<TrainerReport> {
        if !self.warm_up(t, stop)? || self.opts.updates == 0 {
            return Ok(self.report());
        }
        let mut window = Instant::now();
        let mut window_updates = 0u64;
        while self.updates < self.opts.updates && !stop.load(Ordering::SeqCst) {
            let batch = self.request_batch(t)?;
            let stats = self.train_step(&batch)?;
            window_updates += 1;
            if self.updates % self.opts.publish_every == 0 {
                self.publish(t)?;
            }
            if self.updates % self.opts.checkpoint_every == 0 {
                self.save_checkpoint()?;
            }
            if self.updates % self.opts.metrics_every == 0 {
                let ups = window_updates as f64 / window.elapsed().as_secs_f64().max(1e-9);
                let buffer = match t.call(&WireMessage::StatusRequest)? {
                    WireMessage::Status(s) => Some(s.transitions),
                    _ => None,
                };
                t.call(&WireMessage::MetricsPush {
                    record: self.metrics(&stats, ups, buffer),
                })?;
                window = Instant::now();
                window_updates = 0;
            }
        }
        if self.updates > 0 {
            if self.updates % self.opts.publish_every != 0 {
                self.publish(t)?;
            }
            if self.updates % self.opts.checkpoint_every != 0 {
                self.save_checkpoint()?;
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> TrainerReport {
        TrainerReport {
            updates: self.updates,
            version: self.version,
            last: self.last.clone(),
            checkpoints: self.checkpoints.clone(),
        }
    }
}
