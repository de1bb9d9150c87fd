//! Whole stack in one thread: exploring samplers and one trainer share an
//! in-process database, interleaved at episode granularity. Deterministic
//! for a fixed configuration.

use std::time::Instant;

use super::broker::Broker;
use super::eval::{evaluate_actor, mean};
use super::sampler::{Sampler, SamplerOptions};
use super::trainer::{Trainer, TrainerOptions};
use super::transport::{InProcess, Transport};
use super::wire::WireMessage;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::ParameterSet;

#[derive(Clone, Debug)]
pub struct LocalOptions {
    pub max_env_steps: u64,
    /// Stop once a validation pass reaches this mean return.
    pub target_return: Option<f64>,
    /// Write node metrics under the config's logging directory.
    pub write_metrics: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub env_steps: u64,
    pub updates: u64,
    pub wall_secs: f64,
    pub mean_return: f64,
}

#[derive(Clone, Debug)]
pub struct LocalReport {
    pub env_steps: u64,
    pub updates: u64,
    pub evals: Vec<EvalPoint>,
    /// Environment steps at the first validation pass meeting the target.
    pub reached_at: Option<u64>,
    pub wall_secs: f64,
    pub actor: ParameterSet,
}

impl LocalReport {
    pub fn best_return(&self) -> f64 {
        self.evals.iter().map(|e| e.mean_return).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn train_local(cfg: &ExperimentConfig, opts: &LocalOptions) -> Result<LocalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let metrics_dir = opts.write_metrics.then(|| cfg.logging.dir.join("metrics"));
    let broker = Broker::new(cfg.replay.capacity, metrics_dir.as_deref())?;

    let mut topts = TrainerOptions::from_config(cfg, 0)?;
    if !opts.write_metrics {
        topts.checkpoint_dir = None;
    }
    let mut trainer = Trainer::from_config(cfg, topts)?;
    let mut tt = InProcess::new(broker.clone());

    let n_explore = (cfg.runtime.n_samplers - cfg.runtime.n_deterministic).max(1);
    let mut samplers = (0..n_explore)
        .map(|j| {
            let sopts = SamplerOptions::from_config(cfg, j as u32, 0, false);
            Ok((Sampler::from_config(cfg, sopts)?, InProcess::new(broker.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    let history_len = cfg.replay.history_len;
    let actor_spec = cfg.actor_spec();

    let mut report = LocalReport {
        env_steps: 0,
        updates: 0,
        evals: Vec::new(),
        reached_at: None,
        wall_secs: 0.0,
        actor: trainer.learner().actor.clone(),
    };
    let mut owed = 0.0;
    let mut next_eval = cfg.runtime.eval_every;
    let mut episode = 0usize;
    let mut since_refresh = vec![u64::MAX; samplers.len()];
    while report.env_steps < opts.max_env_steps {
        let i = episode % samplers.len();
        episode += 1;
        let (sampler, st) = &mut samplers[i];
        if since_refresh[i] >= cfg.runtime.refresh_every {
            sampler.refresh(st)?;
            since_refresh[i] = 0;
        }
        since_refresh[i] += 1;
        let seed = sampler.next_seed();
        let started = Instant::now();
        let (ep, rep) = sampler.run_episode(seed)?;
        if let WireMessage::Error { message } = st.call(&WireMessage::EpisodePush { episode: ep })? {
            return Err(Error::Protocol(message));
        }
        if opts.write_metrics {
            st.call(&WireMessage::MetricsPush {
                record: sampler.metrics(&rep, started.elapsed()),
            })?;
        }
        report.env_steps += rep.steps as u64;

        if broker.status().valid_starts >= cfg.replay.min_size as u64 {
            owed += rep.steps as f64 * cfg.runtime.updates_per_step;
            while owed >= 1.0 && trainer.updates() < cfg.runtime.updates {
                owed -= 1.0;
                let batch = trainer.request_batch(&mut tt)?;
                trainer.train_step(&batch)?;
                if trainer.updates() % cfg.runtime.publish_every == 0 {
                    trainer.publish(&mut tt)?;
                }
            }
        }

        if report.env_steps >= next_eval || report.env_steps >= opts.max_env_steps {
            while next_eval <= report.env_steps {
                next_eval += cfg.runtime.eval_every;
            }
            let actor = &trainer.learner().actor;
            let returns = evaluate_actor(&cfg.env, &actor_spec, actor, history_len, &cfg.seeds.validation)?;
            let point = EvalPoint {
                env_steps: report.env_steps,
                updates: trainer.updates(),
                wall_secs: start.elapsed().as_secs_f64(),
                mean_return: mean(&returns),
            };
            log::info!(
                "env steps {} updates {} validation return {:.2}",
                point.env_steps,
                point.updates,
                point.mean_return
            );
            if opts.write_metrics {
                let record = super::metrics::MetricsRecord::new("validation")
                    .with("validation_return", point.mean_return)
                    .with("updates", point.updates as f64);
                tt.call(&WireMessage::MetricsPush { record })?;
            }
            let hit = opts.target_return.is_some_and(|t| point.mean_return >= t);
            report.evals.push(point);
            if hit {
                report.reached_at = Some(report.env_steps);
                report.actor = actor.clone();
                break;
            }
            report.actor = actor.clone();
        }
    }
    report.updates = trainer.updates();
    report.wall_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
