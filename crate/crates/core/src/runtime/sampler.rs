use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::MetricsRecord;
use super::transport::Transport;
use super::wire::WireMessage;
use crate::agents::{ActorKind, ActorSpec, AgentCheckpoint};
use crate::config::ExperimentConfig;
use crate::env::{make_env, Env};
use crate::error::{Error, Result};
use crate::exploration::{action_distance, adapt_param_noise, apply_action_noise, perturb_params, ExplorationChoice, ExplorationConfig, ParamNoiseState};
use crate::nn::ParameterSet;
use crate::replay::{Episode, HistoryStack, Transition};

#[derive(Clone, Debug)]
pub struct SamplerOptions {
    pub sampler_id: u32,
    /// Trainer whose weights this sampler follows.
    pub trainer_id: u32,
    /// Noise-free rollouts on the validation seeds.
    pub deterministic: bool,
    pub refresh_every: u64,
    pub throttle: Duration,
    pub max_episodes: Option<u64>,
    pub seed: u64,
    pub push_episodes: bool,
}

impl SamplerOptions {
    pub fn from_config(cfg: &ExperimentConfig, sampler_id: u32, trainer_id: u32, deterministic: bool) -> Self {
        SamplerOptions {
            sampler_id,
            trainer_id,
            deterministic,
            refresh_every: cfg.runtime.refresh_every,
            throttle: Duration::from_millis(cfg.runtime.throttle_ms),
            max_episodes: None,
            seed: cfg.seeds.train.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (sampler_id as u64 + 1),
            push_episodes: true,
        }
    }

    pub fn node_name(&self) -> String {
        format!("sampler-{}", self.sampler_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub ret: f64,
    pub steps: usize,
    pub success: bool,
    pub seed: u64,
    pub policy_version: u64,
    pub choice: Option<ExplorationChoice>,
}

pub struct Sampler {
    pub opts: SamplerOptions,
    env: Box<dyn Env>,
    actor_spec: ActorSpec,
    exploration: ExplorationConfig,
    n_samplers: usize,
    validation_seeds: Vec<u64>,
    history_len: usize,
    weights: Option<(u64, ParameterSet)>,
    param_noise: ParamNoiseState,
    rng: ChaCha8Rng,
    episodes: u64,
    val_cursor: usize,
}

impl Sampler {
    pub fn from_config(cfg: &ExperimentConfig, opts: SamplerOptions) -> Result<Self> {
        cfg.validate()?;
        let actor_spec = cfg.actor_spec();
        Ok(Sampler {
            env: make_env(&cfg.env)?,
            exploration: cfg.exploration.clone(),
            n_samplers: cfg.runtime.n_samplers.max(1),
            validation_seeds: cfg.seeds.validation.clone(),
            history_len: cfg.replay.history_len,
            param_noise: cfg.exploration.param_noise,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            weights: None,
            episodes: 0,
            val_cursor: 0,
            actor_spec,
            opts,
        })
    }

    pub fn version(&self) -> u64 {
        self.weights.as_ref().map_or(0, |w| w.0)
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn param_noise(&self) -> ParamNoiseState {
        self.param_noise
    }

    pub fn set_weights(&mut self, version: u64, actor: ParameterSet) -> Result<()> {
        self.actor_spec.network().check_params(&actor)?;
        self.weights = Some((version, actor));
        Ok(())
    }

    /// Pulls newer weights of the followed trainer. Returns whether the
    /// version changed.
    pub fn refresh(&mut self, t: &mut dyn Transport) -> Result<bool> {
        let reply = t.call(&WireMessage::WeightsRequest {
            trainer_id: self.opts.trainer_id,
            have_version: self.version(),
        })?;
        match reply {
            WireMessage::WeightsPublish { version, checkpoint, .. } => {
                if version <= self.version() {
                    return Ok(false);
                }
                let ck = AgentCheckpoint::decode(&checkpoint)?;
                self.set_weights(version, ck.actor)?;
                Ok(true)
            }
            WireMessage::NoUpdate => Ok(false),
            WireMessage::Error { message } => Err(Error::Protocol(message)),
            other => Err(Error::Protocol(format!("unexpected reply type {} to a weights request", other.type_byte()))),
        }
    }

    /// Seed of the next episode: the validation list in order for a
    /// deterministic sampler, fresh random seeds otherwise.
    pub fn next_seed(&mut self) -> u64 {
        if self.opts.deterministic {
            let s = self.validation_seeds[self.val_cursor % self.validation_seeds.len()];
            self.val_cursor += 1;
            s
        } else {
            self.rng.random()
        }
    }

    /// One episode with the current weights.
    pub fn run_episode(&mut self, seed: u64) -> Result<(Episode, EpisodeReport)> {
        let det = self.opts.deterministic;
        if det && self.weights.is_none() {
            return Err(Error::Empty("deterministic sampler has no weights yet".into()));
        }
        let spec = self.actor_spec.clone();
        let ad = spec.action_dim;
        let gaussian_actor = spec.kind == ActorKind::Gaussian;
        // the trajectory's exploration scheme is fixed here
        let choice = match (&self.weights, det || gaussian_actor) {
            (Some(_), false) => Some(self.exploration.select(
                self.opts.sampler_id as usize % self.n_samplers,
                self.n_samplers,
                self.param_noise.sigma_p,
                &mut self.rng,
            )),
            _ => None,
        };
        let perturbed = match (choice, &self.weights) {
            (Some(ExplorationChoice::ParamNoise { sigma_p }), Some((_, p))) => Some(perturb_params(p, sigma_p, &mut self.rng)),
            _ => None,
        };
        let mut probe: Vec<Vec<f64>> = Vec::new();

        let mut history = HistoryStack::new(self.env.obs_dim(), self.history_len);
        let mut obs = self.env.reset(seed);
        let mut transitions = Vec::new();
        let mut report = EpisodeReport {
            ret: 0.0,
            steps: 0,
            success: false,
            seed,
            policy_version: self.version(),
            choice,
        };
        loop {
            history.push(&obs);
            let input = history.stacked();
            let action = match &self.weights {
                None => (0..ad).map(|_| self.rng.random_range(-1.0..=1.0)).collect(),
                Some((_, p)) if det => spec.act_greedy(p, &input)?,
                Some((_, p)) if gaussian_actor => spec.act_stochastic(p, &input, &mut self.rng)?.0,
                Some((_, p)) => match choice {
                    Some(ExplorationChoice::Gaussian { sigma }) => apply_action_noise(&spec.act_deterministic(p, &input)?, sigma, &mut self.rng),
                    Some(ExplorationChoice::ParamNoise { .. }) => {
                        if probe.len() == self.exploration.probe_size {
                            probe.remove(0);
                        }
                        probe.push(input.clone());
                        spec.act_deterministic(perturbed.as_ref().expect("perturbed copy"), &input)?
                    }
                    _ => spec.act_deterministic(p, &input)?,
                },
            };
            let step = self.env.step(&action)?;
            report.ret += step.reward;
            report.steps += 1;
            transitions.push(Transition {
                obs: obs.clone(),
                action,
                reward: step.reward,
                done: step.done,
            });
            if !self.opts.throttle.is_zero() {
                std::thread::sleep(self.opts.throttle);
            }
            if step.done {
                report.success = step.success;
                break;
            }
            obs = step.obs;
        }

        if let (Some(q), Some((_, p))) = (&perturbed, &self.weights) {
            let flat: Vec<f64> = probe.concat();
            let d = action_distance(&spec, p, q, &flat)?;
            self.param_noise = adapt_param_noise(self.param_noise, d);
        }
        self.episodes += 1;
        let mut episode = Episode::new(transitions);
        episode.sampler_id = self.opts.sampler_id;
        episode.policy_version = report.policy_version;
        episode.env_seed = seed;
        Ok((episode, report))
    }

    pub fn metrics(&self, report: &EpisodeReport, elapsed: Duration) -> MetricsRecord {
        let key = if self.opts.deterministic { "validation_return" } else { "episode_return" };
        MetricsRecord::new(self.opts.node_name())
            .with(key, report.ret)
            .with("episode_steps", report.steps as f64)
            .with("success", report.success as u8 as f64)
            .with("policy_version", report.policy_version as f64)
            .with("samples_per_sec", report.steps as f64 / elapsed.as_secs_f64().max(1e-9))
    }

    /// Refresh, roll out, push; until `stop` is set or the episode budget
    /// runs out.
    pub fn run(&mut self, t: &mut dyn Transport, stop: &AtomicBool) -> Result<u64> {
        let start_episodes = self.episodes;
        let mut since_refresh = self.opts.refresh_every;
        while !stop.load(Ordering::SeqCst) {
            if self.opts.max_episodes.is_some_and(|m| self.episodes - start_episodes >= m) {
                break;
            }
            if since_refresh >= self.opts.refresh_every || self.weights.is_none() {
                match self.refresh(t) {
                    Ok(_) => since_refresh = 0,
                    Err(e @ Error::Protocol(_)) => log::warn!("{}: weights refresh failed: {e}", self.opts.node_name()),
                    Err(e) => return Err(e),
                }
            }
            if self.opts.deterministic && self.weights.is_none() {
                std::thread::sleep(Duration::from_millis(100));
                continue;
            }
            let seed = self.next_seed();
            let started = Instant::now();
            let (episode, report) = self.run_episode(seed)?;
            since_refresh += 1;
            if self.opts.push_episodes {
                if let WireMessage::Error { message } = t.call(&WireMessage::EpisodePush { episode })? {
                    log::warn!("{}: episode rejected: {message}", self.opts.node_name());
                }
            }
            t.call(&WireMessage::MetricsPush {
                record: self.metrics(&report, started.elapsed()),
            })?;
        }
        Ok(self.episodes - start_episodes)
    }
}
