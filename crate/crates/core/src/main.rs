use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use crl::agents::AgentCheckpoint;
use crl::config::{validation_seeds, ExperimentConfig};
use crl::ensemble::{select_checkpoints, EnsembleBundle};
use crl::env::{EnvName, MoveField};
use crl::error::{Error, Result};
use crl::replay::HistoryStack;
use crl::runtime::local::{train_local, LocalOptions};
use crl::runtime::metrics::{aggregate_csv, read_metrics};
use crl::runtime::plot::plot_svg;
use crl::runtime::{db_addr, evaluate_policy, mean, serve_db, shutdown_db, std_dev, Backoff, Sampler, SamplerOptions, TcpTransport, Trainer, TrainerOptions, WireMessage};

#[derive(Parser)]
#[command(name = "crl", version, about = "Distributed off-policy actor-critic training for continuous control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Experiment YAML; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Observation history length, overriding the config.
    #[arg(long)]
    history_len: Option<usize>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        match self.history_len {
            Some(h) => cfg.with_history_len(h),
            None => Ok(cfg),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the database node until a client sends Shutdown.
    ServeDb {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Listen address; defaults to CRL_DB_ADDR, then the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run a sampler node.
    Sample {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        sampler_id: u32,
        /// Trainer whose weights to follow.
        #[arg(long, default_value_t = 0)]
        trainer_id: u32,
        /// Noise-free rollouts on the validation seeds.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        max_episodes: Option<u64>,
        /// Seconds without a db connection before giving up.
        #[arg(long, default_value_t = 30)]
        give_up_secs: u64,
    },
    /// Run a trainer node.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 0)]
        trainer_id: u32,
        /// Update budget, overriding the config; 0 exits after warm-up.
        #[arg(long)]
        updates: Option<u64>,
        #[arg(long, default_value_t = 30)]
        give_up_secs: u64,
    },
    /// Whole stack in one process.
    Local {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 200_000)]
        max_env_steps: u64,
        /// Stop once validation reaches this mean return.
        #[arg(long)]
        target_return: Option<f64>,
    },
    /// Deterministic returns of a checkpoint (or an ensemble of several).
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        /// Number of validation seeds; the config's list when omitted.
        #[arg(long)]
        seeds: Option<usize>,
        /// Per-seed CSV output.
        #[arg(long, default_value = "evaluation.csv")]
        out: PathBuf,
    },
    /// Rank the checkpoints in a directory on validation seeds.
    RankCheckpoints {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// SVG of return against wall-clock from metrics files.
    Plot {
        /// A metrics directory or one JSON-lines file.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "returns.svg")]
        out: PathBuf,
        /// Also write the aggregated metrics CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_values_t = ["episode_return".to_string(), "validation_return".to_string()])]
        keys: Vec<String>,
    },
    /// One MoveField episode as CSV, from a checkpoint or the scripted controller.
    Render {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, conflicts_with = "scripted")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scripted: bool,
        #[arg(long, default_value_t = 10_000)]
        seed: u64,
        #[arg(long, default_value = "episode.csv")]
        out: PathBuf,
    },
    /// Ask the database to shut down.
    StopDb {
        #[command(flatten)]
        cfg: ConfigArg,
    },
}

fn backoff(give_up_secs: u64) -> Backoff {
    Backoff {
        give_up_after: Some(Duration::from_secs(give_up_secs)),
        ..Backoff::default()
    }
}

fn seeds_for(cfg: &ExperimentConfig, n: Option<usize>) -> Vec<u64> {
    n.map_or_else(|| cfg.seeds.validation.clone(), validation_seeds)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ServeDb { cfg, bind } => {
            let cfg = cfg.load()?;
            cfg.write_resolved(&cfg.logging.dir)?;
            let addr = bind.unwrap_or_else(|| db_addr(&cfg.runtime.db_addr));
            serve_db(&addr, cfg.replay.capacity, Some(&cfg.logging.dir.join("metrics")))
        }
        Command::Sample {
            cfg,
            sampler_id,
            trainer_id,
            deterministic,
            max_episodes,
            give_up_secs,
        } => {
            let cfg = cfg.load()?;
            let hello = WireMessage::HelloSampler { sampler_id, trainer_id };
            let mut t = TcpTransport::connect(&db_addr(&cfg.runtime.db_addr), Some(hello), backoff(give_up_secs), None)?;
            let mut opts = SamplerOptions::from_config(&cfg, sampler_id, trainer_id, deterministic);
            opts.max_episodes = max_episodes;
            let mut s = Sampler::from_config(&cfg, opts)?;
            log::info!("sampler {sampler_id} following trainer {trainer_id}{}", if deterministic { " (deterministic)" } else { "" });
            let n = s.run(&mut t, &AtomicBool::new(false))?;
            log::info!("sampler {sampler_id} finished after {n} episodes");
            Ok(())
        }
        Command::Train {
            cfg,
            trainer_id,
            updates,
            give_up_secs,
        } => {
            let cfg = cfg.load()?;
            let hello = WireMessage::HelloTrainer { trainer_id };
            let mut t = TcpTransport::connect(&db_addr(&cfg.runtime.db_addr), Some(hello), backoff(give_up_secs), None)?;
            let mut opts = TrainerOptions::from_config(&cfg, trainer_id)?;
            if let Some(u) = updates {
                opts.updates = u;
            }
            let dir = cfg.logging.dir.join(format!("trainer{trainer_id}"));
            cfg.write_resolved(&dir)?;
            let mut tr = Trainer::from_config(&cfg, opts)?;
            let report = tr.run(&mut t, &AtomicBool::new(false))?;
            log::info!(
                "trainer {trainer_id} done: {} updates, weights version {}, {} checkpoints",
                report.updates,
                report.version,
                report.checkpoints.len()
            );
            Ok(())
        }
        Command::Local {
            cfg,
            max_env_steps,
            target_return,
        } => {
            let cfg = cfg.load()?;
            cfg.write_resolved(&cfg.logging.dir)?;
            let r = train_local(
                &cfg,
                &LocalOptions {
                    max_env_steps,
                    target_return,
                    write_metrics: true,
                },
            )?;
            let path = cfg.logging.dir.join("final_actor.crlw");
            AgentCheckpoint {
                version: r.updates,
                fingerprint: cfg.fingerprint()?,
                actor: r.actor.clone(),
                critics: Vec::new(),
            }
            .save(&path)?;
            println!(
                "env steps {} updates {} best validation return {:.2} in {:.0}s; actor saved to {}",
                r.env_steps,
                r.updates,
                r.best_return(),
                r.wall_secs,
                path.display()
            );
            Ok(())
        }
        Command::Evaluate { cfg, checkpoint, seeds, out } => {
            let cfg = cfg.load()?;
            let seeds = seeds_for(&cfg, seeds);
            let cks = checkpoint.iter().map(|p| AgentCheckpoint::load(p)).collect::<Result<Vec<_>>>()?;
            let actor = cfg.actor_spec();
            let returns = if cks.len() == 1 {
                actor.network().check_params(&cks[0].actor)?;
                evaluate_policy(&cfg.env, cfg.replay.history_len, &seeds, |x| actor.act_greedy(&cks[0].actor, x))?
            } else {
                let bundle = EnsembleBundle::from_checkpoints(&cks, &actor, &cfg.critic_spec(), cfg.ensemble.mixtures.clone())?;
                evaluate_policy(&cfg.env, cfg.replay.history_len, &seeds, |x| Ok(bundle.act(x)?.action))?
            };
            let mut w = BufWriter::new(File::create(&out)?);
            writeln!(w, "seed,return")?;
            for (s, r) in seeds.iter().zip(&returns) {
                writeln!(w, "{s},{r}")?;
            }
            w.flush()?;
            println!("mean {:.4} std {:.4} over {} seeds; per-seed returns in {}", mean(&returns), std_dev(&returns), seeds.len(), out.display());
            Ok(())
        }
        Command::RankCheckpoints { cfg, dir, top_k, seeds, out } => {
            let cfg = cfg.load()?;
            let seeds = validation_seeds(seeds.unwrap_or(cfg.ensemble.n_seeds));
            let ranking = select_checkpoints(&dir, &cfg.env, &cfg.actor_spec(), cfg.replay.history_len, &seeds, top_k.unwrap_or(cfg.ensemble.top_k))?;
            let (csv, json) = ranking.write(&out)?;
            for (i, p) in ranking.ranked.iter().enumerate() {
                println!("{:>3}  {:>10.3} ± {:<9.3} {}", i + 1, p.mean, p.std, p.name);
            }
            for (p, why) in &ranking.skipped {
                println!("skipped {}: {why}", p.display());
            }
            println!("report: {} {}", csv.display(), json.display());
            Ok(())
        }
        Command::Plot { metrics, out, csv, keys } => {
            let records = read_metrics(&metrics)?;
            let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
            std::fs::write(&out, plot_svg(&records, &keys, "return vs wall-clock")?)?;
            if let Some(c) = csv {
                if !metrics.is_dir() {
                    return Err(Error::InvalidArgument("--csv needs a metrics directory".into()));
                }
                aggregate_csv(&metrics, &c)?;
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Render {
            cfg,
            checkpoint,
            scripted,
            seed,
            out,
        } => {
            let cfg = cfg.load()?;
            if cfg.env.name != EnvName::MoveField {
                return Err(Error::InvalidArgument("render supports move_field only".into()));
            }
            let e = &cfg.env;
            let mut env = MoveField::new(e.physics, e.reward, e.mode, e.frame_skip, e.t_max, e.second_phase)?;
            let mut w = BufWriter::new(File::create(&out)?);
            let total = match (checkpoint, scripted) {
                (Some(p), _) => {
                    let ck = AgentCheckpoint::load(&p)?;
                    let spec = cfg.actor_spec();
                    let mut history = HistoryStack::new(cfg.env.obs_dim(), cfg.replay.history_len);
                    env.render_csv(
                        seed,
                        |_, obs| {
                            history.push(obs);
                            spec.act_greedy(&ck.actor, &history.stacked())
                        },
                        &mut w,
                    )?
                }
                (None, true) => env.render_csv(seed, |env, _| Ok(env.scripted()), &mut w)?,
                (None, false) => return Err(Error::InvalidArgument("pass --checkpoint or --scripted".into())),
            };
            w.flush()?;
            println!("return {total:.3}; trajectory in {}", out.display());
            Ok(())
        }
        Command::StopDb { cfg } => shutdown_db(&db_addr(&cfg.load()?.runtime.db_addr)),
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match &cli.command {
        Command::Plot { .. } => "info".to_string(),
        Command::ServeDb { cfg, .. }
        | Command::Sample { cfg, .. }
        | Command::Train { cfg, .. }
        | Command::Local { cfg, .. }
        | Command::Evaluate { cfg, .. }
        | Command::RankCheckpoints { cfg, .. }
        | Command::Render { cfg, .. }
        | Command::StopDb { cfg } => cfg.load().map(|c| c.logging.level).unwrap_or_else(|_| "info".into()),
    };
    init_logging(&level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
