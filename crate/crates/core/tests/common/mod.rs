#![allow(dead_code)]

pub mod bundles;
pub mod grad_suite;

use std::sync::Arc;

use crl::config::ExperimentConfig;
use crl::runtime::{Broker, InProcess, Sampler, SamplerOptions, Transport, WireMessage};

/// Small, fast configuration for node-level tests.
pub fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.env.t_max = 60;
    cfg.agent.actor.hidden = vec![16];
    cfg.agent.critic.hidden = vec![16];
    cfg.agent.critic.head = crl::agents::HeadKind::Quantile { n_atoms: 5 };
    cfg.algo.batch_size = 16;
    cfg.algo.hyperbolic = true;
    cfg.algo.n_heads = 2;
    cfg.replay.capacity = 50_000;
    cfg.replay.min_size = 100;
    cfg.runtime.publish_every = 5;
    cfg.runtime.checkpoint_every = 1_000;
    cfg.runtime.updates = 20;
    cfg.logging.metrics_every = 5;
    cfg.seeds.validation = crl::config::validation_seeds(4);
    cfg.validate().unwrap();
    cfg
}

/// Pushes `n` random-policy episodes into `broker`.
pub fn fill(broker: &Arc<Broker>, cfg: &ExperimentConfig, n: usize) {
    let mut opts = SamplerOptions::from_config(cfg, 900, 0, false);
    opts.seed = 12345;
    let mut s = Sampler::from_config(cfg, opts).unwrap();
    let mut t = InProcess::new(broker.clone());
    for _ in 0..n {
        let seed = s.next_seed();
        let (episode, _) = s.run_episode(seed).unwrap();
        assert_eq!(t.call(&WireMessage::EpisodePush { episode }).unwrap(), WireMessage::Ack);
    }
}

/// `batch` as a trainer receives it: encoded into a response frame and
/// decoded again.
pub fn through_codec(batch: &crl::replay::Batch) -> crl::replay::Batch {
    let frame = crl::runtime::wire::encode_frame(&WireMessage::BatchResponse { batch: batch.clone() }).unwrap();
    match crl::runtime::wire::decode_frame(&frame).unwrap() {
        WireMessage::BatchResponse { batch } => batch,
        other => panic!("{other:?}"),
    }
}
