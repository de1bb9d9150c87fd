use std::path::{Path, PathBuf};

use crl::agents::HeadKind;
use crl::algorithms::AlgoKind;
use crl::config::ExperimentConfig;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn defaults_file_matches_built_in_defaults() {
    let cfg = ExperimentConfig::load(&config("defaults.yaml")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn competition_shape_maps_to_specs() {
    let cfg = ExperimentConfig::load(&config("competition.yaml")).unwrap();
    assert_eq!(cfg.algo.algo, AlgoKind::Td3);
    assert_eq!(cfg.env.frame_skip, 4);
    let critic = cfg.critic_spec();
    assert_eq!(critic.head, HeadKind::Quantile { n_atoms: 101 });
    assert_eq!(critic.n_gamma_heads, 10);
    let grid = cfg.algo.grid().unwrap();
    assert_eq!(grid.gammas.len(), 10);
    assert_eq!(grid.gamma_max(), 0.99);
    assert_eq!(cfg.actor_spec().obs_dim, cfg.env.obs_dim());
}

#[test]
fn toy_config_loads_and_round_trips() {
    let cfg = ExperimentConfig::load(&config("toy.yaml")).unwrap();
    assert_eq!(cfg.critic_spec().n_gamma_heads, 3);
    assert_eq!(ExperimentConfig::from_yaml(&cfg.to_yaml().unwrap()).unwrap(), cfg);
}
