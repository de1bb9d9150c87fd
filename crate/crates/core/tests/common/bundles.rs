//! Random ensemble bundles and a one-candidate-at-a-time scoring oracle.

use crl::agents::{dist_mean, ActorKind, ActorSpec, CriticSpec, HeadKind};
use crl::ensemble::{EnsembleBundle, MixtureSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const OBS: usize = 3;
pub const ACT: usize = 2;

pub fn random_bundle(rng: &mut ChaCha8Rng) -> EnsembleBundle {
    let n_actors = rng.random_range(1..=4);
    let n_critics = rng.random_range(1..=3);
    let actors = (0..n_actors)
        .map(|_| {
            let kind = if rng.random_bool(0.5) { ActorKind::Deterministic } else { ActorKind::Gaussian };
            let spec = ActorSpec::new(kind, OBS, ACT, vec![rng.random_range(2..=6)]);
            let p = spec.init(rng).unwrap();
            (spec, p)
        })
        .collect();
    let critics = (0..n_critics)
        .map(|_| {
            let head = if rng.random_bool(0.5) {
                HeadKind::Quantile { n_atoms: rng.random_range(1..=5) }
            } else {
                HeadKind::Categorical {
                    n_atoms: rng.random_range(2..=7),
                    v_min: -3.0,
                    v_max: 3.0,
                }
            };
            let spec = CriticSpec::new(head, rng.random_range(1..=3), OBS, ACT, vec![rng.random_range(2..=6)]);
            let p = spec.init(rng).unwrap();
            (spec, p)
        })
        .collect();
    let mixtures = match rng.random_range(0..3) {
        0 => MixtureSet::None,
        1 => MixtureSet::Pairwise {
            weights: (0..rng.random_range(1..=3)).map(|_| rng.random_range(0.0..=1.0)).collect(),
        },
        _ => MixtureSet::Explicit {
            coefficients: (0..rng.random_range(1..=3))
                .map(|_| {
                    let raw: Vec<f64> = (0..n_actors).map(|_| rng.random_range(0.0..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                })
                .collect(),
        },
    };
    EnsembleBundle { actors, critics, mixtures }
}

/// Every candidate built and scored one at a time.
pub fn exhaustive(b: &EnsembleBundle, obs: &[f64]) -> (usize, Vec<f64>) {
    let proposals: Vec<Vec<f64>> = b.actors.iter().map(|(s, p)| s.act_greedy(p, obs).unwrap()).collect();
    let mut cands = proposals.clone();
    let n = proposals.len();
    match &b.mixtures {
        MixtureSet::None => {}
        MixtureSet::Pairwise { weights } => {
            for i in 0..n {
                for j in i + 1..n {
                    for &w in weights {
                        cands.push((0..ACT).map(|d| w * proposals[i][d] + (1.0 - w) * proposals[j][d]).collect());
                    }
                }
            }
        }
        MixtureSet::Explicit { coefficients } => {
            for c in coefficients {
                cands.push(
                    (0..ACT)
                        .map(|d| {
                            let mut x = 0.0;
                            for k in 0..n {
                                if c[k] != 0.0 {
                                    x += c[k] * proposals[k][d];
                                }
                            }
                            x
                        })
                        .collect(),
                );
            }
        }
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, a) in cands.iter().enumerate() {
        let mut s = 0.0;
        for (spec, p) in &b.critics {
            let heads = spec.critic_eval(p, obs, a).unwrap();
            s += dist_mean(heads.last().unwrap());
        }
        let s = s / b.critics.len() as f64;
        if s > best.1 {
            best = (i, s);
        }
    }
    (best.0, cands[best.0].clone())
}
