//! Per-trajectory hybrid exploration: gaussian action noise with a
//! per-sampler scale, adaptive parameter-space noise, or none.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agents::ActorSpec;
use crate::error::{Error, Result};
use crate::nn::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExplorationChoice {
    Gaussian { sigma: f64 },
    ParamNoise { sigma_p: f64 },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub gaussian_prob: f64,
    pub param_noise_prob: f64,
    /// Gaussian scale of the last sampler; sampler `j` of `J` uses
    /// `sigma_max * j / (J - 1)`.
    pub sigma_max: f64,
    pub param_noise: ParamNoiseState,
    /// Observations kept for measuring the parameter-noise action distance.
    pub probe_size: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            gaussian_prob: 0.7,
            param_noise_prob: 0.2,
            sigma_max: 0.3,
            param_noise: ParamNoiseState::default(),
            probe_size: 64,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        let p = [self.gaussian_prob, self.param_noise_prob];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || p[0] + p[1] > 1.0 + 1e-12 {
            return Err(Error::config("exploration.gaussian_prob", "probabilities must lie in [0, 1] and sum to at most 1"));
        }
        if !(self.sigma_max >= 0.0) {
            return Err(Error::config("exploration.sigma_max", "must be >= 0"));
        }
        let pn = &self.param_noise;
        if !(pn.sigma_p > 0.0) {
            return Err(Error::config("exploration.param_noise.sigma_p", "must be > 0"));
        }
        if !(pn.delta > 0.0) {
            return Err(Error::config("exploration.param_noise.delta", "must be > 0"));
        }
        if !(pn.alpha > 1.0) {
            return Err(Error::config("exploration.param_noise.alpha", "must be > 1"));
        }
        if self.probe_size == 0 {
            return Err(Error::config("exploration.probe_size", "must be positive"));
        }
        Ok(())
    }

    /// Parameter noise is only meaningful on layer-normalized actors.
    pub fn check_actor(&self, actor: &ActorSpec) -> Result<()> {
        if self.param_noise_prob > 0.0 && !actor.layer_norm {
            return Err(Error::config("agent.actor.layer_norm", "parameter-space noise requires a layer-norm actor"));
        }
        Ok(())
    }

    pub fn select<R: Rng + ?Sized>(&self, sampler_id: usize, n_samplers: usize, sigma_p: f64, rng: &mut R) -> ExplorationChoice {
        let u: f64 = rng.random();
        if u < self.gaussian_prob {
            ExplorationChoice::Gaussian {
                sigma: sigma_schedule(sampler_id, n_samplers, self.sigma_max),
            }
        } else if u < self.gaussian_prob + self.param_noise_prob {
            ExplorationChoice::ParamNoise { sigma_p }
        } else {
            ExplorationChoice::None
        }
    }
}

/// Gaussian scale of sampler `j` among `n`: linear from 0 to `sigma_max`.
pub fn sigma_schedule(j: usize, n: usize, sigma_max: f64) -> f64 {
    if n <= 1 {
        sigma_max
    } else if j + 1 >= n {
        sigma_max
    } else {
        sigma_max * j as f64 / (n - 1) as f64
    }
}

/// Default 70/20/10 draw with `σ_j = 0.3 j / (J - 1)`.
pub fn select_exploration<R: Rng + ?Sized>(sampler_id: usize, n_samplers: usize, rng: &mut R) -> ExplorationChoice {
    let cfg = ExplorationConfig::default();
    cfg.select(sampler_id, n_samplers, cfg.param_noise.sigma_p, rng)
}

/// Copy of `params` with independent `N(0, σ_p²)` noise on every entry.
pub fn perturb_params<R: Rng + ?Sized>(params: &ParameterSet, sigma_p: f64, rng: &mut R) -> ParameterSet {
    let mut out = params.clone();
    if sigma_p == 0.0 {
        return out;
    }
    for (_, t) in out.iter_mut() {
        for v in t.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma_p * z;
        }
    }
    out
}

/// Adaptive scale of parameter-space noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamNoiseState {
    pub sigma_p: f64,
    /// Target mean action distance.
    pub delta: f64,
    pub alpha: f64,
}

impl Default for ParamNoiseState {
    fn default() -> Self {
        ParamNoiseState {
            sigma_p: 0.1,
            delta: 0.2,
            alpha: 1.01,
        }
    }
}

/// Shrinks σ_p when the measured distance exceeds δ, grows it otherwise
/// (ties grow).
pub fn adapt_param_noise(state: ParamNoiseState, distance: f64) -> ParamNoiseState {
    let sigma_p = if distance > state.delta {
        state.sigma_p / state.alpha
    } else {
        state.sigma_p * state.alpha
    };
    ParamNoiseState { sigma_p, ..state }
}

/// Mean Euclidean distance between the deterministic actions of two
/// parameter sets over a row-major probe batch.
pub fn action_distance(spec: &ActorSpec, params: &ParameterSet, perturbed: &ParameterSet, probe: &[f64]) -> Result<f64> {
    let a = spec.act_deterministic_batch(params, probe)?;
    let b = spec.act_deterministic_batch(perturbed, probe)?;
    let d = spec.action_dim;
    let rows = a.len() / d;
    Ok(a.chunks(d)
        .zip(b.chunks(d))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum::<f64>()
        / rows as f64)
}

/// `action + N(0, σ² I)` clamped to `[-1, 1]`.
pub fn apply_action_noise<R: Rng + ?Sized>(action: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma <= 0.0 {
        return action.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    action
        .iter()
        .map(|a| (a + normal.sample(rng)).clamp(-1.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::agents::ActorKind;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(sigma_schedule(0, 4, 0.3), 0.0);
        assert_eq!(sigma_schedule(3, 4, 0.3), 0.3);
        assert_eq!(sigma_schedule(0, 1, 0.3), 0.3);
        assert!((sigma_schedule(1, 4, 0.3) - 0.1).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            if let ExplorationChoice::Gaussian { sigma } = select_exploration(0, 4, &mut rng) {
                assert_eq!(sigma, 0.0);
            }
        }
    }

    #[test]
    fn branch_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match select_exploration(2, 5, &mut rng) {
                ExplorationChoice::Gaussian { .. } => counts[0] += 1,
                ExplorationChoice::ParamNoise { .. } => counts[1] += 1,
                ExplorationChoice::None => counts[2] += 1,
            }
        }
        for (c, p) in counts.iter().zip([0.7, 0.2, 0.1]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    fn ln_actor() -> (ActorSpec, ParameterSet) {
        let spec = ActorSpec {
            layer_norm: true,
            ..ActorSpec::new(ActorKind::Deterministic, 4, 2, vec![16])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = spec.init(&mut rng).unwrap();
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        (spec, p)
    }

    #[test]
    fn perturbation_examples() {
        let (spec, p) = ln_actor();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(perturb_params(&p, 0.0, &mut rng), p);
        let q = perturb_params(&p, 0.1, &mut rng);
        let original = p.clone();
        assert_eq!(p, original);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_ne!(spec.act_deterministic(&p, &obs).unwrap(), spec.act_deterministic(&q, &obs).unwrap());
        }
    }

    #[test]
    fn perturbation_moments() {
        let mut p = ParameterSet::new();
        p.insert("w", crate::nn::Tensor::scalar(1.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| perturb_params(&p, 0.2, &mut rng).get("w").unwrap().data()[0] - 1.5).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        // standard errors: 0.002 for the mean, about 0.0006 for the variance
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 0.04).abs() < 0.003, "{var}");
    }

    #[test]
    fn adaptation_rule() {
        let s = ParamNoiseState::default();
        assert_eq!(adapt_param_noise(s, s.delta).sigma_p, s.sigma_p * s.alpha);
        let mut cur = s;
        for _ in 0..50 {
            let next = adapt_param_noise(cur, 10.0);
            assert!(next.sigma_p < cur.sigma_p);
            cur = next;
        }
    }

    #[test]
    fn closed_loop_converges() {
        // linear actor; a fixed noise direction makes the distance a
        // deterministic function of sigma
        let spec = ActorSpec {
            layer_norm: false,
            ..ActorSpec::new(ActorKind::Deterministic, 4, 2, vec![])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = spec.init(&mut rng).unwrap();
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let probe: Vec<f64> = (0..64 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut state = ParamNoiseState {
            sigma_p: 0.3,
            ..Default::default()
        };
        let mut d = 0.0;
        for _ in 0..200 {
            let q = perturb_params(&p, state.sigma_p, &mut ChaCha8Rng::seed_from_u64(77));
            d = action_distance(&spec, &p, &q, &probe).unwrap();
            state = adapt_param_noise(state, d);
        }
        let (lo, hi) = (state.delta / state.alpha.powi(2), state.delta * state.alpha.powi(2));
        assert!(d >= lo && d <= hi, "d = {d}");
    }

    #[test]
    fn action_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(apply_action_noise(&[0.2, -0.9], 0.0, &mut rng), vec![0.2, -0.9]);
        for _ in 0..1000 {
            assert!(apply_action_noise(&[0.99, -0.99], 0.5, &mut rng).iter().all(|v| v.abs() <= 1.0));
        }
        // centered action keeps clamping negligible at sigma = 0.1
        let n = 100_000;
        let s: Vec<f64> = (0..n).map(|_| apply_action_noise(&[0.0], 0.1, &mut rng)[0]).collect();
        let m = s.iter().sum::<f64>() / n as f64;
        let sd = (s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.002, "{sd}");
    }

    #[test]
    fn param_noise_needs_layer_norm() {
        let cfg = ExplorationConfig::default();
        let plain = ActorSpec::new(ActorKind::Deterministic, 3, 1, vec![4]);
        assert!(cfg.check_actor(&plain).is_err());
        let ln = ActorSpec { layer_norm: true, ..plain };
        cfg.check_actor(&ln).unwrap();
        cfg.validate().unwrap();
    }
}
