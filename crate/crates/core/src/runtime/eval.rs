use crate::agents::ActorSpec;
use crate::env::{make_env, rollout, EnvConfig};
use crate::error::Result;
use crate::nn::ParameterSet;
use crate::replay::HistoryStack;

/// Noise-free returns of an actor, one per seed, in seed order.
pub fn evaluate_actor(env_cfg: &EnvConfig, spec: &ActorSpec, params: &ParameterSet, history_len: usize, seeds: &[u64]) -> Result<Vec<f64>> {
    evaluate_policy(env_cfg, history_len, seeds, |input| spec.act_greedy(params, input))
}

/// Returns of `policy` (fed the stacked observation history) per seed.
pub fn evaluate_policy(env_cfg: &EnvConfig, history_len: usize, seeds: &[u64], mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut env = make_env(env_cfg)?;
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut history = HistoryStack::new(env.obs_dim(), history_len);
        let s = rollout(env.as_mut(), seed, |obs| {
            history.push(obs);
            policy(&history.stacked())
        })?;
        out.push(s.ret);
    }
    Ok(out)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
