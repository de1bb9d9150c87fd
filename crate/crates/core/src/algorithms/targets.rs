use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::AlgoKind;
use crate::agents::{ActorKind, ActorSpec, CriticSpec};
use crate::distributional::{bellman_shift, ValueDistribution};
use crate::error::{Error, Result};
use crate::nn::ParameterSet;

/// Networks and coefficients entering a TD target.
pub struct TargetNets<'a> {
    pub algo: AlgoKind,
    pub actor_spec: &'a ActorSpec,
    pub critic_spec: &'a CriticSpec,
    /// Actor proposing the next action.
    pub actor: &'a ParameterSet,
    pub critics: &'a [ParameterSet],
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    pub alpha_ent: f64,
}

/// Per-head returns and bootstrap discounts for a batch. `discounts` must
/// already be zero for terminated slices.
pub struct TargetInputs<'a> {
    pub next_obs: &'a [f64],
    /// `[head][row]`
    pub returns: &'a [Vec<f64>],
    /// `[head][row]`
    pub discounts: &'a [Vec<f64>],
}

/// Target distributions per head as row-major `rows x n_atoms` buffers:
/// projected probabilities for categorical critics, atom positions
/// otherwise.
pub fn td_targets<R: Rng + ?Sized>(nets: &TargetNets, inp: &TargetInputs, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let cs = nets.critic_spec;
    let heads = cs.n_gamma_heads;
    let want = nets.algo.n_critics();
    if nets.critics.len() != want {
        return Err(Error::InvalidArgument(format!("{:?} needs {want} target critics, got {}", nets.algo, nets.critics.len())));
    }
    if inp.returns.len() != heads || inp.discounts.len() != heads {
        return Err(Error::shape("target heads", heads, inp.returns.len().min(inp.discounts.len())));
    }
    let rows = inp.returns[0].len();
    if inp.next_obs.len() != rows * cs.obs_dim {
        return Err(Error::shape("target next observations", rows * cs.obs_dim, inp.next_obs.len()));
    }

    let (actions, log_probs) = match nets.algo {
        AlgoKind::Ddpg => (nets.actor_spec.act_deterministic_batch(nets.actor, inp.next_obs)?, None),
        AlgoKind::Td3 => {
            let mut a = nets.actor_spec.act_deterministic_batch(nets.actor, inp.next_obs)?;
            if nets.smoothing_sigma > 0.0 {
                let normal = Normal::new(0.0, nets.smoothing_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let c = nets.smoothing_clip;
                for v in a.iter_mut() {
                    let eps: f64 = normal.sample(rng);
                    *v = (*v + eps.clamp(-c, c)).clamp(-1.0, 1.0);
                }
            }
            (a, None)
        }
        AlgoKind::Sac => {
            if nets.actor_spec.kind != ActorKind::Gaussian {
                return Err(Error::InvalidArgument("SAC targets need a gaussian actor".into()));
            }
            let (a, lp) = nets.actor_spec.act_stochastic_batch(nets.actor, inp.next_obs, rng)?;
            (a, Some(lp))
        }
    };

    let outs: Vec<Vec<Vec<f64>>> = nets
        .critics
        .iter()
        .map(|c| cs.eval_batch(c, inp.next_obs, &actions))
        .collect::<Result<_>>()?;
    let n = cs.n_atoms();
    let mut targets = vec![Vec::with_capacity(rows * n); heads];
    for (h, target) in targets.iter_mut().enumerate() {
        for row in 0..rows {
            let mut best = 0;
            let mut best_mean = f64::INFINITY;
            for (c, out) in outs.iter().enumerate() {
                let m = cs.row_mean(&out[h][row * n..(row + 1) * n]);
                if m < best_mean {
                    best_mean = m;
                    best = c;
                }
            }
            let disc = inp.discounts[h][row];
            let mut reward = inp.returns[h][row];
            if let Some(lp) = &log_probs {
                reward -= disc * nets.alpha_ent * lp[row];
            }
            let dist = cs.to_distribution(&outs[best][h][row * n..(row + 1) * n]);
            target.extend(bellman_shift(&dist, reward, disc).resolve()?);
        }
    }
    Ok(targets)
}

/// Target distributions for a single transition, one per gamma head.
#[allow(clippy::too_many_arguments)]
pub fn single_target<R: Rng + ?Sized>(
    nets: &TargetNets,
    reward: f64,
    next_obs: &[f64],
    done: bool,
    discounts: &[f64],
    rng: &mut R,
) -> Result<Vec<ValueDistribution>> {
    let returns: Vec<Vec<f64>> = discounts.iter().map(|_| vec![reward]).collect();
    let discounts: Vec<Vec<f64>> = discounts.iter().map(|d| vec![if done { 0.0 } else { *d }]).collect();
    let t = td_targets(
        nets,
        &TargetInputs {
            next_obs,
            returns: &returns,
            discounts: &discounts,
        },
        rng,
    )?;
    Ok(t.iter().map(|row| nets.critic_spec.to_distribution(row)).collect())
}

fn require(nets: &TargetNets, algo: AlgoKind) -> Result<()> {
    if nets.algo != algo {
        return Err(Error::InvalidArgument(format!("expected {algo:?} target networks, got {:?}", nets.algo)));
    }
    Ok(())
}

pub fn ddpg_target<R: Rng + ?Sized>(nets: &TargetNets, reward: f64, next_obs: &[f64], done: bool, discounts: &[f64], rng: &mut R) -> Result<Vec<ValueDistribution>> {
    require(nets, AlgoKind::Ddpg)?;
    single_target(nets, reward, next_obs, done, discounts, rng)
}

pub fn td3_target<R: Rng + ?Sized>(nets: &TargetNets, reward: f64, next_obs: &[f64], done: bool, discounts: &[f64], rng: &mut R) -> Result<Vec<ValueDistribution>> {
    require(nets, AlgoKind::Td3)?;
    single_target(nets, reward, next_obs, done, discounts, rng)
}

pub fn sac_target<R: Rng + ?Sized>(nets: &TargetNets, reward: f64, next_obs: &[f64], done: bool, discounts: &[f64], rng: &mut R) -> Result<Vec<ValueDistribution>> {
    require(nets, AlgoKind::Sac)?;
    single_target(nets, reward, next_obs, done, discounts, rng)
}
