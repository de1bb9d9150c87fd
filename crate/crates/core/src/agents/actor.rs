use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, NetworkSpec, ParameterSet, Tape, Var};

/// Scale applied to the initial weights of the actor's output layer.
pub const ACTOR_HEAD_SCALE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    #[default]
    Deterministic,
    Gaussian,
}

/// Policy network. Actions live in `[-1, 1]^action_dim`; deterministic
/// actors emit `tanh(mean)`, gaussian actors additionally emit a clamped
/// log standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorSpec {
    pub kind: ActorKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for ActorSpec {
    fn default() -> Self {
        ActorSpec {
            kind: ActorKind::Deterministic,
            obs_dim: 1,
            action_dim: 1,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            layer_norm: false,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

/// Pre-squash outputs of an actor on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ActorHeads {
    pub mean: Var,
    /// Clamped log standard deviation (gaussian actors only).
    pub log_std: Option<Var>,
}

impl ActorSpec {
    pub fn new(kind: ActorKind, obs_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Self {
        ActorSpec {
            kind,
            obs_dim,
            action_dim,
            hidden,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_dim == 0 {
            return Err(Error::config("agent.actor", "obs_dim and action_dim must be positive"));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::config("agent.actor.log_std_min", "must be below log_std_max"));
        }
        self.network().validate()
    }

    pub fn network(&self) -> NetworkSpec {
        let heads = match self.kind {
            ActorKind::Deterministic => vec![self.action_dim],
            ActorKind::Gaussian => vec![self.action_dim, self.action_dim],
        };
        NetworkSpec {
            input_dim: self.obs_dim,
            hidden: self.hidden.clone(),
            activation: self.activation,
            layer_norm: self.layer_norm,
            heads,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        self.validate()?;
        self.network().init(ACTOR_HEAD_SCALE, rng)
    }

    pub fn heads(&self, tape: &mut Tape, params: &Bound, obs: Var) -> Result<ActorHeads> {
        let out = self.network().forward_heads(tape, params, obs)?;
        let log_std = match self.kind {
            ActorKind::Deterministic => None,
            ActorKind::Gaussian => Some(tape.clamp(out[1], self.log_std_min, self.log_std_max)),
        };
        Ok(ActorHeads { mean: out[0], log_std })
    }

    /// `tanh(mean(obs))` on a tape.
    pub fn deterministic_tape(&self, tape: &mut Tape, params: &Bound, obs: Var) -> Result<Var> {
        let h = self.heads(tape, params, obs)?;
        Ok(tape.squash(h.mean))
    }

    /// Reparametrized sample `tanh(mean + σ·ε)` for the given standard normal
    /// draws `eps` (`rows x action_dim`), with its log-density as a
    /// `rows x 1` column.
    pub fn sample_tape(&self, tape: &mut Tape, params: &Bound, obs: Var, eps: &[f64]) -> Result<(Var, Var)> {
        if self.kind != ActorKind::Gaussian {
            return Err(Error::InvalidArgument("stochastic actions need a gaussian actor".into()));
        }
        let h = self.heads(tape, params, obs)?;
        let log_std = h.log_std.expect("gaussian actor");
        let (rows, d) = tape.dims(h.mean);
        if eps.len() != rows * d {
            return Err(Error::shape("actor noise", rows * d, eps.len()));
        }
        let std = tape.exp(log_std);
        let noise = tape.mul_const(std, eps.to_vec())?;
        let u = tape.add(h.mean, noise)?;
        let action = tape.squash(u);

        // log N(u; mean, σ) = Σ -ε²/2 - log σ - log(2π)/2
        let row_const: Vec<f64> = eps
            .chunks(d)
            .map(|e| -0.5 * e.iter().map(|v| v * v).sum::<f64>() - 0.5 * d as f64 * (2.0 * PI).ln() - 2.0 * d as f64 * LN_2)
            .collect();
        let neg_ls = tape.scale(log_std, -1.0);
        let gauss = tape.sum_cols(neg_ls);
        // -log(1 - tanh²u) = 2u + 2 softplus(-2u) - 2 ln 2
        let m2u = tape.scale(u, -2.0);
        let sp = tape.softplus(m2u);
        let inner = tape.add(u, sp)?;
        let corr = tape.sum_cols(inner);
        let corr = tape.scale(corr, 2.0);
        let lp = tape.add(gauss, corr)?;
        let lp = tape.add_const(lp, &row_const)?;
        Ok((action, lp))
    }

    fn check_obs(&self, obs: &[f64]) -> Result<usize> {
        if obs.is_empty() || obs.len() % self.obs_dim != 0 {
            return Err(Error::shape("actor observation", self.obs_dim, obs.len()));
        }
        Ok(obs.len() / self.obs_dim)
    }

    /// Deterministic actions for a row-major batch of observations.
    pub fn act_deterministic_batch(&self, params: &ParameterSet, obs: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check_obs(obs)?;
        let mut tape = Tape::new();
        let bound = tape.bind(params, false)?;
        let x = tape.constant(obs.to_vec(), rows, self.obs_dim)?;
        let a = self.deterministic_tape(&mut tape, &bound, x)?;
        Ok(tape.value(a).to_vec())
    }

    pub fn act_deterministic(&self, params: &ParameterSet, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape("actor observation", self.obs_dim, obs.len()));
        }
        self.act_deterministic_batch(params, obs)
    }

    /// Stochastic actions and log-probabilities for a batch, with explicit
    /// noise `eps`.
    pub fn act_stochastic_with(&self, params: &ParameterSet, obs: &[f64], eps: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = self.check_obs(obs)?;
        let mut tape = Tape::new();
        let bound = tape.bind(params, false)?;
        let x = tape.constant(obs.to_vec(), rows, self.obs_dim)?;
        let (a, lp) = self.sample_tape(&mut tape, &bound, x, eps)?;
        Ok((tape.value(a).to_vec(), tape.value(lp).to_vec()))
    }

    pub fn act_stochastic_batch<R: Rng + ?Sized>(&self, params: &ParameterSet, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = self.check_obs(obs)?;
        let eps: Vec<f64> = (0..rows * self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.act_stochastic_with(params, obs, &eps)
    }

    /// One action and its log-density.
    pub fn act_stochastic<R: Rng + ?Sized>(&self, params: &ParameterSet, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape("actor observation", self.obs_dim, obs.len()));
        }
        let (a, lp) = self.act_stochastic_batch(params, obs, rng)?;
        Ok((a, lp[0]))
    }

    /// Greedy action for evaluation: `tanh(mean)` for both kinds.
    pub fn act_greedy(&self, params: &ParameterSet, obs: &[f64]) -> Result<Vec<f64>> {
        self.act_deterministic(params, obs)
    }
}
