use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributional::{CategoricalSupport, ValueDistribution};
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, NetworkSpec, ParameterSet, Tape, Var};

/// Output head of a critic. Scalar heads are handled as one-atom quantile
/// distributions everywhere downstream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadKind {
    Scalar,
    Categorical { n_atoms: usize, v_min: f64, v_max: f64 },
    Quantile { n_atoms: usize },
}

impl HeadKind {
    pub fn n_atoms(&self) -> usize {
        match *self {
            HeadKind::Scalar => 1,
            HeadKind::Categorical { n_atoms, .. } | HeadKind::Quantile { n_atoms } => n_atoms,
        }
    }

    pub fn support(&self) -> Option<CategoricalSupport> {
        match *self {
            HeadKind::Categorical { n_atoms, v_min, v_max } => CategoricalSupport::new(v_min, v_max, n_atoms).ok(),
            _ => None,
        }
    }
}

/// State-action value network. The action is concatenated to the
/// observation at the input layer; every gamma head is one affine map on the
/// shared torso.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticSpec {
    pub head: HeadKind,
    pub n_gamma_heads: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl Default for CriticSpec {
    fn default() -> Self {
        CriticSpec {
            head: HeadKind::Scalar,
            n_gamma_heads: 1,
            obs_dim: 1,
            action_dim: 1,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            layer_norm: false,
        }
    }
}

impl CriticSpec {
    pub fn new(head: HeadKind, n_gamma_heads: usize, obs_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Self {
        CriticSpec {
            head,
            n_gamma_heads,
            obs_dim,
            action_dim,
            hidden,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.head {
            HeadKind::Categorical { n_atoms, v_min, v_max } => {
                if !(v_min < v_max) {
                    return Err(Error::config("agent.critic.head.v_min", format!("must be below v_max ({v_min} >= {v_max})")));
                }
                if n_atoms < 2 {
                    return Err(Error::config("agent.critic.head.n_atoms", "categorical heads need at least 2 atoms"));
                }
            }
            HeadKind::Quantile { n_atoms } if n_atoms < 1 => {
                return Err(Error::config("agent.critic.head.n_atoms", "must be at least 1"));
            }
            _ => {}
        }
        if self.n_gamma_heads < 1 {
            return Err(Error::config("agent.critic.n_gamma_heads", "must be at least 1"));
        }
        if self.obs_dim == 0 || self.action_dim == 0 {
            return Err(Error::config("agent.critic", "obs_dim and action_dim must be positive"));
        }
        self.network().validate()
    }

    pub fn n_atoms(&self) -> usize {
        self.head.n_atoms()
    }

    pub fn network(&self) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.obs_dim + self.action_dim,
            hidden: self.hidden.clone(),
            activation: self.activation,
            layer_norm: self.layer_norm,
            heads: vec![self.n_atoms(); self.n_gamma_heads],
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        self.validate()?;
        self.network().init(1.0, rng)
    }

    /// Raw per-head outputs (`rows x n_atoms`): logits for categorical
    /// heads, atom positions otherwise.
    pub fn heads_tape(&self, tape: &mut Tape, params: &Bound, obs: Var, action: Var) -> Result<Vec<Var>> {
        let (_, oc) = tape.dims(obs);
        let (_, ac) = tape.dims(action);
        if oc != self.obs_dim {
            return Err(Error::shape("critic observation", self.obs_dim, oc));
        }
        if ac != self.action_dim {
            return Err(Error::shape("critic action", self.action_dim, ac));
        }
        let x = tape.concat_cols(obs, action)?;
        self.network().forward_heads(tape, params, x)
    }

    /// Expected value of a raw head output, as a `rows x 1` column.
    pub fn head_mean_tape(&self, tape: &mut Tape, head: Var) -> Result<Var> {
        match self.head.support() {
            Some(support) => {
                let p = tape.softmax_rows(head);
                let weighted = tape.mul_row_const(p, support.atoms())?;
                Ok(tape.sum_cols(weighted))
            }
            None => Ok(tape.mean_cols(head)),
        }
    }

    /// Per head, the row-major `rows x n_atoms` distribution parameters:
    /// probabilities for categorical heads, positions otherwise.
    pub fn eval_batch(&self, params: &ParameterSet, obs: &[f64], actions: &[f64]) -> Result<Vec<Vec<f64>>> {
        let rows = self.rows(obs, actions)?;
        let mut tape = Tape::new();
        let bound = tape.bind(params, false)?;
        let o = tape.constant(obs.to_vec(), rows, self.obs_dim)?;
        let a = tape.constant(actions.to_vec(), rows, self.action_dim)?;
        let heads = self.heads_tape(&mut tape, &bound, o, a)?;
        Ok(heads
            .into_iter()
            .map(|h| {
                if self.head.support().is_some() {
                    let p = tape.softmax_rows(h);
                    tape.value(p).to_vec()
                } else {
                    tape.value(h).to_vec()
                }
            })
            .collect())
    }

    /// Head means, indexed `[head][row]`.
    pub fn head_means_batch(&self, params: &ParameterSet, obs: &[f64], actions: &[f64]) -> Result<Vec<Vec<f64>>> {
        let outs = self.eval_batch(params, obs, actions)?;
        Ok(outs
            .iter()
            .map(|h| h.chunks(self.n_atoms()).map(|row| self.row_mean(row)).collect())
            .collect())
    }

    /// Mean of one row of [`CriticSpec::eval_batch`] output.
    pub fn row_mean(&self, row: &[f64]) -> f64 {
        match self.head.support() {
            Some(s) => row.iter().enumerate().map(|(i, p)| p * s.atom(i)).sum(),
            None => row.iter().sum::<f64>() / row.len() as f64,
        }
    }

    pub fn to_distribution(&self, row: &[f64]) -> ValueDistribution {
        match self.head.support() {
            Some(support) => ValueDistribution::Categorical {
                probs: row.to_vec(),
                support,
            },
            None => ValueDistribution::Quantile { atoms: row.to_vec() },
        }
    }

    /// One distribution per gamma head for a single `(obs, action)`.
    pub fn critic_eval(&self, params: &ParameterSet, obs: &[f64], action: &[f64]) -> Result<Vec<ValueDistribution>> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape("critic observation", self.obs_dim, obs.len()));
        }
        if action.len() != self.action_dim {
            return Err(Error::shape("critic action", self.action_dim, action.len()));
        }
        Ok(self
            .eval_batch(params, obs, action)?
            .iter()
            .map(|h| self.to_distribution(h))
            .collect())
    }

    fn rows(&self, obs: &[f64], actions: &[f64]) -> Result<usize> {
        if obs.is_empty() || obs.len() % self.obs_dim != 0 {
            return Err(Error::shape("critic observation", self.obs_dim, obs.len()));
        }
        let rows = obs.len() / self.obs_dim;
        if actions.len() != rows * self.action_dim {
            return Err(Error::shape("critic action", rows * self.action_dim, actions.len()));
        }
        Ok(rows)
    }
}
