//! Value distributions, the categorical (Cramér) projection, and the
//! distributional losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::quantile_huber_row;

/// Default Huber threshold for the quantile loss.
pub const DEFAULT_KAPPA: f64 = 1.0;

/// Fixed, equally spaced atoms on `[v_min, v_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSupport {
    v_min: f64,
    v_max: f64,
    n_atoms: usize,
}

impl CategoricalSupport {
    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self> {
        if !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "categorical support needs v_min < v_max, got [{v_min}, {v_max}]"
            )));
        }
        if n_atoms < 2 {
            return Err(Error::InvalidArgument(format!(
                "categorical support needs at least 2 atoms, got {n_atoms}"
            )));
        }
        Ok(CategoricalSupport { v_min, v_max, n_atoms })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n_atoms - 1) as f64
    }

    pub fn atom(&self, i: usize) -> f64 {
        if i + 1 == self.n_atoms {
            self.v_max
        } else {
            self.v_min + i as f64 * self.delta()
        }
    }

    pub fn atoms(&self) -> Vec<f64> {
        (0..self.n_atoms).map(|i| self.atom(i)).collect()
    }
}

/// Quantile midpoints `(2i - 1) / 2N` for `i = 1..N`.
pub fn quantile_fractions(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (2 * i - 1) as f64 / (2 * n) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValueDistribution {
    /// Probabilities over the fixed atoms of `support`.
    Categorical {
        probs: Vec<f64>,
        support: CategoricalSupport,
    },
    /// Learned atom positions, each carrying mass `1/N`.
    Quantile { atoms: Vec<f64> },
}

impl ValueDistribution {
    pub fn mean(&self) -> f64 {
        dist_mean(self)
    }

    pub fn n_atoms(&self) -> usize {
        match self {
            ValueDistribution::Categorical { probs, .. } => probs.len(),
            ValueDistribution::Quantile { atoms } => atoms.len(),
        }
    }

    /// A quantile distribution with every atom at `value`.
    pub fn degenerate(value: f64, n_atoms: usize) -> Self {
        ValueDistribution::Quantile {
            atoms: vec![value; n_atoms],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ValueDistribution::Categorical { probs, support } => {
                if probs.len() != support.n_atoms() {
                    return Err(Error::shape("categorical probs", support.n_atoms(), probs.len()));
                }
                check_probs(probs, 1e-9)
            }
            ValueDistribution::Quantile { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidArgument("quantile atoms must be finite and non-empty".into()));
                }
                Ok(())
            }
        }
    }
}

/// Expected value of a distribution.
pub fn dist_mean(d: &ValueDistribution) -> f64 {
    match d {
        ValueDistribution::Categorical { probs, support } => probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * support.atom(i))
            .sum(),
        ValueDistribution::Quantile { atoms } => atoms.iter().sum::<f64>() / atoms.len() as f64,
    }
}

fn check_probs(probs: &[f64], tol: f64) -> Result<()> {
    if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!("probabilities sum to {s}, expected 1")));
    }
    Ok(())
}

/// Projects `r + γ Z` (with `Z` given by `target_probs` on `support`) back
/// onto `support`: each shifted atom, clamped to `[v_min, v_max]`, splits its
/// mass linearly between the two neighbouring support atoms.
pub fn cramer_project(target_probs: &[f64], reward: f64, discount: f64, support: &CategoricalSupport) -> Result<Vec<f64>> {
    let n = support.n_atoms();
    if target_probs.len() != n {
        return Err(Error::shape("cramer_project probs", n, target_probs.len()));
    }
    check_probs(target_probs, 1e-6)?;
    if !(0.0..=1.0).contains(&discount) {
        return Err(Error::InvalidArgument(format!("discount must lie in [0, 1], got {discount}")));
    }
    let (v_min, v_max, dz) = (support.v_min(), support.v_max(), support.delta());
    let mut out = vec![0.0; n];
    for (j, &p) in target_probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let tz = (reward + discount * support.atom(j)).clamp(v_min, v_max);
        let b = ((tz - v_min) / dz).clamp(0.0, (n - 1) as f64);
        let lower = b.floor();
        let upper = b.ceil();
        let (l, u) = (lower as usize, upper as usize);
        if l == u {
            out[l] += p;
        } else {
            out[l] += p * (upper - b);
            out[u] += p * (b - lower);
        }
    }
    Ok(out)
}

/// Value of `-Σ target_i log softmax(logits)_i`.
pub fn categorical_loss(pred_logits: &[f64], target_probs: &[f64]) -> Result<f64> {
    if pred_logits.len() != target_probs.len() {
        return Err(Error::shape("categorical_loss", pred_logits.len(), target_probs.len()));
    }
    let max = pred_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + pred_logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(-pred_logits
        .iter()
        .zip(target_probs)
        .map(|(z, t)| t * (z - lse))
        .sum::<f64>())
}

/// Quantile regression Huber loss of `pred` atoms (fractions at the
/// midpoints) against `target` samples, averaged over the samples.
pub fn quantile_huber_loss(pred: &[f64], target: &[f64], kappa: f64) -> Result<f64> {
    if kappa <= 0.0 {
        return Err(Error::InvalidArgument(format!("kappa must be > 0, got {kappa}")));
    }
    if pred.is_empty() || target.is_empty() {
        return Err(Error::Empty("quantile_huber_loss needs atoms and samples".into()));
    }
    Ok(quantile_huber_row(pred, target, &quantile_fractions(pred.len()), kappa))
}

/// The distributional Bellman image `r + γ Z`.
#[derive(Clone, Debug, PartialEq)]
pub enum ShiftedDistribution {
    Quantile(Vec<f64>),
    /// Categorical shifts are left symbolic until projected.
    Categorical {
        probs: Vec<f64>,
        support: CategoricalSupport,
        reward: f64,
        discount: f64,
    },
}

impl ShiftedDistribution {
    pub fn mean(&self) -> f64 {
        match self {
            ShiftedDistribution::Quantile(a) => a.iter().sum::<f64>() / a.len() as f64,
            ShiftedDistribution::Categorical {
                probs,
                support,
                reward,
                discount,
            } => {
                reward
                    + discount
                        * dist_mean(&ValueDistribution::Categorical {
                            probs: probs.clone(),
                            support: *support,
                        })
            }
        }
    }

    /// Projected categorical probabilities or shifted quantile atoms.
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            ShiftedDistribution::Quantile(a) => Ok(a.clone()),
            ShiftedDistribution::Categorical {
                probs,
                support,
                reward,
                discount,
            } => cramer_project(probs, *reward, *discount, support),
        }
    }
}

pub fn bellman_shift(dist: &ValueDistribution, reward: f64, discount: f64) -> ShiftedDistribution {
    match dist {
        ValueDistribution::Quantile { atoms } => {
            ShiftedDistribution::Quantile(atoms.iter().map(|z| reward + discount * z).collect())
        }
        ValueDistribution::Categorical { probs, support } => ShiftedDistribution::Categorical {
            probs: probs.clone(),
            support: *support,
            reward,
            discount,
        },
    }
}
