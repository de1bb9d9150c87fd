use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::Transition;

/// How the discount factors of the gamma heads are spaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `ln γ` uniform on `[ln ε_low, ln γ_max]`.
    #[default]
    LogGamma,
    /// `ln(1 - γ)` uniform on `[ln(1 - ε_low), ln(1 - γ_max)]`: effective
    /// horizons `1/(1 - γ)` are log-uniform, which packs heads close to 1.
    LogHorizon,
}

/// Discount factors of the gamma heads with their Riemann weights for the
/// hyperbolic discount `1/(1 + kt) = ∫ w(γ) γ^t dγ`, `w(γ) = γ^(1/k - 1)/k`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaGrid {
    pub gammas: Vec<f64>,
    pub weights: Vec<f64>,
    pub k: f64,
}

impl GammaGrid {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn gamma_max(&self) -> f64 {
        *self.gammas.last().expect("non-empty grid")
    }

    /// Approximation of `1/(1 + kT)` from the grid.
    pub fn discount_at(&self, t: f64) -> f64 {
        self.gammas.iter().zip(&self.weights).map(|(g, w)| w * g.powf(t)).sum()
    }

    /// Single head at `gamma` with the weight of the interval `[gamma, 1]`.
    pub fn single(gamma: f64, k: f64) -> Result<Self> {
        check_k(k)?;
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::config("algo.gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        Ok(Self::with_gammas(vec![gamma], k))
    }

    fn with_gammas(gammas: Vec<f64>, k: f64) -> Self {
        let weights = gammas
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let next = gammas.get(i + 1).copied().unwrap_or(1.0);
                g.powf(1.0 / k - 1.0) / k * (next - g)
            })
            .collect();
        GammaGrid { gammas, weights, k }
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::config("algo.k", format!("must be > 0, got {k}")));
    }
    Ok(())
}

/// Log-uniform grid on `[eps_low, gamma_max]` (see [`GridKind::LogGamma`]).
pub fn gamma_grid(n_heads: usize, gamma_max: f64, eps_low: f64, k: f64) -> Result<GammaGrid> {
    gamma_grid_of(GridKind::LogGamma, n_heads, gamma_max, eps_low, k)
}

pub fn gamma_grid_of(kind: GridKind, n_heads: usize, gamma_max: f64, eps_low: f64, k: f64) -> Result<GammaGrid> {
    check_k(k)?;
    if n_heads == 0 {
        return Err(Error::config("algo.n_heads", "must be at least 1"));
    }
    if !(gamma_max > 0.0 && gamma_max < 1.0) {
        return Err(Error::config("algo.gamma_max", format!("must lie in (0, 1), got {gamma_max}")));
    }
    if !(eps_low > 0.0 && eps_low < gamma_max) {
        return Err(Error::config("algo.eps_low", format!("must lie in (0, gamma_max), got {eps_low}")));
    }
    if n_heads == 1 {
        return Ok(GammaGrid::with_gammas(vec![gamma_max], k));
    }
    let last = (n_heads - 1) as f64;
    let gammas = (0..n_heads)
        .map(|i| {
            if i + 1 == n_heads {
                return gamma_max;
            }
            if i == 0 {
                return eps_low;
            }
            let f = i as f64 / last;
            match kind {
                GridKind::LogGamma => (eps_low.ln() + f * (gamma_max.ln() - eps_low.ln())).exp(),
                GridKind::LogHorizon => {
                    let (a, b) = ((1.0 - eps_low).ln(), (1.0 - gamma_max).ln());
                    1.0 - (a + f * (b - a)).exp()
                }
            }
        })
        .collect();
    Ok(GammaGrid::with_gammas(gammas, k))
}

/// Weighted Riemann sum of per-head Q-values.
pub fn hyperbolic_q(head_means: &[f64], grid: &GammaGrid) -> Result<f64> {
    if head_means.len() != grid.len() {
        return Err(Error::shape("hyperbolic_q heads", grid.len(), head_means.len()));
    }
    Ok(head_means.iter().zip(&grid.weights).map(|(q, w)| q * w).sum())
}

/// Discounted sum of a reward slice and the discount `γ^m` applied to the
/// value after it.
pub fn fold_rewards(rewards: &[f64], gamma: f64) -> (f64, f64) {
    let mut ret = 0.0;
    let mut disc = 1.0;
    for r in rewards {
        ret += disc * r;
        disc *= gamma;
    }
    (ret, disc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NStep {
    pub ret: f64,
    /// Observation after the slice; `None` when the episode terminated.
    pub next_obs: Option<Vec<f64>>,
    pub done: bool,
    /// `γ^m` for the `m` folded steps.
    pub discount: f64,
    pub steps: usize,
}

/// Folds up to `n` rewards of `episode` starting at `t`. The slice stops
/// early at termination or at the last step with a known successor.
pub fn n_step_fold(episode: &[Transition], t: usize, n: usize, gamma: f64) -> Result<NStep> {
    if n == 0 {
        return Err(Error::InvalidArgument("n_step must be positive".into()));
    }
    if t >= episode.len() {
        return Err(Error::Empty(format!("no transition at index {t}")));
    }
    let mut m = 0;
    while m < n && t + m < episode.len() {
        m += 1;
        if episode[t + m - 1].done {
            break;
        }
    }
    let done = episode[t + m - 1].done;
    if !done && t + m >= episode.len() {
        m -= 1;
        if m == 0 {
            return Err(Error::Empty(format!("step {t} has no successor observation")));
        }
    }
    let rewards: Vec<f64> = episode[t..t + m].iter().map(|x| x.reward).collect();
    let (ret, discount) = fold_rewards(&rewards, gamma);
    Ok(NStep {
        ret,
        next_obs: if done { None } else { Some(episode[t + m].obs.clone()) },
        done,
        discount,
        steps: m,
    })
}
