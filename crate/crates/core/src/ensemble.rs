//! Checkpoint ensembles: critic-scored action selection over actor
//! proposals and their convex mixtures, and validation-based checkpoint
//! ranking.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{ActorSpec, AgentCheckpoint, CriticSpec};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::ParameterSet;
use crate::runtime::{evaluate_actor, mean, std_dev};

/// Which convex combinations of actor proposals join the candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixtureSet {
    None,
    /// For every actor pair `i < j` and weight `w`: `w a_i + (1 - w) a_j`.
    Pairwise { weights: Vec<f64> },
    /// Coefficient vectors over all actors, each nonnegative summing to 1.
    Explicit { coefficients: Vec<Vec<f64>> },
}

impl Default for MixtureSet {
    fn default() -> Self {
        MixtureSet::Pairwise { weights: vec![0.5] }
    }
}

impl MixtureSet {
    pub fn validate(&self, key: &str) -> Result<()> {
        match self {
            MixtureSet::None => Ok(()),
            MixtureSet::Pairwise { weights } => {
                if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
                    return Err(Error::config(key, format!("pairwise weight {w} outside [0, 1]")));
                }
                Ok(())
            }
            MixtureSet::Explicit { coefficients } => {
                for c in coefficients {
                    let sum: f64 = c.iter().sum();
                    if c.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::config(key, format!("coefficients {c:?} are not a convex combination")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Coefficient vectors of every candidate for `n` actors: the plain
    /// proposals first, then the mixtures.
    pub fn candidates(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let unit = |i: usize| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let mut out: Vec<Vec<f64>> = (0..n).map(unit).collect();
        match self {
            MixtureSet::None => {}
            MixtureSet::Pairwise { weights } => {
                for i in 0..n {
                    for j in i + 1..n {
                        for &w in weights {
                            let mut c = vec![0.0; n];
                            c[i] = w;
                            c[j] = 1.0 - w;
                            out.push(c);
                        }
                    }
                }
            }
            MixtureSet::Explicit { coefficients } => {
                for c in coefficients {
                    if c.len() != n {
                        return Err(Error::shape("mixture coefficients", n, c.len()));
                    }
                    out.push(c.clone());
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub mixtures: MixtureSet,
    /// Validation seeds per checkpoint when ranking.
    pub n_seeds: usize,
    pub top_k: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            mixtures: MixtureSet::default(),
            n_seeds: 80,
            top_k: 5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.mixtures.validate("ensemble.mixtures")?;
        if self.n_seeds == 0 {
            return Err(Error::config("ensemble.n_seeds", "must be positive"));
        }
        if self.top_k == 0 {
            return Err(Error::config("ensemble.top_k", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleBundle {
    pub actors: Vec<(ActorSpec, ParameterSet)>,
    pub critics: Vec<(CriticSpec, ParameterSet)>,
    pub mixtures: MixtureSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleChoice {
    pub action: Vec<f64>,
    /// Index into the candidate list: actors first, then mixtures.
    pub candidate: usize,
    pub score: f64,
}

impl EnsembleBundle {
    /// Every actor and critic of the given checkpoints.
    pub fn from_checkpoints(checkpoints: &[AgentCheckpoint], actor: &ActorSpec, critic: &CriticSpec, mixtures: MixtureSet) -> Result<Self> {
        let mut b = EnsembleBundle {
            actors: Vec::new(),
            critics: Vec::new(),
            mixtures,
        };
        for ck in checkpoints {
            actor.network().check_params(&ck.actor)?;
            b.actors.push((actor.clone(), ck.actor.clone()));
            for c in &ck.critics {
                critic.network().check_params(c)?;
                b.critics.push((critic.clone(), c.clone()));
            }
        }
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let (Some((a0, _)), Some((c0, _))) = (self.actors.first(), self.critics.first()) else {
            return Err(Error::Empty("an ensemble needs at least one actor and one critic".into()));
        };
        for (a, _) in &self.actors {
            if a.action_dim != a0.action_dim || a.obs_dim != a0.obs_dim {
                return Err(Error::shape("ensemble actor (obs, action)", format!("({}, {})", a0.obs_dim, a0.action_dim), format!("({}, {})", a.obs_dim, a.action_dim)));
            }
        }
        for (c, _) in &self.critics {
            if c.obs_dim != c0.obs_dim || c.obs_dim != a0.obs_dim || c.action_dim != a0.action_dim {
                return Err(Error::shape("ensemble critic (obs, action)", format!("({}, {})", a0.obs_dim, a0.action_dim), format!("({}, {})", c.obs_dim, c.action_dim)));
            }
        }
        self.mixtures.validate("ensemble.mixtures")
    }

    /// Candidate actions: actor proposals, then mixtures.
    pub fn candidates(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let proposals = self.actors.iter().map(|(s, p)| s.act_greedy(p, obs)).collect::<Result<Vec<_>>>()?;
        let ad = self.actors[0].0.action_dim;
        let coeffs = self.mixtures.candidates(proposals.len())?;
        Ok(coeffs
            .iter()
            .map(|c| {
                let mut a = vec![0.0; ad];
                for (ck, p) in c.iter().zip(&proposals) {
                    if *ck != 0.0 {
                        for (x, y) in a.iter_mut().zip(p) {
                            *x += ck * y;
                        }
                    }
                }
                a
            })
            .collect())
    }

    /// Mean over critics of the largest-γ head mean, for every candidate in
    /// one batched pass per critic.
    pub fn score(&self, obs: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        let rows = candidates.len();
        let obs_rep: Vec<f64> = (0..rows).flat_map(|_| obs.iter().copied()).collect();
        let actions: Vec<f64> = candidates.concat();
        let mut total = vec![0.0; rows];
        for (spec, params) in &self.critics {
            let means = spec.head_means_batch(params, &obs_rep, &actions)?;
            let last = means.last().ok_or_else(|| Error::Empty("critic without heads".into()))?;
            for (t, q) in total.iter_mut().zip(last) {
                *t += q;
            }
        }
        let n = self.critics.len() as f64;
        Ok(total.into_iter().map(|t| t / n).collect())
    }

    /// Highest-scoring candidate; ties go to the lowest index.
    pub fn act(&self, obs: &[f64]) -> Result<EnsembleChoice> {
        let candidates = self.candidates(obs)?;
        let scores = self.score(obs, &candidates)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        if !scores[best].is_finite() {
            return Err(Error::Numerical(format!("ensemble score {}", scores[best])));
        }
        Ok(EnsembleChoice {
            action: candidates[best].clone(),
            candidate: best,
            score: scores[best],
        })
    }
}

/// The ensemble's chosen action for `obs`.
pub fn ensemble_act(bundle: &EnsembleBundle, obs: &[f64]) -> Result<Vec<f64>> {
    Ok(bundle.act(obs)?.action)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPolicy {
    pub name: String,
    pub path: Option<PathBuf>,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ScoredPolicy {
    pub fn new(name: impl Into<String>, path: Option<PathBuf>, returns: Vec<f64>) -> Self {
        ScoredPolicy {
            name: name.into(),
            path,
            mean: mean(&returns),
            std: std_dev(&returns),
            returns,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ranking {
    /// Best first; equal means keep name order.
    pub ranked: Vec<ScoredPolicy>,
    /// Unreadable checkpoints and why.
    pub skipped: Vec<(PathBuf, String)>,
    pub seeds: Vec<u64>,
}

/// Sorts by mean return, descending, stable on name.
pub fn rank(mut scored: Vec<ScoredPolicy>) -> Vec<ScoredPolicy> {
    scored.sort_by(|a, b| a.name.cmp(&b.name));
    scored.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    scored
}

/// Checkpoint files (`*.crlw`) directly under `dir`, sorted by name.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "crlw") && p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

/// Evaluates every checkpoint in `dir` without exploration on the same
/// seeds and returns the best `top_k`.
pub fn select_checkpoints(dir: &Path, env: &EnvConfig, actor: &ActorSpec, history_len: usize, seeds: &[u64], top_k: usize) -> Result<Ranking> {
    let paths = list_checkpoints(dir)?;
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let loaded = AgentCheckpoint::load(&path).and_then(|ck| {
            actor.network().check_params(&ck.actor)?;
            Ok(ck)
        });
        match loaded {
            Ok(ck) => {
                let returns = evaluate_actor(env, actor, &ck.actor, history_len, seeds)?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                scored.push(ScoredPolicy::new(name, Some(path), returns));
            }
            Err(e) => {
                log::warn!("skipping checkpoint {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    if scored.is_empty() {
        return Err(Error::Empty(format!("no readable checkpoints in {}", dir.display())));
    }
    let mut ranked = rank(scored);
    ranked.truncate(top_k);
    Ok(Ranking {
        ranked,
        skipped,
        seeds: seeds.to_vec(),
    })
}

impl Ranking {
    /// `ranking.csv` (checkpoint, seed, return) and `ranking.json`.
    pub fn write(&self, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(out_dir)?;
        let csv_path = out_dir.join("ranking.csv");
        let mut csv = String::from("checkpoint,seed,return\n");
        for p in &self.ranked {
            for (seed, r) in self.seeds.iter().zip(&p.returns) {
                csv.push_str(&format!("{},{seed},{r}\n", p.name));
            }
        }
        std::fs::write(&csv_path, csv)?;
        let summary = serde_json::json!({
            "n_seeds": self.seeds.len(),
            "ranked": self.ranked.iter().enumerate().map(|(i, p)| serde_json::json!({
                "rank": i + 1,
                "checkpoint": p.name,
                "path": p.path.as_ref().map(|x| x.display().to_string()),
                "mean_return": p.mean,
                "std_return": p.std,
            })).collect::<Vec<_>>(),
            "skipped": self.skipped.iter().map(|(p, why)| serde_json::json!({
                "path": p.display().to_string(),
                "reason": why,
            })).collect::<Vec<_>>(),
        });
        let json_path = out_dir.join("ranking.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)?;
        Ok((csv_path, json_path))
    }
}
