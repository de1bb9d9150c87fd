//! Python bindings: configs, environments, actors, ensembles and the
//! distributional helpers.

use std::path::PathBuf;

use crl::agents::{ActorSpec, AgentCheckpoint};
use crl::algorithms::{gamma_grid_of, GridKind};
use crl::config::ExperimentConfig;
use crl::distributional::{cramer_project as project, quantile_fractions as fractions, CategoricalSupport};
use crl::ensemble::{EnsembleBundle, MixtureSet};
use crl::env::{make_env, scripted_return as scripted_mean};
use crl::nn::ParameterSet;
use crl::runtime::local::{train_local as run_local, LocalOptions};
use crl::runtime::evaluate_actor;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: crl::Error) -> PyErr {
    match e {
        crl::Error::Io(e) => PyIOError::new_err(e.to_string()),
        crl::Error::Config { .. } | crl::Error::InvalidArgument(_) | crl::Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Experiment configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Built-in defaults.
    #[new]
    fn new() -> Self {
        PyConfig {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn from_yaml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::from_yaml(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::load(&path).map_err(py_err)?,
        })
    }

    fn to_yaml(&self) -> PyResult<String> {
        self.inner.to_yaml().map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn fingerprint(&self) -> PyResult<u32> {
        self.inner.fingerprint().map_err(py_err)
    }

    fn with_history_len(&self, history_len: usize) -> PyResult<Self> {
        Ok(PyConfig {
            inner: self.inner.with_history_len(history_len).map_err(py_err)?,
        })
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.env.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.env.action_dim()
    }

    #[getter]
    fn validation_seeds(&self) -> Vec<u64> {
        self.inner.seeds.validation.clone()
    }

    fn __repr__(&self) -> String {
        format!("Config(env={:?}, algo={:?})", self.inner.env.name, self.inner.algo.algo)
    }
}

/// Environment built from a config; `step` returns
/// `(obs, reward, done, success)`.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    env: Box<dyn crl::env::Env>,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<PyConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        Ok(PyEnv {
            env: make_env(&cfg.env).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.env.name()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.env.reset(seed)
    }

    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let s = self.env.step(&action).map_err(py_err)?;
        Ok((s.obs, s.reward, s.done, s.success))
    }

    fn scripted_action(&self) -> Option<Vec<f64>> {
        self.env.scripted_action()
    }
}

/// Policy network with its parameters.
#[pyclass(name = "Actor", from_py_object)]
#[derive(Clone)]
struct PyActor {
    spec: ActorSpec,
    params: ParameterSet,
}

#[pymethods]
impl PyActor {
    /// Freshly initialized actor for `config`.
    #[staticmethod]
    #[pyo3(signature = (config, seed=0))]
    fn random(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let spec = config.inner.actor_spec();
        let params = spec.init(&mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
        Ok(PyActor { spec, params })
    }

    #[staticmethod]
    fn load(config: &PyConfig, path: PathBuf) -> PyResult<Self> {
        let ck = AgentCheckpoint::load(&path).map_err(py_err)?;
        let spec = config.inner.actor_spec();
        spec.network().check_params(&ck.actor).map_err(py_err)?;
        Ok(PyActor { spec, params: ck.actor })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Greedy action for one (history-stacked) observation.
    fn act(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.spec.act_greedy(&self.params, &obs).map_err(py_err)
    }

    /// Per-seed validation returns.
    #[pyo3(signature = (config, seeds=None))]
    fn evaluate(&self, config: &PyConfig, seeds: Option<Vec<u64>>) -> PyResult<Vec<f64>> {
        let cfg = &config.inner;
        let seeds = seeds.unwrap_or_else(|| cfg.seeds.validation.clone());
        evaluate_actor(&cfg.env, &self.spec, &self.params, cfg.replay.history_len, &seeds).map_err(py_err)
    }
}

/// Checkpoint ensemble choosing among actor proposals and mixtures by
/// averaged critic value.
#[pyclass(name = "Ensemble")]
struct PyEnsemble {
    bundle: EnsembleBundle,
}

#[pymethods]
impl PyEnsemble {
    #[staticmethod]
    fn load(config: &PyConfig, paths: Vec<PathBuf>) -> PyResult<Self> {
        let cfg = &config.inner;
        let cks = paths.iter().map(|p| AgentCheckpoint::load(p)).collect::<crl::Result<Vec<_>>>().map_err(py_err)?;
        let mixtures: MixtureSet = cfg.ensemble.mixtures.clone();
        let bundle = EnsembleBundle::from_checkpoints(&cks, &cfg.actor_spec(), &cfg.critic_spec(), mixtures).map_err(py_err)?;
        Ok(PyEnsemble { bundle })
    }

    fn candidates(&self, obs: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.bundle.candidates(&obs).map_err(py_err)
    }

    /// `(action, candidate index, score)`.
    fn act(&self, obs: Vec<f64>) -> PyResult<(Vec<f64>, usize, f64)> {
        let c = self.bundle.act(&obs).map_err(py_err)?;
        Ok((c.action, c.candidate, c.score))
    }
}

/// Projects `probs` shifted by `reward + discount * z` back onto the
/// support `[v_min, v_max]`.
#[pyfunction]
fn cramer_project(probs: Vec<f64>, reward: f64, discount: f64, v_min: f64, v_max: f64) -> PyResult<Vec<f64>> {
    let support = CategoricalSupport::new(v_min, v_max, probs.len()).map_err(py_err)?;
    project(&probs, reward, discount, &support).map_err(py_err)
}

#[pyfunction]
fn quantile_fractions(n: usize) -> Vec<f64> {
    fractions(n)
}

/// `(gammas, weights)` of a hyperbolic head grid; `kind` is
/// `"log_gamma"` or `"log_horizon"`.
#[pyfunction]
#[pyo3(signature = (n_heads, gamma_max, k, eps_low=0.01, kind="log_gamma"))]
fn gamma_grid(n_heads: usize, gamma_max: f64, k: f64, eps_low: f64, kind: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let kind = match kind {
        "log_gamma" => GridKind::LogGamma,
        "log_horizon" => GridKind::LogHorizon,
        other => return Err(PyValueError::new_err(format!("unknown grid kind `{other}`"))),
    };
    let g = gamma_grid_of(kind, n_heads, gamma_max, eps_low, k).map_err(py_err)?;
    Ok((g.gammas, g.weights))
}

/// Mean return of the scripted controller on the config's validation seeds.
#[pyfunction]
fn scripted_return(config: &PyConfig) -> PyResult<f64> {
    let cfg = &config.inner;
    let mut env = make_env(&cfg.env).map_err(py_err)?;
    scripted_mean(env.as_mut(), &cfg.seeds.validation).map_err(py_err)
}

/// Single-process training; returns `(actor, [(env_steps, mean_return)])`.
#[pyfunction]
#[pyo3(signature = (config, max_env_steps, target_return=None))]
fn train_local(py: Python<'_>, config: &PyConfig, max_env_steps: u64, target_return: Option<f64>) -> PyResult<(PyActor, Vec<(u64, f64)>)> {
    let cfg = config.inner.clone();
    let opts = LocalOptions {
        max_env_steps,
        target_return,
        write_metrics: false,
    };
    let report = py.detach(|| run_local(&cfg, &opts)).map_err(py_err)?;
    let curve = report.evals.iter().map(|e| (e.env_steps, e.mean_return)).collect();
    Ok((
        PyActor {
            spec: cfg.actor_spec(),
            params: report.actor,
        },
        curve,
    ))
}

#[pymodule]
fn crl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyActor>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(cramer_project, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_fractions, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_grid, m)?)?;
    m.add_function(wrap_pyfunction!(scripted_return, m)?)?;
    m.add_function(wrap_pyfunction!(train_local, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_exposes_main_types() {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "crl_py").unwrap();
            crl_py(&m).unwrap();
            for name in ["Config", "Env", "Actor", "Ensemble", "cramer_project", "quantile_fractions", "gamma_grid", "scripted_return", "train_local"] {
                assert!(m.hasattr(name).unwrap(), "{name}");
            }
            let err = PyConfig::from_yaml("algo: {gamma_max: 2.0}").err().unwrap();
            assert!(err.is_instance_of::<PyValueError>(py));
            assert!(gamma_grid(3, 0.99, 0.1, 0.01, "linear").is_err());
        });
    }

    #[test]
    fn actor_acts_in_range_and_env_runs_scripted_episode() {
        let cfg = PyConfig::new();
        let actor = PyActor::random(&cfg, 3).unwrap();
        let mut env = PyEnv::new(Some(cfg.clone())).unwrap();
        let mut obs = env.reset(10_000);
        let a = actor.act(obs.clone()).unwrap();
        assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
        loop {
            let (o, r, done, _) = env.step(env.scripted_action().unwrap()).unwrap();
            assert!(r.is_finite());
            obs = o;
            if done {
                break;
            }
        }
        assert_eq!(obs.len(), cfg.obs_dim());
        assert!(actor.act(vec![0.0; 3]).is_err());
    }
}
