use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Sgd,
            lr,
            ..Default::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec {
            lr,
            ..Default::default()
        }
    }

    /// `lr = 0` is accepted for SGD (a no-op step), otherwise the rate must be
    /// strictly positive.
    pub fn validate(&self, key: &str) -> Result<()> {
        let lr_ok = match self.kind {
            OptimizerKind::Sgd => self.lr >= 0.0,
            OptimizerKind::Adam => self.lr > 0.0,
        };
        if !lr_ok || !self.lr.is_finite() {
            return Err(Error::config(format!("{key}.lr"), format!("must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{key}.{name}"), format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::config(format!("{key}.eps"), "must be > 0"));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::config(format!("{key}.clip_norm"), "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate("optimizer")?;
        Ok(Optimizer {
            spec,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored in `params` and clears them.
    /// Returns the (pre-clipping) global gradient norm.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<f64> {
        let mut sq = 0.0;
        for (name, t) in params.iter() {
            let g = t
                .grad()
                .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for `{name}`")))?;
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient norm {norm}")));
        }
        let clip = match self.spec.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let s = &self.spec;
        let bc1 = 1.0 - s.beta1.powi(self.step as i32);
        let bc2 = 1.0 - s.beta2.powi(self.step as i32);
        for (name, t) in params.iter_mut() {
            let g: Vec<f64> = t.grad().unwrap().iter().map(|v| v * clip).collect();
            match s.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in t.data_mut().iter_mut().zip(&g) {
                        *p -= s.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let n = g.len();
                    let mo = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                    });
                    for (((p, g), m), v) in t
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .zip(mo.m.iter_mut())
                        .zip(mo.v.iter_mut())
                    {
                        *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                        *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *p -= s.lr * mhat / (vhat.sqrt() + s.eps);
                    }
                }
            }
            t.clear_grad();
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn one(p: f64, g: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        let mut t = Tensor::scalar(p);
        t.set_grad(vec![g]).unwrap();
        ps.insert("p", t).unwrap();
        ps
    }

    fn value(ps: &ParameterSet) -> f64 {
        ps.get("p").unwrap().data()[0]
    }

    #[test]
    fn sgd_examples() {
        let mut ps = one(1.0, 1.0);
        Optimizer::new(OptimizerSpec::sgd(0.1)).unwrap().step(&mut ps).unwrap();
        assert!((value(&ps) - 0.9).abs() < 1e-15);
        assert!(ps.get("p").unwrap().grad().is_none());

        let mut ps = one(1.0, 123.0);
        Optimizer::new(OptimizerSpec::sgd(0.0)).unwrap().step(&mut ps).unwrap();
        assert_eq!(value(&ps), 1.0);
    }

    #[test]
    fn adam_first_step_matches_hand_moments() {
        let spec = OptimizerSpec::adam(1e-3);
        let mut ps = one(0.0, 1.0);
        Optimizer::new(spec.clone()).unwrap().step(&mut ps).unwrap();
        // m = 0.1, v = 0.001; bias-corrected mhat = 1, vhat = 1
        let m = (1.0 - spec.beta1) * 1.0;
        let v = (1.0 - spec.beta2) * 1.0;
        let mhat = m / (1.0 - spec.beta1);
        let vhat = v / (1.0 - spec.beta2);
        let expected = -1e-3 * mhat / (vhat.sqrt() + spec.eps);
        assert!((value(&ps) - expected).abs() < 1e-15);
        assert!((value(&ps) + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn missing_grad_is_error() {
        let mut ps = ParameterSet::new();
        ps.insert("p", Tensor::scalar(1.0)).unwrap();
        assert!(Optimizer::new(OptimizerSpec::sgd(0.1)).unwrap().step(&mut ps).is_err());
    }

    #[test]
    fn clipping_bounds_step() {
        let mut spec = OptimizerSpec::sgd(1.0);
        spec.clip_norm = Some(0.5);
        let mut ps = one(0.0, 10.0);
        let norm = Optimizer::new(spec).unwrap().step(&mut ps).unwrap();
        assert_eq!(norm, 10.0);
        assert!((value(&ps) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(Optimizer::new(OptimizerSpec::adam(0.0)).is_err());
        let mut s = OptimizerSpec::adam(1e-3);
        s.beta2 = 1.0;
        assert!(s.validate("x").is_err());
    }
}
