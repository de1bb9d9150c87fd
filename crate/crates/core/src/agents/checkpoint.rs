use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::{ParameterSet, Tensor};

const VERSION_KEY: &str = "__meta__.version";
const FINGERPRINT_KEY: &str = "__meta__.fingerprint";

/// Actor and critic parameters of one agent at a given weights version.
///
/// Stored as a single parameter file with names prefixed `actor/` and
/// `critic{i}/`, plus two scalar metadata tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentCheckpoint {
    pub version: u64,
    /// Hash of the resolved configuration that produced these weights.
    pub fingerprint: u32,
    pub actor: ParameterSet,
    pub critics: Vec<ParameterSet>,
}

impl AgentCheckpoint {
    pub fn to_params(&self) -> Result<ParameterSet> {
        if self.version > (1u64 << 53) {
            return Err(Error::Checkpoint(format!("version {} not representable", self.version)));
        }
        let mut p = self.actor.namespaced("actor");
        for (i, c) in self.critics.iter().enumerate() {
            p.merge(c.namespaced(&format!("critic{i}")))?;
        }
        p.insert(VERSION_KEY, Tensor::scalar(self.version as f64))?;
        p.insert(FINGERPRINT_KEY, Tensor::scalar(self.fingerprint as f64))?;
        Ok(p)
    }

    pub fn from_params(p: &ParameterSet) -> Result<Self> {
        let meta = |k: &str| -> Result<f64> {
            let t = p.get(k).ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")))?;
            Ok(t.data()[0])
        };
        let version = meta(VERSION_KEY)? as u64;
        let fingerprint = meta(FINGERPRINT_KEY)? as u32;
        let actor = p.extract("actor");
        if actor.is_empty() {
            return Err(Error::Checkpoint("no actor parameters".into()));
        }
        let mut critics = Vec::new();
        loop {
            let c = p.extract(&format!("critic{}", critics.len()));
            if c.is_empty() {
                break;
            }
            critics.push(c);
        }
        Ok(AgentCheckpoint {
            version,
            fingerprint,
            actor,
            critics,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        checkpoint::encode(&self.to_params()?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_params(&checkpoint::decode(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_params()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(&checkpoint::load(path)?)
    }
}
