//! Versioned JSON checkpoints for trained auctions and policies.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::MonotonicNet;
use crate::commnet::{CommNetConfig, CommNetPolicy};
use crate::numcore::{Activation, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid checkpoint contents: {0}")]
    Invalid(String),
}

/// Parameter grids: `[k][j]` for a shared net, `[i][k][j]` per bidder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamGrid {
    Shared(Vec<Vec<f64>>),
    PerBidder(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MyersonCheckpoint {
    pub version: u32,
    pub tool_version: String,
    pub shared: bool,
    #[serde(rename = "N")]
    pub n_bidders: usize,
    #[serde(rename = "K")]
    pub groups: usize,
    #[serde(rename = "J")]
    pub units: usize,
    pub alpha: ParamGrid,
    pub beta: ParamGrid,
    #[serde(default)]
    pub train_config: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommNetCheckpoint {
    pub version: u32,
    pub tool_version: String,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub actions: usize,
    pub activation: Activation,
    pub params: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub train_config: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Checkpoint {
    Myerson(MyersonCheckpoint),
    Commnet(CommNetCheckpoint),
}

fn grid(flat: &[f64], units: usize) -> Vec<Vec<f64>> {
    flat.chunks(units).map(<[f64]>::to_vec).collect()
}

fn flatten(rows: &[Vec<f64>], groups: usize, units: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
    if rows.len() != groups || rows.iter().any(|r| r.len() != units) {
        return Err(CheckpointError::Invalid(format!("{what} must be {groups} x {units}")));
    }
    Ok(rows.concat())
}

impl MyersonCheckpoint {
    pub fn from_net(net: &MonotonicNet, train_config: serde_json::Value, seed: u64) -> Self {
        let j = net.units();
        let (alpha, beta) = if net.is_shared() {
            (ParamGrid::Shared(grid(net.alpha(0), j)), ParamGrid::Shared(grid(net.beta(0), j)))
        } else {
            (
                ParamGrid::PerBidder((0..net.n_sets()).map(|s| grid(net.alpha(s), j)).collect()),
                ParamGrid::PerBidder((0..net.n_sets()).map(|s| grid(net.beta(s), j)).collect()),
            )
        };
        Self {
            version: CHECKPOINT_VERSION,
            tool_version: TOOL_VERSION.to_owned(),
            shared: net.is_shared(),
            n_bidders: net.n_bidders(),
            groups: net.groups(),
            units: j,
            alpha,
            beta,
            train_config,
            seed,
        }
    }

    pub fn to_net(&self) -> Result<MonotonicNet, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let (k, j) = (self.groups, self.units);
        let sets = |g: &ParamGrid, what: &str| -> Result<Vec<Vec<f64>>, CheckpointError> {
            match (g, self.shared) {
                (ParamGrid::Shared(rows), true) => Ok(vec![flatten(rows, k, j, what)?]),
                (ParamGrid::PerBidder(sets), false) => {
                    if sets.len() != self.n_bidders {
                        return Err(CheckpointError::Invalid(format!(
                            "{what} has {} bidder sets, expected {}",
                            sets.len(),
                            self.n_bidders
                        )));
                    }
                    sets.iter().map(|rows| flatten(rows, k, j, what)).collect()
                }
                _ => Err(CheckpointError::Invalid(format!(
                    "{what} nesting does not match shared = {}",
                    self.shared
                ))),
            }
        };
        let alpha = sets(&self.alpha, "alpha")?;
        let beta = sets(&self.beta, "beta")?;
        MonotonicNet::from_sets(self.n_bidders, k, j, self.shared, alpha, beta)
            .map_err(|e| CheckpointError::Invalid(e.to_string()))
    }
}

impl CommNetCheckpoint {
    pub fn from_policy(policy: &CommNetPolicy, train_config: serde_json::Value, seed: u64) -> Self {
        let c = policy.config();
        Self {
            version: CHECKPOINT_VERSION,
            tool_version: TOOL_VERSION.to_owned(),
            n_agents: c.n_agents,
            obs_dim: c.obs_dim,
            hidden: c.hidden,
            layers: c.layers,
            actions: c.actions,
            activation: c.activation,
            params: policy
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.values.clone()))
                .collect(),
            train_config,
            seed,
        }
    }

    pub fn config(&self) -> CommNetConfig {
        CommNetConfig {
            n_agents: self.n_agents,
            obs_dim: self.obs_dim,
            hidden: self.hidden,
            layers: self.layers,
            actions: self.actions,
            activation: self.activation,
        }
    }

    pub fn to_policy(&self) -> Result<CommNetPolicy, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let invalid = |e: &dyn std::fmt::Display| CheckpointError::Invalid(e.to_string());
        let mut policy = CommNetPolicy::zeros(self.config()).map_err(|e| invalid(&e))?;
        if self.params.len() != policy.params().len() {
            return Err(CheckpointError::Invalid(format!(
                "expected {} parameter tensors, found {}",
                policy.params().len(),
                self.params.len()
            )));
        }
        let mut store = ParamStore::new();
        for p in policy.params().iter() {
            let values = self
                .params
                .get(&p.name)
                .ok_or_else(|| CheckpointError::Invalid(format!("missing parameter `{}`", p.name)))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Invalid(format!("parameter `{}` is not finite", p.name)));
            }
            store
                .insert(&p.name, p.shape.clone(), values.clone())
                .map_err(|e| invalid(&e))?;
        }
        policy.set_params(store).map_err(|e| invalid(&e))?;
        Ok(policy)
    }
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Myerson(_) => "myerson",
            Checkpoint::Commnet(_) => "commnet",
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoints serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        let version = match &ck {
            Checkpoint::Myerson(m) => m.version,
            Checkpoint::Commnet(c) => c.version,
        };
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn into_net(self) -> Result<MonotonicNet, CheckpointError> {
        match self {
            Checkpoint::Myerson(m) => m.to_net(),
            other => Err(CheckpointError::Kind {
                expected: "myerson",
                found: other.kind(),
            }),
        }
    }

    pub fn into_policy(self) -> Result<CommNetPolicy, CheckpointError> {
        match self {
            Checkpoint::Commnet(c) => c.to_policy(),
            other => Err(CheckpointError::Kind {
                expected: "commnet",
                found: other.kind(),
            }),
        }
    }
}
