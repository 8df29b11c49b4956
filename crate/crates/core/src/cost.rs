//! Operation counts for one inference pass.
//!
//! Counts are per forward pass over the whole profile (all bidders) or the
//! whole team (all agents). A multiply-accumulate is one MAC; activation ops
//! count one nonlinearity evaluation each (softmax exponentials included);
//! comparisons are the pairwise min/max reductions of the monotonic net.

use serde::{Deserialize, Serialize};

use crate::auction::MonotonicNet;
use crate::commnet::CommNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Myerson {
        #[serde(rename = "N")]
        n_bidders: usize,
        #[serde(rename = "K")]
        groups: usize,
        #[serde(rename = "J")]
        units: usize,
    },
    Commnet(CommNetConfig),
}

impl Architecture {
    pub fn of_net(net: &MonotonicNet) -> Self {
        Architecture::Myerson {
            n_bidders: net.n_bidders(),
            groups: net.groups(),
            units: net.units(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    pub comparisons: u64,
    pub activations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceCost {
    pub macs: u64,
    pub comparisons: u64,
    pub activations: u64,
    pub layers: Vec<LayerCost>,
}

impl InferenceCost {
    fn from_layers(layers: Vec<LayerCost>) -> Self {
        Self {
            macs: layers.iter().map(|l| l.macs).sum(),
            comparisons: layers.iter().map(|l| l.comparisons).sum(),
            activations: layers.iter().map(|l| l.activations).sum(),
            layers,
        }
    }

    pub fn total_ops(&self) -> u64 {
        self.macs + self.comparisons + self.activations
    }
}

/// Per-layer operation counts; the total is their sum, so adding a
/// communication layer adds exactly that layer's count.
///
/// Monotonic net, per bidder: `K J` MACs for the affine units, `K (J - 1)`
/// comparisons for the inner minima and `K - 1` for the outer maximum.
///
/// CommNet, per agent: the encoder costs `d o` MACs, each communication
/// layer `2 d^2` MACs plus `(n - 1) d` accumulations for the mean of the
/// other agents, and the decoder `a d` MACs; every layer applies its
/// nonlinearity once per output unit.
pub fn estimate_inference_cost(arch: &Architecture) -> InferenceCost {
    let u = |x: usize| x as u64;
    match *arch {
        Architecture::Myerson {
            n_bidders,
            groups,
            units,
        } => {
            let (n, k, j) = (u(n_bidders), u(groups), u(units));
            InferenceCost::from_layers(vec![LayerCost {
                name: "monotonic".into(),
                macs: n * k * j,
                comparisons: n * (k * j.saturating_sub(1) + k.saturating_sub(1)),
                activations: 0,
            }])
        }
        Architecture::Commnet(c) => {
            let (n, o, d, a) = (u(c.n_agents), u(c.obs_dim), u(c.hidden), u(c.actions));
            let mut layers = vec![LayerCost {
                name: "encoder".into(),
                macs: n * d * o,
                comparisons: 0,
                activations: n * d,
            }];
            for l in 0..c.layers {
                layers.push(LayerCost {
                    name: format!("layer{l}"),
                    macs: n * (2 * d * d + n.saturating_sub(1) * d),
                    comparisons: 0,
                    activations: n * d,
                });
            }
            layers.push(LayerCost {
                name: "decoder".into(),
                macs: n * a * d,
                comparisons: 0,
                activations: n * a,
            });
            InferenceCost::from_layers(layers)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Activation;

    fn myerson(n: usize, k: usize, j: usize) -> InferenceCost {
        estimate_inference_cost(&Architecture::Myerson {
            n_bidders: n,
            groups: k,
            units: j,
        })
    }

    #[test]
    fn monotonic_counts() {
        let c = myerson(1, 1, 1);
        assert_eq!((c.macs, c.comparisons), (1, 0));
        let c = myerson(3, 5, 10);
        assert_eq!((c.macs, c.comparisons), (150, 147));
    }

    #[test]
    fn commnet_hand_count() {
        let cfg = CommNetConfig {
            n_agents: 2,
            obs_dim: 3,
            hidden: 4,
            layers: 1,
            actions: 5,
            activation: Activation::Tanh,
        };
        let c = estimate_inference_cost(&Architecture::Commnet(cfg));
        // 24 encoder + (64 + 8) layer + 40 decoder
        assert_eq!(c.macs, 136);
        assert_eq!(c.activations, 8 + 8 + 10);
        assert_eq!(c.layers.len(), 3);
    }
}
