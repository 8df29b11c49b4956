//! Neural Myerson auction for a single item.
//!
//! Bids pass through a monotone virtual-valuation network
//! ([`MonotonicNet`]); a temperature softmax over the transformed bids plus
//! a dummy zero bid allocates the item; the winner pays the inverse
//! transform of the ReLU'd highest competing transformed bid.

mod net;
mod sampler;
mod train;

use serde::Serialize;
use thiserror::Error;

use crate::mechanisms::{HardOutcome, Mechanism};
use crate::numcore::{argmax_first, softmax_unchecked, NumError};

pub use net::MonotonicNet;
pub use sampler::{Moments, ValuationSampler, ValueDistribution, Valuations, CHUNK};
pub(crate) use sampler::par_chunks;
pub use train::{
    kink_margin, revenue_loss, soft_revenue, train_auction, AuctionMetrics, AuctionTrainConfig,
    TrainedAuction,
};

#[derive(Debug, Error)]
pub enum AuctionError {
    #[error("invalid bid profile: {0}")]
    InvalidProfile(String),
    #[error("profile has {found} bids but the mechanism expects {expected}")]
    BidderCount { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Non-empty vector of finite, non-negative bids.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BidProfile(Vec<f64>);

impl BidProfile {
    pub fn new(bids: Vec<f64>) -> Result<Self, AuctionError> {
        if bids.is_empty() {
            return Err(AuctionError::InvalidProfile("no bids".into()));
        }
        if let Some((i, b)) = bids.iter().enumerate().find(|(_, b)| !(b.is_finite() && **b >= 0.0)) {
            return Err(AuctionError::InvalidProfile(format!(
                "bid {i} = {b} is not a finite non-negative number"
            )));
        }
        Ok(Self(bids))
    }

    pub fn bids(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::str::FromStr for BidProfile {
    type Err = AuctionError;

    /// Comma-separated bids, e.g. `0.8,0.6`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bids = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| AuctionError::InvalidProfile(format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(bids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    /// Softmax allocation, used for training.
    Soft,
    /// Argmax allocation with lowest-index tie-break.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionOutcome {
    pub transformed: Vec<f64>,
    /// N + 1 entries; the last is the dummy "no sale" slot.
    pub allocation: Vec<f64>,
    pub raw_payments: Vec<f64>,
    /// Soft mode: each bidder's payment conditional on being allocated.
    /// Hard mode: the winner's payment, zero for everyone else.
    pub payments: Vec<f64>,
    /// `None` means no sale.
    pub winner: Option<usize>,
    pub revenue: f64,
}

/// Transformed bids `phi_i(v_i)` for every bidder.
pub fn transform_bids(net: &MonotonicNet, profile: &BidProfile) -> Result<Vec<f64>, AuctionError> {
    check_count(net, profile)?;
    Ok(profile
        .bids()
        .iter()
        .enumerate()
        .map(|(i, &v)| net.transform(i, v))
        .collect())
}

/// `phi_i^{-1}(y)` for bidder `i`.
pub fn inverse_transform(net: &MonotonicNet, bidder: usize, y: f64) -> f64 {
    net.inverse(bidder, y)
}

/// Softmax with temperature over the transformed bids and a dummy 0.
pub fn allocate(transformed: &[f64], k: f64) -> Result<Vec<f64>, AuctionError> {
    if !(k > 0.0) {
        return Err(NumError::NonPositiveTemperature(k).into());
    }
    Ok(softmax_unchecked(&with_dummy(transformed), k))
}

/// `ReLU(max_{j != i} b_j)` for each bidder; a lone bidder faces the dummy 0.
pub fn payment_raw(transformed: &[f64]) -> Vec<f64> {
    (0..transformed.len())
        .map(|i| best_other(transformed, i).map_or(0.0, |(_, b)| b.max(0.0)))
        .collect()
}

/// Index and value of the highest entry other than `i` (first on ties).
pub(crate) fn best_other(values: &[f64], i: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in values.iter().enumerate() {
        if j == i {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((j, v)),
        }
    }
    best
}

fn with_dummy(transformed: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(transformed.len() + 1);
    z.extend_from_slice(transformed);
    z.push(0.0);
    z
}

fn check_count(net: &MonotonicNet, profile: &BidProfile) -> Result<(), AuctionError> {
    if profile.len() != net.n_bidders() {
        return Err(AuctionError::BidderCount {
            expected: net.n_bidders(),
            found: profile.len(),
        });
    }
    Ok(())
}

/// Full auction on one profile.
pub fn run_auction(
    net: &MonotonicNet,
    profile: &BidProfile,
    k: f64,
    mode: AllocationMode,
) -> Result<AuctionOutcome, AuctionError> {
    let transformed = transform_bids(net, profile)?;
    let soft = allocate(&transformed, k)?;
    let raw_payments = payment_raw(&transformed);
    let n = transformed.len();
    let slot = argmax_first(&with_dummy(&transformed)).expect("non-empty");
    let winner = (slot < n).then_some(slot);
    match mode {
        AllocationMode::Soft => {
            let payments: Vec<f64> = raw_payments
                .iter()
                .enumerate()
                .map(|(i, &p0)| net.inverse(i, p0))
                .collect();
            let revenue = soft.iter().zip(&payments).map(|(g, p)| g * p).sum();
            Ok(AuctionOutcome {
                transformed,
                allocation: soft,
                raw_payments,
                payments,
                winner,
                revenue,
            })
        }
        AllocationMode::Hard => {
            let mut allocation = vec![0.0; n + 1];
            allocation[slot] = 1.0;
            let mut payments = vec![0.0; n];
            if let Some(w) = winner {
                payments[w] = net.inverse(w, raw_payments[w]);
            }
            let revenue = payments.iter().sum();
            Ok(AuctionOutcome {
                transformed,
                allocation,
                raw_payments,
                payments,
                winner,
                revenue,
            })
        }
    }
}

/// Hard-mode evaluation on raw bids, without profile validation.
pub(crate) fn hard_outcome(net: &MonotonicNet, bids: &[f64]) -> HardOutcome {
    let n = bids.len();
    let mut best = 0.0;
    let mut winner = None;
    let mut transformed = Vec::with_capacity(n);
    for (i, &v) in bids.iter().enumerate() {
        let t = net.transform(i, v);
        transformed.push(t);
        // the dummy 0 sits after every bidder, so a bidder at exactly 0 still wins
        if (winner.is_none() && t >= best) || (winner.is_some() && t > best) {
            best = t;
            winner = Some(i);
        }
    }
    let mut payments = vec![0.0; n];
    if let Some(w) = winner {
        let p0 = best_other(&transformed, w).map_or(0.0, |(_, b)| b.max(0.0));
        payments[w] = net.inverse(w, p0);
    }
    HardOutcome { winner, payments }
}

impl Mechanism for MonotonicNet {
    fn name(&self) -> &str {
        "neural-myerson"
    }

    fn run(&self, bids: &[f64]) -> HardOutcome {
        hard_outcome(self, bids)
    }
}
