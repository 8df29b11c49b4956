//! Classical single-item baselines and the audit harness that measures
//! revenue, incentive-compatibility regret and individual-rationality
//! violations for any [`Mechanism`].

use serde::Serialize;

use crate::auction::{par_chunks, Moments, ValuationSampler, ValueDistribution};

/// Outcome of a deterministic single-item rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardOutcome {
    /// `None` means the item is not sold.
    pub winner: Option<usize>,
    pub payments: Vec<f64>,
}

impl HardOutcome {
    pub fn revenue(&self) -> f64 {
        self.payments.iter().sum()
    }

    /// `allocation * value - payment` for `bidder`.
    pub fn utility(&self, bidder: usize, value: f64) -> f64 {
        let won = if self.winner == Some(bidder) { 1.0 } else { 0.0 };
        won * value - self.payments[bidder]
    }
}

pub trait Mechanism: Sync {
    fn name(&self) -> &str;
    fn run(&self, bids: &[f64]) -> HardOutcome;
}

fn top_two(bids: &[f64]) -> (usize, Option<f64>) {
    let winner = crate::numcore::argmax_first(bids).expect("at least one bid");
    let second = crate::auction::best_other(bids, winner).map(|(_, b)| b);
    (winner, second)
}

/// Highest bid wins (lowest index on ties) and pays its own bid.
pub fn fpa(bids: &[f64]) -> HardOutcome {
    let (winner, _) = top_two(bids);
    let mut payments = vec![0.0; bids.len()];
    payments[winner] = bids[winner];
    HardOutcome {
        winner: Some(winner),
        payments,
    }
}

/// Highest bid wins and pays the second-highest bid; a lone bidder pays 0.
pub fn spa(bids: &[f64]) -> HardOutcome {
    let (winner, second) = top_two(bids);
    let mut payments = vec![0.0; bids.len()];
    payments[winner] = second.unwrap_or(0.0);
    HardOutcome {
        winner: Some(winner),
        payments,
    }
}

/// Myerson's rule with a known virtual valuation: the highest positive
/// virtual value wins and pays `inverse(max(0, runner-up virtual value))`.
pub fn analytic_myerson(
    bids: &[f64],
    virtual_value: impl Fn(f64) -> f64,
    inverse: impl Fn(f64) -> f64,
) -> HardOutcome {
    let virt: Vec<f64> = bids.iter().map(|&v| virtual_value(v)).collect();
    let (winner, second) = top_two(&virt);
    let mut payments = vec![0.0; bids.len()];
    if virt[winner] > 0.0 {
        payments[winner] = inverse(second.unwrap_or(0.0).max(0.0));
        HardOutcome {
            winner: Some(winner),
            payments,
        }
    } else {
        HardOutcome {
            winner: None,
            payments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstPrice;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecondPrice;

impl Mechanism for FirstPrice {
    fn name(&self) -> &str {
        "fpa"
    }

    fn run(&self, bids: &[f64]) -> HardOutcome {
        fpa(bids)
    }
}

impl Mechanism for SecondPrice {
    fn name(&self) -> &str {
        "spa"
    }

    fn run(&self, bids: &[f64]) -> HardOutcome {
        spa(bids)
    }
}

/// Closed-form virtual valuations for the supported i.i.d. laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VirtualValuation {
    /// `phi(v) = v`: no reserve, reduces to the second-price auction.
    Identity,
    /// Uniform on `[low, high]`: `phi(v) = 2v - high`.
    Uniform { low: f64, high: f64 },
    /// Exponential(rate) truncated at `cap`:
    /// `phi(v) = v - (1 - exp(-rate (cap - v))) / rate`.
    TruncatedExponential { rate: f64, cap: f64 },
}

impl VirtualValuation {
    pub fn for_distribution(dist: &ValueDistribution) -> Option<Self> {
        match *dist {
            ValueDistribution::Uniform { low, high } => Some(Self::Uniform { low, high }),
            ValueDistribution::Exponential { rate, cap } => {
                Some(Self::TruncatedExponential { rate, cap })
            }
            ValueDistribution::Constant { .. } => None,
        }
    }

    pub fn value(&self, v: f64) -> f64 {
        match *self {
            Self::Identity => v,
            Self::Uniform { high, .. } => 2.0 * v - high,
            Self::TruncatedExponential { rate, cap } => v + (-rate * (cap - v)).exp_m1() / rate,
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            Self::Identity => y,
            Self::Uniform { high, .. } => (y + high) / 2.0,
            Self::TruncatedExponential { cap, .. } => {
                // strictly increasing on (-inf, cap]; phi(cap) = cap
                if y >= cap {
                    return y;
                }
                let mut hi = cap;
                let mut lo = y;
                while self.value(lo) > y {
                    lo -= (cap - lo).max(1.0);
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if self.value(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// [`analytic_myerson`] packaged as a [`Mechanism`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticMyerson {
    pub virtual_valuation: VirtualValuation,
}

impl AnalyticMyerson {
    /// Optimal auction for i.i.d. uniform `[0, 1]`: `phi(v) = 2v - 1`, reserve 1/2.
    pub fn uniform_unit() -> Self {
        Self {
            virtual_valuation: VirtualValuation::Uniform { low: 0.0, high: 1.0 },
        }
    }
}

impl Mechanism for AnalyticMyerson {
    fn name(&self) -> &str {
        "myerson"
    }

    fn run(&self, bids: &[f64]) -> HardOutcome {
        let vv = self.virtual_valuation;
        analytic_myerson(bids, |v| vv.value(v), |y| vv.inverse(y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevenueEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

// Stream offsets so revenue, IC and IR audits never share random numbers.
const REVENUE_STREAM: u64 = 1 << 32;
const IC_STREAM: u64 = 2 << 32;
const IR_STREAM: u64 = 3 << 32;

/// Mean total payment over `samples` truthful profiles.
pub fn monte_carlo_revenue(
    mech: &dyn Mechanism,
    sampler: &ValuationSampler,
    samples: usize,
) -> RevenueEstimate {
    let moments = par_chunks(samples, |chunk, len| {
        let mut rng = sampler.rng(REVENUE_STREAM + chunk);
        let mut bids = vec![0.0; sampler.n_bidders];
        let mut m = Moments::default();
        for _ in 0..len {
            sampler.fill(&mut rng, &mut bids);
            m.push(mech.run(&bids).revenue());
        }
        m
    })
    .into_iter()
    .fold(Moments::default(), Moments::merge);
    RevenueEstimate {
        mean: moments.mean,
        stderr: moments.stderr(),
        samples: moments.count,
    }
}

pub const DEFAULT_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretEstimate {
    /// Largest `E[u(m; v)] - E[u(v; v)]` over the grid; never below 0
    /// because `m = v` is on the grid.
    pub max_regret: f64,
    pub bidder: usize,
    pub valuation: f64,
    pub misreport: f64,
}

/// Maximum expected gain from misreporting.
///
/// For each bidder, the true value `v` and report `m` both range over a
/// `grid`-point uniform grid on the bidder's support. Opponent bids come
/// from `samples` profiles shared by every `(v, m)` pair, so truthful
/// mechanisms show exactly zero regret rather than sampling noise.
pub fn ic_regret(
    mech: &dyn Mechanism,
    sampler: &ValuationSampler,
    grid: usize,
    samples: usize,
) -> RegretEstimate {
    assert!(grid >= 2, "misreport grid needs at least two points");
    let mut best = RegretEstimate {
        max_regret: f64::NEG_INFINITY,
        bidder: 0,
        valuation: 0.0,
        misreport: 0.0,
    };
    let n = sampler.n_bidders;
    for bidder in 0..n {
        let (lo, hi) = sampler.support(bidder);
        let points: Vec<f64> = (0..grid)
            .map(|g| lo + (hi - lo) * g as f64 / (grid - 1) as f64)
            .collect();
        // win probability and expected payment when reporting each grid point;
        // neither depends on the true value
        let partial = par_chunks(samples, |chunk, len| {
            let mut rng = sampler.rng(IC_STREAM + ((bidder as u64) << 24) + chunk);
            let mut bids = vec![0.0; n];
            let mut wins = vec![0.0; grid];
            let mut pays = vec![0.0; grid];
            for _ in 0..len {
                sampler.fill(&mut rng, &mut bids);
                for (g, &m) in points.iter().enumerate() {
                    bids[bidder] = m;
                    let out = mech.run(&bids);
                    if out.winner == Some(bidder) {
                        wins[g] += 1.0;
                    }
                    pays[g] += out.payments[bidder];
                }
            }
            (wins, pays)
        });
        let mut wins = vec![0.0; grid];
        let mut pays = vec![0.0; grid];
        for (w, p) in partial {
            wins.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
            pays.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
        let scale = 1.0 / samples as f64;
        for (vi, &v) in points.iter().enumerate() {
            let truthful = v * wins[vi] * scale - pays[vi] * scale;
            for (mi, &m) in points.iter().enumerate() {
                let regret = v * wins[mi] * scale - pays[mi] * scale - truthful;
                if regret > best.max_regret {
                    best = RegretEstimate {
                        max_regret: regret,
                        bidder,
                        valuation: v,
                        misreport: m,
                    };
                }
            }
        }
    }
    best
}

/// Utility below `-IR_TOLERANCE` counts as an IR violation; the slack only
/// absorbs floating-point round-off in inverse transforms.
pub const IR_TOLERANCE: f64 = 1e-9;

/// Fraction of truthful profiles in which some bidder ends with negative utility.
pub fn ir_violation(mech: &dyn Mechanism, sampler: &ValuationSampler, samples: usize) -> f64 {
    let violations: u64 = par_chunks(samples, |chunk, len| {
        let mut rng = sampler.rng(IR_STREAM + chunk);
        let mut bids = vec![0.0; sampler.n_bidders];
        let mut count = 0u64;
        for _ in 0..len {
            sampler.fill(&mut rng, &mut bids);
            let out = mech.run(&bids);
            if bids
                .iter()
                .enumerate()
                .any(|(i, &v)| out.utility(i, v) < -IR_TOLERANCE)
            {
                count += 1;
            }
        }
        count
    })
    .into_iter()
    .sum();
    violations as f64 / samples.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditConfig {
    pub revenue_samples: usize,
    pub ic_grid: usize,
    pub ic_samples: usize,
    pub ir_samples: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            revenue_samples: 1_000_000,
            ic_grid: DEFAULT_GRID,
            ic_samples: 10_000,
            ir_samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub revenue: f64,
    pub stderr: f64,
    pub ic_regret: f64,
    pub ir_rate: f64,
    pub samples: u64,
    pub ic_grid: usize,
    pub ic_samples: usize,
    pub ir_samples: usize,
    pub seed: u64,
}

pub fn audit(mech: &dyn Mechanism, sampler: &ValuationSampler, config: &AuditConfig) -> AuditReport {
    let revenue = monte_carlo_revenue(mech, sampler, config.revenue_samples);
    let regret = ic_regret(mech, sampler, config.ic_grid, config.ic_samples);
    let ir_rate = ir_violation(mech, sampler, config.ir_samples);
    AuditReport {
        mechanism: mech.name().to_owned(),
        revenue: revenue.mean,
        stderr: revenue.stderr,
        ic_regret: regret.max_regret,
        ir_rate,
        samples: revenue.samples,
        ic_grid: config.ic_grid,
        ic_samples: config.ic_samples,
        ir_samples: config.ir_samples,
        seed: sampler.seed,
    }
}
