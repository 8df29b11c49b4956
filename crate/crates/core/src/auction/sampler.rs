use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AuctionError;

/// Single-bidder valuation law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueDistribution {
    Uniform { low: f64, high: f64 },
    /// Exponential with the given rate, truncated to `[0, cap]`.
    Exponential { rate: f64, cap: f64 },
    Constant { value: f64 },
}

impl ValueDistribution {
    pub const UNIT_UNIFORM: Self = ValueDistribution::Uniform {
        low: 0.0,
        high: 1.0,
    };

    pub fn validate(&self) -> Result<(), AuctionError> {
        let ok = match *self {
            ValueDistribution::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low >= 0.0 && high > low
            }
            ValueDistribution::Exponential { rate, cap } => {
                rate.is_finite() && cap.is_finite() && rate > 0.0 && cap > 0.0
            }
            ValueDistribution::Constant { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(AuctionError::InvalidConfig(format!(
                "invalid valuation distribution {self:?}"
            )))
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            ValueDistribution::Uniform { low, high } => (low, high),
            ValueDistribution::Exponential { cap, .. } => (0.0, cap),
            ValueDistribution::Constant { value } => (value, value),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ValueDistribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            ValueDistribution::Exponential { rate, cap } => {
                // inverse CDF of the truncated law
                let u: f64 = rng.random();
                let mass = -(-rate * cap).exp_m1();
                (-(-u * mass).ln_1p() / rate).min(cap)
            }
            ValueDistribution::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Valuations {
    Iid(ValueDistribution),
    PerBidder(Vec<ValueDistribution>),
}

/// Seeded source of valuation profiles.
///
/// Each logical consumer draws from its own ChaCha stream, so Monte Carlo
/// chunks can be evaluated in any order (or in parallel) and still reduce
/// to bit-identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationSampler {
    pub valuations: Valuations,
    pub n_bidders: usize,
    pub seed: u64,
}

impl ValuationSampler {
    pub fn iid(dist: ValueDistribution, n_bidders: usize, seed: u64) -> Self {
        Self {
            valuations: Valuations::Iid(dist),
            n_bidders,
            seed,
        }
    }

    pub fn uniform(n_bidders: usize, seed: u64) -> Self {
        Self::iid(ValueDistribution::UNIT_UNIFORM, n_bidders, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        if self.n_bidders == 0 {
            return Err(AuctionError::InvalidConfig("sampler needs at least one bidder".into()));
        }
        match &self.valuations {
            Valuations::Iid(d) => d.validate(),
            Valuations::PerBidder(ds) => {
                if ds.len() != self.n_bidders {
                    return Err(AuctionError::InvalidConfig(format!(
                        "{} per-bidder distributions for {} bidders",
                        ds.len(),
                        self.n_bidders
                    )));
                }
                ds.iter().try_for_each(ValueDistribution::validate)
            }
        }
    }

    pub fn distribution(&self, bidder: usize) -> &ValueDistribution {
        match &self.valuations {
            Valuations::Iid(d) => d,
            Valuations::PerBidder(ds) => &ds[bidder],
        }
    }

    pub fn support(&self, bidder: usize) -> (f64, f64) {
        self.distribution(bidder).support()
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.valuations, Valuations::Iid(_))
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_bidders);
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.distribution(i).sample(rng);
        }
    }

    pub fn profile<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bidders];
        self.fill(rng, &mut out);
        out
    }
}

/// Profiles per Monte Carlo chunk. Fixed so results never depend on the
/// worker count.
pub const CHUNK: usize = 8192;

/// Evaluates `f(chunk_index, chunk_len)` over `total` items split into
/// [`CHUNK`]-sized pieces and returns the per-chunk results in order.
pub(crate) fn par_chunks<T, F>(total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, usize) -> T + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(total - c * CHUNK);
            f(c as u64, len)
        })
        .collect()
}

/// Running mean and squared deviation; merges are order-stable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = (self.m2 / (self.count - 1) as f64).max(0.0);
        (var / self.count as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_support() {
        let dists = [
            ValueDistribution::UNIT_UNIFORM,
            ValueDistribution::Uniform { low: 2.0, high: 3.0 },
            ValueDistribution::Exponential { rate: 2.0, cap: 1.5 },
            ValueDistribution::Constant { value: 0.7 },
        ];
        for d in dists {
            let s = ValuationSampler::iid(d, 3, 11);
            let mut rng = s.rng(0);
            let (lo, hi) = d.support();
            for _ in 0..10_000 {
                for v in s.profile(&mut rng) {
                    assert!(v >= lo && v <= hi, "{v} outside {d:?}");
                }
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = ValuationSampler::uniform(2, 5);
        let a: Vec<_> = (0..4).map(|_| s.profile(&mut s.rng(3))).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(s.profile(&mut s.rng(3)), s.profile(&mut s.rng(4)));
    }

    #[test]
    fn truncated_exponential_mean() {
        // mean of Exp(rate) truncated at cap: 1/rate - cap e^{-rate cap} / (1 - e^{-rate cap})
        let (rate, cap) = (1.5_f64, 2.0_f64);
        let expected = 1.0 / rate - cap * (-rate * cap).exp() / (1.0 - (-rate * cap).exp());
        let d = ValueDistribution::Exponential { rate, cap };
        let mut rng = ValuationSampler::iid(d, 1, 1).rng(0);
        let mut m = Moments::default();
        for _ in 0..200_000 {
            m.push(d.sample(&mut rng));
        }
        assert!((m.mean - expected).abs() < 4.0 * m.stderr(), "{} vs {expected}", m.mean);
    }

    #[test]
    fn per_bidder_validation() {
        let s = ValuationSampler {
            valuations: Valuations::PerBidder(vec![ValueDistribution::UNIT_UNIFORM]),
            n_bidders: 2,
            seed: 0,
        };
        assert!(s.validate().is_err());
        let bad = ValuationSampler::iid(ValueDistribution::Uniform { low: 1.0, high: 0.5 }, 2, 0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (a, b) = xs.split_at(333);
        let mut ma = Moments::default();
        let mut mb = Moments::default();
        a.iter().for_each(|&x| ma.push(x));
        b.iter().for_each(|&x| mb.push(x));
        let merged = ma.merge(mb);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-8);
    }
}
