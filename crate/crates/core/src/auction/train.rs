use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{max_of_min_unchecked, min_of_max_inverse_unchecked, softmax_unchecked};

use super::{best_other, hard_outcome, AuctionError, MonotonicNet, ValuationSampler};

/// Sampler stream used for training batches; evaluation uses other streams.
const TRAIN_STREAM: u64 = 0x74_7261_696e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuctionTrainConfig {
    pub n_bidders: usize,
    pub groups: usize,
    pub units: usize,
    pub shared: bool,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for AuctionTrainConfig {
    fn default() -> Self {
        Self {
            n_bidders: 3,
            groups: 5,
            units: 10,
            shared: true,
            train_temperature: 50.0,
            eval_temperature: 500.0,
            learning_rate: 1e-3,
            batch_size: 128,
            iterations: 5000,
            seed: 0,
        }
    }
}

impl AuctionTrainConfig {
    pub fn validate(&self) -> Result<(), AuctionError> {
        let bad = |what: &str| Err(AuctionError::InvalidConfig(what.to_owned()));
        if self.n_bidders == 0 || self.groups == 0 || self.units == 0 {
            return bad("n_bidders, groups and units must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.train_temperature > 0.0 && self.train_temperature.is_finite()) {
            return bad("train_temperature must be positive");
        }
        if !(self.eval_temperature >= self.train_temperature && self.eval_temperature.is_finite()) {
            return bad("eval_temperature must be finite and at least train_temperature");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionMetrics {
    pub iteration: usize,
    pub loss: f64,
    /// Hard-mode mean revenue on the same batch.
    pub revenue_hard: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAuction {
    pub net: MonotonicNet,
    pub metrics: Vec<AuctionMetrics>,
}

/// Soft-mode expected revenue `sum_i g_i p_i` on one profile.
///
/// Forward pass only; the finite-difference oracle differentiates this.
pub fn soft_revenue(net: &MonotonicNet, bids: &[f64], k: f64) -> f64 {
    let transformed: Vec<f64> = bids.iter().enumerate().map(|(i, &v)| net.transform(i, v)).collect();
    let mut z = transformed.clone();
    z.push(0.0);
    let g = softmax_unchecked(&z, k);
    (0..bids.len())
        .map(|i| {
            let p0 = best_other(&transformed, i).map_or(0.0, |(_, b)| b.max(0.0));
            g[i] * net.inverse(i, p0)
        })
        .sum()
}

/// Negative mean soft revenue over `batch`, with analytic gradients with
/// respect to every `alpha` and `beta` added into the net's gradient slots.
pub fn revenue_loss(net: &mut MonotonicNet, batch: &[Vec<f64>], k: f64) -> Result<f64, AuctionError> {
    if batch.is_empty() {
        return Err(AuctionError::InvalidConfig("empty batch".into()));
    }
    if !(k > 0.0) {
        return Err(crate::numcore::NumError::NonPositiveTemperature(k).into());
    }
    let n = net.n_bidders();
    let (groups, units) = (net.groups(), net.units());
    let sets = net.n_sets();
    let width = groups * units;
    let mut d_alpha = vec![vec![0.0; width]; sets];
    let mut d_beta = vec![vec![0.0; width]; sets];
    let mut total = 0.0;

    let mut transformed = vec![0.0; n];
    let mut pieces = Vec::with_capacity(n);
    let mut z = vec![0.0; n + 1];
    let mut payments = vec![0.0; n];
    let mut d_bbar = vec![0.0; n];

    for bids in batch {
        if bids.len() != n {
            return Err(AuctionError::BidderCount {
                expected: n,
                found: bids.len(),
            });
        }
        pieces.clear();
        for (i, &v) in bids.iter().enumerate() {
            let s = net.set_of(i);
            let (t, piece) = max_of_min_unchecked(v, net.weights(s), net.beta(s), groups, units);
            transformed[i] = t;
            pieces.push(piece);
            z[i] = t;
        }
        z[n] = 0.0;
        let g = softmax_unchecked(&z, k);

        d_bbar.iter_mut().for_each(|d| *d = 0.0);
        let mut revenue = 0.0;
        for i in 0..n {
            let s = net.set_of(i);
            let other = best_other(&transformed, i).filter(|&(_, b)| b > 0.0);
            let p0 = other.map_or(0.0, |(_, b)| b);
            let (p, inv) = min_of_max_inverse_unchecked(p0, net.weights(s), net.beta(s), groups, units);
            payments[i] = p;
            revenue += g[i] * p;

            // d(g_i p_i)/d p_i = g_i, routed through the active inverse piece
            let q = inv.group * units + inv.unit;
            let w = net.weights(s)[q];
            d_beta[s][q] -= g[i] / w;
            d_alpha[s][q] -= g[i] * p;
            if let Some((o, _)) = other {
                d_bbar[o] += g[i] / w;
            }
        }
        // softmax: dR/db_s = k g_s (p_s - R); the dummy pays nothing
        for s in 0..n {
            d_bbar[s] += k * g[s] * (payments[s] - revenue);
        }
        for (i, piece) in pieces.iter().enumerate() {
            let s = net.set_of(i);
            let q = piece.group * units + piece.unit;
            let w = net.weights(s)[q];
            d_alpha[s][q] += d_bbar[i] * w * bids[i];
            d_beta[s][q] += d_bbar[i];
        }
        total += revenue;
    }

    let scale = -1.0 / batch.len() as f64;
    let loss = scale * total;
    if !loss.is_finite() {
        return Err(AuctionError::InvalidConfig(format!("non-finite revenue loss {loss}")));
    }
    let params = net.params_mut();
    for s in 0..sets {
        for (g, d) in params.slot_mut(2 * s).grad.iter_mut().zip(&d_alpha[s]) {
            *g += scale * d;
        }
        for (g, d) in params.slot_mut(2 * s + 1).grad.iter_mut().zip(&d_beta[s]) {
            *g += scale * d;
        }
    }
    Ok(loss)
}

/// Distance from `bids` to the nearest non-differentiable point of the
/// soft revenue: min/max ties inside the network and its inverse, ties
/// among competing transformed bids, and the payment ReLU at zero.
pub fn kink_margin(net: &MonotonicNet, bids: &[f64]) -> f64 {
    let transformed: Vec<f64> = bids.iter().enumerate().map(|(i, &v)| net.transform(i, v)).collect();
    let mut margin = f64::INFINITY;
    for (i, &v) in bids.iter().enumerate() {
        margin = margin.min(net.transform_margin(i, v));
        for j in (i + 1)..bids.len() {
            margin = margin.min((transformed[i] - transformed[j]).abs());
        }
        let p0 = match best_other(&transformed, i) {
            Some((_, b)) => {
                margin = margin.min(b.abs());
                b.max(0.0)
            }
            None => 0.0,
        };
        margin = margin.min(net.inverse_margin(i, p0));
    }
    margin
}

/// Batched SGD on [`revenue_loss`] using the training temperature.
///
/// `observer` sees every metrics row as it is produced.
pub fn train_auction(
    config: &AuctionTrainConfig,
    sampler: &ValuationSampler,
    mut observer: Option<&mut dyn FnMut(&AuctionMetrics)>,
) -> Result<TrainedAuction, AuctionError> {
    config.validate()?;
    sampler.validate()?;
    if sampler.n_bidders != config.n_bidders {
        return Err(AuctionError::InvalidConfig(format!(
            "sampler draws {} bidders but the config has {}",
            sampler.n_bidders, config.n_bidders
        )));
    }
    let scale = (0..config.n_bidders)
        .map(|i| sampler.support(i).1)
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = MonotonicNet::random(
        config.n_bidders,
        config.groups,
        config.units,
        config.shared,
        scale,
        &mut init_rng,
    )?;

    let mut rng = sampler.rng(TRAIN_STREAM);
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(config.iterations);
    let mut batch = vec![vec![0.0; config.n_bidders]; config.batch_size];
    for iteration in 0..config.iterations {
        for profile in &mut batch {
            sampler.fill(&mut rng, profile);
        }
        let loss = revenue_loss(&mut net, &batch, config.train_temperature).map_err(|e| {
            AuctionError::Diverged {
                iteration,
                reason: e.to_string(),
            }
        })?;
        let revenue_hard = batch
            .iter()
            .map(|b| hard_outcome(&net, b).payments.iter().sum::<f64>())
            .sum::<f64>()
            / config.batch_size as f64;
        net.sgd_step(config.learning_rate)
            .map_err(|e| AuctionError::Diverged {
                iteration,
                reason: e.to_string(),
            })?;
        let row = AuctionMetrics {
            iteration,
            loss,
            revenue_hard,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(obs) = observer.as_deref_mut() {
            obs(&row);
        }
        metrics.push(row);
    }
    Ok(TrainedAuction { net, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let mut net = MonotonicNet::identity(2);
        let loss = revenue_loss(&mut net, &[vec![1.0, 0.0]], 1e4).unwrap();
        assert!(loss.abs() < 1e-9);
        let loss = revenue_loss(&mut net, &[vec![1.0, 0.5]], 1e4).unwrap();
        assert!((loss + 0.5).abs() < 1e-9);
    }

    #[test]
    fn loss_is_batch_mean() {
        let batch = vec![vec![0.3, 0.9], vec![0.7, 0.2], vec![0.55, 0.6]];
        let net = MonotonicNet::uniform_virtual_value(2);
        let expected: f64 = -batch.iter().map(|b| soft_revenue(&net, b, 20.0)).sum::<f64>() / 3.0;
        let loss = revenue_loss(&mut net.clone(), &batch, 20.0).unwrap();
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn loss_rejects_bad_input() {
        let mut net = MonotonicNet::identity(2);
        assert!(revenue_loss(&mut net, &[], 10.0).is_err());
        assert!(revenue_loss(&mut net, &[vec![0.1]], 10.0).is_err());
        assert!(revenue_loss(&mut net, &[vec![0.1, 0.2]], 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AuctionTrainConfig::default().validate().is_ok());
        let mut c = AuctionTrainConfig {
            eval_temperature: 10.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.eval_temperature = 500.0;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let config = AuctionTrainConfig {
            n_bidders: 2,
            learning_rate: 0.0,
            iterations: 20,
            batch_size: 16,
            seed: 4,
            ..Default::default()
        };
        let sampler = ValuationSampler::uniform(2, 4);
        let trained = train_auction(&config, &sampler, None).unwrap();
        let fresh = train_auction(&AuctionTrainConfig { iterations: 0, ..config.clone() }, &sampler, None)
            .unwrap();
        assert_eq!(trained.net.params().flat_values(), fresh.net.params().flat_values());

        // every logged loss is the untouched net's loss on that batch
        let mut rng = sampler.rng(TRAIN_STREAM);
        for row in &trained.metrics {
            let batch: Vec<Vec<f64>> = (0..16).map(|_| sampler.profile(&mut rng)).collect();
            let loss = revenue_loss(&mut fresh.net.clone(), &batch, config.train_temperature).unwrap();
            assert_eq!(loss, row.loss);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let config = AuctionTrainConfig {
            n_bidders: 2,
            iterations: 50,
            batch_size: 32,
            seed: 1,
            ..Default::default()
        };
        let sampler = ValuationSampler::uniform(2, 1);
        let a = train_auction(&config, &sampler, None).unwrap();
        let b = train_auction(&config, &sampler, None).unwrap();
        assert_eq!(a.net, b.net);
        let strip = |m: &[AuctionMetrics]| m.iter().map(|r| (r.loss, r.revenue_hard)).collect::<Vec<_>>();
        assert_eq!(strip(&a.metrics), strip(&b.metrics));
    }
}
