use rand::Rng;

use crate::numcore::{
    max_of_min_unchecked, min_of_max_inverse_unchecked, ActivePiece, NumError, ParamStore,
};

use super::AuctionError;

/// Monotone virtual-valuation network: `phi(v) = max_k min_j (exp(alpha_kj) v + beta_kj)`.
///
/// Weights are stored as logs so every effective slope stays strictly
/// positive under unconstrained SGD. With `shared = true` a single
/// parameter set serves every bidder; otherwise bidder `i` owns set `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicNet {
    n_bidders: usize,
    groups: usize,
    units: usize,
    shared: bool,
    params: ParamStore,
    // exp(alpha) per parameter set, refreshed whenever alpha changes
    weights: Vec<Vec<f64>>,
}

impl MonotonicNet {
    /// Builds a net from explicit per-set `alpha` and `beta` rows laid out
    /// `[set][k * units + j]`.
    pub fn from_sets(
        n_bidders: usize,
        groups: usize,
        units: usize,
        shared: bool,
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
    ) -> Result<Self, AuctionError> {
        if n_bidders == 0 || groups == 0 || units == 0 {
            return Err(AuctionError::InvalidConfig(format!(
                "monotonic net needs N, K, J >= 1 (got {n_bidders}, {groups}, {units})"
            )));
        }
        let sets = if shared { 1 } else { n_bidders };
        if alpha.len() != sets || beta.len() != sets {
            return Err(AuctionError::InvalidConfig(format!(
                "expected {sets} parameter sets, got {} alpha / {} beta",
                alpha.len(),
                beta.len()
            )));
        }
        let mut params = ParamStore::new();
        for (s, (a, b)) in alpha.into_iter().zip(beta).enumerate() {
            let (an, bn) = if shared {
                ("alpha".to_owned(), "beta".to_owned())
            } else {
                (format!("alpha.{s}"), format!("beta.{s}"))
            };
            params.insert(&an, vec![groups, units], a)?;
            params.insert(&bn, vec![groups, units], b)?;
        }
        let mut net = Self {
            n_bidders,
            groups,
            units,
            shared,
            params,
            weights: Vec::new(),
        };
        net.validate_finite()?;
        net.refresh();
        Ok(net)
    }

    /// `phi(v) = slope * v + intercept` for every bidder, as a single piece.
    pub fn affine(n_bidders: usize, slope: f64, intercept: f64) -> Result<Self, AuctionError> {
        if !(slope > 0.0) {
            return Err(AuctionError::InvalidConfig(format!(
                "affine virtual value needs a positive slope, got {slope}"
            )));
        }
        Self::from_sets(n_bidders, 1, 1, true, vec![vec![slope.ln()]], vec![vec![intercept]])
    }

    pub fn identity(n_bidders: usize) -> Self {
        Self::affine(n_bidders, 1.0, 0.0).expect("identity net is valid")
    }

    /// Hand-set optimal transform for i.i.d. uniform `[0, 1]` bidders: `phi(v) = 2v - 1`.
    pub fn uniform_virtual_value(n_bidders: usize) -> Self {
        Self::affine(n_bidders, 2.0, -1.0).expect("2v - 1 net is valid")
    }

    /// Random initialization: log-weights near zero and biases spread over
    /// `[-scale, 0]`, which places the initial reserve inside a support of
    /// width `scale`.
    pub fn random<R: Rng + ?Sized>(
        n_bidders: usize,
        groups: usize,
        units: usize,
        shared: bool,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, AuctionError> {
        let sets = if shared { 1 } else { n_bidders };
        let n = groups * units;
        let mut alpha = Vec::with_capacity(sets);
        let mut beta = Vec::with_capacity(sets);
        for _ in 0..sets {
            alpha.push((0..n).map(|_| rng.random_range(-0.1..0.1)).collect());
            beta.push((0..n).map(|_| -scale * rng.random::<f64>()).collect());
        }
        Self::from_sets(n_bidders, groups, units, shared, alpha, beta)
    }

    pub fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn n_sets(&self) -> usize {
        if self.shared {
            1
        } else {
            self.n_bidders
        }
    }

    pub fn set_of(&self, bidder: usize) -> usize {
        if self.shared {
            0
        } else {
            bidder
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces the parameter values (same names and shapes required).
    pub fn set_params(&mut self, store: ParamStore) -> Result<(), AuctionError> {
        let same_layout = store.len() == self.params.len()
            && store
                .iter()
                .zip(self.params.iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same_layout {
            return Err(AuctionError::InvalidConfig(
                "parameter store layout does not match the network".into(),
            ));
        }
        self.params = store;
        self.validate_finite()?;
        self.refresh();
        Ok(())
    }

    /// `alpha` rows for parameter set `s`.
    pub fn alpha(&self, s: usize) -> &[f64] {
        &self.params.slot(2 * s).values
    }

    pub fn beta(&self, s: usize) -> &[f64] {
        &self.params.slot(2 * s + 1).values
    }

    /// Effective slopes `exp(alpha)` for parameter set `s`.
    pub fn weights(&self, s: usize) -> &[f64] {
        &self.weights[s]
    }

    pub(crate) fn refresh(&mut self) {
        self.weights = (0..self.n_sets())
            .map(|s| self.alpha(s).iter().map(|a| a.exp()).collect())
            .collect();
    }

    fn validate_finite(&self) -> Result<(), AuctionError> {
        for p in self.params.iter() {
            if let Some(i) = p.values.iter().position(|v| !v.is_finite()) {
                return Err(AuctionError::InvalidConfig(format!(
                    "parameter `{}` has non-finite entry at {i}",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// Applies one SGD step to the accumulated gradients.
    pub fn sgd_step(&mut self, lr: f64) -> Result<(), NumError> {
        crate::numcore::sgd_step(&mut self.params, lr)?;
        self.refresh();
        Ok(())
    }

    /// `phi_i(v)` together with the affine piece that attains it.
    pub fn transform_piece(&self, bidder: usize, v: f64) -> (f64, ActivePiece) {
        let s = self.set_of(bidder);
        max_of_min_unchecked(v, &self.weights[s], self.beta(s), self.groups, self.units)
    }

    pub fn transform(&self, bidder: usize, v: f64) -> f64 {
        self.transform_piece(bidder, v).0
    }

    /// `phi_i^{-1}(y) = min_k max_j (y - beta_kj) / exp(alpha_kj)`.
    pub fn inverse_piece(&self, bidder: usize, y: f64) -> (f64, ActivePiece) {
        let s = self.set_of(bidder);
        min_of_max_inverse_unchecked(y, &self.weights[s], self.beta(s), self.groups, self.units)
    }

    pub fn inverse(&self, bidder: usize, y: f64) -> f64 {
        self.inverse_piece(bidder, y).0
    }

    /// Reserve price `phi_i^{-1}(0)`.
    pub fn reserve(&self, bidder: usize) -> f64 {
        self.inverse(bidder, 0.0)
    }

    /// Smallest gap between the attaining piece and its nearest competitor
    /// when evaluating `phi_i(v)`. Zero means `v` sits on a kink.
    pub fn transform_margin(&self, bidder: usize, v: f64) -> f64 {
        let s = self.set_of(bidder);
        let (w, b) = (&self.weights[s], self.beta(s));
        let group_vals: Vec<(f64, f64)> = (0..self.groups)
            .map(|g| {
                two_smallest((0..self.units).map(|u| w[g * self.units + u] * v + b[g * self.units + u]))
            })
            .collect();
        margin_of(&group_vals, false)
    }

    /// Kink margin of `phi_i^{-1}(y)`.
    pub fn inverse_margin(&self, bidder: usize, y: f64) -> f64 {
        let s = self.set_of(bidder);
        let (w, b) = (&self.weights[s], self.beta(s));
        let group_vals: Vec<(f64, f64)> = (0..self.groups)
            .map(|g| {
                let (lo, next) = two_smallest(
                    (0..self.units).map(|u| -(y - b[g * self.units + u]) / w[g * self.units + u]),
                );
                (-lo, -next)
            })
            .collect();
        margin_of(&group_vals, true)
    }
}

// (best, runner-up) of an iterator under `<`.
fn two_smallest(iter: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut best = f64::INFINITY;
    let mut next = f64::INFINITY;
    for v in iter {
        if v < best {
            next = best;
            best = v;
        } else if v < next {
            next = v;
        }
    }
    (best, next)
}

// Within-group gap of the selected group plus the between-group gap.
fn margin_of(group_vals: &[(f64, f64)], outer_min: bool) -> f64 {
    let mut order: Vec<usize> = (0..group_vals.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (group_vals[a].0, group_vals[b].0);
        if outer_min {
            x.total_cmp(&y)
        } else {
            y.total_cmp(&x)
        }
    });
    let chosen = group_vals[order[0]];
    let mut margin = (chosen.1 - chosen.0).abs();
    if let Some(&second) = order.get(1) {
        margin = margin.min((group_vals[second].0 - chosen.0).abs());
    }
    margin
}
