//! Invariants of the auction, mechanisms and CommNet, checked on random inputs.

use platoon::auction::{
    allocate, run_auction, AllocationMode, BidProfile, MonotonicNet, ValuationSampler,
};
use platoon::commnet::{CommNetConfig, CommNetPolicy, JointObservation};
use platoon::mechanisms::{analytic_myerson, spa, AnalyticMyerson, Mechanism};
use platoon::numcore::{softmax_temp, Activation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(seed: u64, n: usize, shared: bool) -> MonotonicNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = rng.random_range(1..=5);
    let units = rng.random_range(1..=5);
    let mut net = MonotonicNet::random(n, groups, units, shared, 1.0, &mut rng).unwrap();
    let mut store = net.params().clone();
    for idx in 0..store.len() {
        let p = store.slot_mut(idx);
        if p.name.starts_with("alpha") {
            p.values.iter_mut().for_each(|a| *a += rng.random_range(-2.0..2.0));
        }
    }
    net.set_params(store).unwrap();
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transform_is_strictly_increasing(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let net = random_net(seed, 2, false);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for bidder in 0..2 {
            let (flo, fhi) = (net.transform(bidder, lo), net.transform(bidder, hi));
            prop_assert!(flo <= fhi);
            if hi - lo > 1e-9 {
                prop_assert!(flo < fhi);
            }
        }
    }

    #[test]
    fn inverse_round_trips(seed in any::<u64>(), v in 0.0f64..1.0, y in -2.0f64..2.0) {
        let net = random_net(seed, 1, true);
        prop_assert!((net.inverse(0, net.transform(0, v)) - v).abs() < 1e-9);
        prop_assert!((net.transform(0, net.inverse(0, y)) - y).abs() < 1e-9);
    }

    #[test]
    fn softmax_and_allocation_are_normalized(
        xs in prop::collection::vec(-5.0f64..5.0, 1..8),
        k in 0.01f64..1000.0,
    ) {
        let p = softmax_temp(&xs, k).unwrap();
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let g = allocate(&xs, k).unwrap();
        prop_assert_eq!(g.len(), xs.len() + 1);
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_mode_is_ir_and_temperature_free(
        seed in any::<u64>(),
        bids in prop::collection::vec(0.0f64..1.0, 1..5),
        k in 0.1f64..1000.0,
    ) {
        let net = random_net(seed, bids.len(), seed % 2 == 0);
        let profile = BidProfile::new(bids.clone()).unwrap();
        let out = run_auction(&net, &profile, k, AllocationMode::Hard).unwrap();
        let other = run_auction(&net, &profile, 1.0, AllocationMode::Hard).unwrap();
        prop_assert_eq!(out.winner, other.winner);
        for (i, &p) in out.payments.iter().enumerate() {
            if Some(i) == out.winner {
                prop_assert!(p >= 0.0 && p <= bids[i] + 1e-12, "payment {} bid {}", p, bids[i]);
            } else {
                prop_assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn soft_allocation_converges_to_hard(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transformed: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = transformed.clone();
        z.push(0.0);
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] >= 1e-3);
        let best = z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let g = allocate(&transformed, 1e6).unwrap();
        for (i, &gi) in g.iter().enumerate() {
            let target = if i == best { 1.0 } else { 0.0 };
            prop_assert!((gi - target).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_bids_get_equal_allocation(seed in any::<u64>(), v in 0.0f64..1.0, n in 1usize..6) {
        let net = random_net(seed, n, true);
        let out = run_auction(&net, &BidProfile::new(vec![v; n]).unwrap(), 50.0, AllocationMode::Soft).unwrap();
        prop_assert!(out.allocation[..n].iter().all(|&g| g == out.allocation[0]));
    }

    #[test]
    fn spa_equals_identity_myerson(bids in prop::collection::vec(0.0f64..1.0, 1..6)) {
        prop_assert_eq!(spa(&bids), analytic_myerson(&bids, |v| v, |y| y));
    }
}

/// Hand-set `2v - 1` net against the closed-form uniform Myerson rule.
#[test]
fn neural_two_v_minus_one_matches_analytic_myerson() {
    let mech = AnalyticMyerson::uniform_unit();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut reserve_binding, mut no_sale) = (0, 0);
    for trial in 0..10_000 {
        let n = 1 + trial % 4;
        let net = MonotonicNet::uniform_virtual_value(n);
        let sampler = ValuationSampler::uniform(n, 0);
        let bids = sampler.profile(&mut rng);
        let neural = run_auction(&net, &BidProfile::new(bids.clone()).unwrap(), 500.0, AllocationMode::Hard).unwrap();
        let analytic = mech.run(&bids);
        assert_eq!(neural.winner, analytic.winner, "bids {bids:?}");
        for (a, b) in neural.payments.iter().zip(&analytic.payments) {
            assert!((a - b).abs() < 1e-9, "bids {bids:?}: {a} vs {b}");
        }
        match analytic.winner {
            None => no_sale += 1,
            Some(w) if (analytic.payments[w] - 0.5).abs() < 1e-12 => reserve_binding += 1,
            _ => {}
        }
    }
    assert!(reserve_binding > 100 && no_sale > 100, "{reserve_binding} / {no_sale}");
}

fn permute(obs: &JointObservation, perm: &[usize]) -> JointObservation {
    JointObservation::new(perm.iter().map(|&j| obs.agents[j].clone()).collect())
}

#[test]
fn commnet_permutation_equivariance_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..1000 {
        let n = rng.random_range(2..=5);
        let cfg = CommNetConfig {
            n_agents: n,
            obs_dim: rng.random_range(1..=6),
            hidden: rng.random_range(1..=8),
            layers: rng.random_range(1..=3),
            actions: rng.random_range(2..=5),
            activation: [Activation::Tanh, Activation::Relu, Activation::Sigmoid][trial % 3],
        };
        let policy = CommNetPolicy::randomized(cfg, 1.0, &mut rng).unwrap();
        let obs = JointObservation::new(
            (0..n)
                .map(|_| (0..cfg.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        );
        let out = policy.forward(&obs).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = policy.forward(&permute(&obs, &perm)).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            assert_eq!(permuted[k], out[j], "trial {trial}");
        }
        for p in &out {
            assert!(p.iter().all(|&q| q >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let same = JointObservation::new(vec![obs.agents[0].clone(); n]);
        let dists = policy.forward(&same).unwrap();
        assert!(dists.iter().all(|d| *d == dists[0]), "trial {trial}");
    }
}
