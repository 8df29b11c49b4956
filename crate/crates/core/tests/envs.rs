use platoon::envs::{CoverageConfig, CoverageEnv, EnergyConfig, EnergyEnv, Environment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent coverage count: a user is covered when some agent is within
/// Chebyshev distance `r`.
fn covered(users: &[[usize; 2]], agents: &[[usize; 2]], r: usize) -> usize {
    users
        .iter()
        .filter(|u| {
            agents
                .iter()
                .any(|a| a[0].abs_diff(u[0]) <= r && a[1].abs_diff(u[1]) <= r)
        })
        .count()
}

fn oracle_optimum(cfg: &CoverageConfig) -> usize {
    let cells: Vec<[usize; 2]> = (0..cfg.width)
        .flat_map(|x| (0..cfg.height).map(move |y| [x, y]))
        .collect();
    let mut best = 0;
    let mut idx = vec![0usize; cfg.agents];
    loop {
        let placement: Vec<[usize; 2]> = idx.iter().map(|&i| cells[i]).collect();
        best = best.max(covered(&cfg.users, &placement, cfg.radius));
        let mut k = 0;
        while k < idx.len() {
            idx[k] += 1;
            if idx[k] < cells.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            return best;
        }
    }
}

#[test]
fn default_coverage_optimum_matches_enumeration() {
    let cfg = CoverageConfig::default();
    let env = CoverageEnv::new(cfg.clone()).unwrap();
    let (value, placement) = env.brute_force_optimal().unwrap();
    assert_eq!(value, oracle_optimum(&cfg));
    assert_eq!(value, 8);
    assert_eq!(covered(&cfg.users, &placement, cfg.radius), value);
}

#[test]
fn random_layouts_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let cfg = CoverageConfig {
            width: rng.random_range(2..=5),
            height: rng.random_range(2..=5),
            users: Vec::new(),
            agents: rng.random_range(1..=2),
            radius: rng.random_range(0..=2),
            horizon: 4,
            frozen_agent: None,
        };
        let users = (0..rng.random_range(0..=7))
            .map(|_| [rng.random_range(0..cfg.width), rng.random_range(0..cfg.height)])
            .collect();
        let cfg = CoverageConfig { users, ..cfg };
        let env = CoverageEnv::new(cfg.clone()).unwrap();
        assert_eq!(env.brute_force_optimal().unwrap().0, oracle_optimum(&cfg), "{cfg:?}");
    }
}

#[test]
fn clustered_users_need_one_agent() {
    let cfg = CoverageConfig {
        users: vec![[1, 1], [2, 2], [3, 3], [1, 3]],
        agents: 2,
        ..CoverageConfig::default()
    };
    let env = CoverageEnv::new(cfg.clone()).unwrap();
    let (value, _) = env.brute_force_optimal().unwrap();
    assert_eq!(value, 4);
    assert_eq!(covered(&cfg.users, &[[2, 2]], 1), 4);
}

#[test]
fn coverage_rewards_are_bounded_and_seeded() {
    let env = CoverageEnv::new(CoverageConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for episode in 0..200 {
        let (mut state, _) = env.reset(episode);
        let (again, _) = env.reset(episode);
        assert_eq!(state, again);
        for _ in 0..env.horizon() {
            let actions: Vec<usize> = (0..env.n_agents()).map(|_| rng.random_range(0..5)).collect();
            let step = env.step(&state, &actions).unwrap();
            assert!(step.reward >= 0.0 && step.reward <= 8.0);
            assert_eq!(step.reward as usize, covered(&env.config().users, &step.state.positions, 1));
            state = step.state;
        }
    }
}

#[test]
fn energy_is_conserved_under_random_play() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..50 {
        let cfg = EnergyConfig {
            demand_seed: trial,
            demand_max: rng.random_range(0..=4),
            capacity: rng.random_range(2..=6) as f64,
            ..EnergyConfig::default()
        };
        let env = EnergyEnv::new(cfg.clone()).unwrap();
        let (mut state, _) = env.reset(trial);
        for _ in 0..env.horizon() {
            let actions: Vec<usize> = (0..env.n_agents()).map(|_| rng.random_range(0..4)).collect();
            let (step, flows) = env.step_with_flows(&state, &actions).unwrap();
            for (i, f) in flows.iter().enumerate() {
                assert!(f.imbalance().abs() < 1e-12, "station {i}: {f:?}");
                assert!(f.shortfall >= -1e-12);
                assert!(step.state.battery[i] >= -1e-12 && step.state.battery[i] <= cfg.capacity + 1e-12);
                // served plus shortfall is exactly the demand
                assert!((f.served + f.shortfall - state.demand[i]).abs() < 1e-12);
            }
            let pool_in: f64 = flows.iter().map(|f| f.pool_in).sum();
            let pool_out: f64 = flows.iter().map(|f| f.pool_out).sum();
            assert!((pool_in - pool_out).abs() < 1e-12);
            assert!(step.reward <= 0.0);
            state = step.state;
        }
    }
}
