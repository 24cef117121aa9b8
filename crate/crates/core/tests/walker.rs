use proptest::prelude::*;

use cyclewalk_core::env::{sample_environment, CycleCatalog, EnvironmentTorus, Preset, WeightLaw};
use cyclewalk_core::lattice::direction_of;
use cyclewalk_core::stats::{chi_square, ks_pvalue, ks_statistic, mean_and_se};
use cyclewalk_core::walker::{occupation_times, rescale_trajectory, simulate_replica};
use cyclewalk_core::Error;

fn plaquettes(side: usize, seed: u64) -> EnvironmentTorus {
    let cat = CycleCatalog::preset(2, Preset::PlaquetteRotations, WeightLaw::Uniform { low: 0.1, high: 2.0 }).unwrap();
    sample_environment(&cat, 2, side, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_step_is_a_unit_move(seed in any::<u64>(), replica in 0u64..1000) {
        let env = plaquettes(6, seed % 17);
        let tr = simulate_replica(&env, &[2, -1], 3.0, seed, replica).unwrap();
        prop_assert_eq!(tr.positions.len(), (tr.num_jumps() + 1) * 2);
        for k in 0..tr.num_jumps() {
            let step: Vec<i64> = tr.position(k + 1).iter().zip(tr.position(k)).map(|(a, b)| a - b).collect();
            prop_assert!(direction_of(&step).is_some());
            prop_assert_eq!(tr.sites[k + 1], env.torus().index(tr.position(k + 1)));
        }
        prop_assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(tr.times.iter().all(|&t| t > 0.0 && t <= 3.0));
        let occ: f64 = occupation_times(&tr, env.num_sites()).iter().sum();
        prop_assert!((occ - 3.0).abs() < 1e-12);
    }

    #[test]
    fn replicas_are_reproducible(seed in any::<u64>(), replica in 0u64..1000) {
        let env = plaquettes(6, 3);
        let a = simulate_replica(&env, &[0, 0], 2.0, seed, replica).unwrap();
        let b = simulate_replica(&env, &[0, 0], 2.0, seed, replica).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn jump_targets_follow_edge_weights() {
    let env = plaquettes(8, 5);
    let x0 = [3i64, 4];
    let site = env.torus().index(&x0);
    let nd = env.torus().num_directions();
    let exits = 20_000;
    let mut counts = vec![0.0; nd];
    let mut holds = Vec::with_capacity(exits);
    let horizon = 60.0 / env.out_rate()[site];
    for r in 0..exits as u64 {
        let tr = simulate_replica(&env, &x0, horizon, 77, r).unwrap();
        assert!(tr.num_jumps() >= 1);
        let step: Vec<i64> = tr.position(1).iter().zip(&x0).map(|(a, b)| a - b).collect();
        counts[direction_of(&step).unwrap()] += 1.0;
        holds.push(tr.times[0]);
    }
    let mu = env.out_rate()[site];
    let expected: Vec<f64> = (0..nd).map(|k| exits as f64 * env.c(site, k) / mu).collect();
    let (_, p) = chi_square(&counts, &expected);
    assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}, expected {expected:?}");
    let d = ks_statistic(&holds, |t| 1.0 - (-mu * t).exp());
    let p = ks_pvalue(d, holds.len() as f64);
    assert!(p > 0.01, "holding-time KS p = {p}");
}

#[test]
fn unit_conductances_give_diffusive_spread() {
    let env = sample_environment(&CycleCatalog::simple_random_walk(2).unwrap(), 2, 16, 0).unwrap();
    let sq: Vec<f64> = (0..4000u64)
        .map(|r| {
            let tr = simulate_replica(&env, &[0, 0], 2.5, 1, r).unwrap();
            tr.end().iter().map(|&x| (x * x) as f64).sum()
        })
        .collect();
    let (m, se) = mean_and_se(&sq);
    assert!((m - 10.0).abs() < 4.0 * se, "{m} +- {se}");
}

#[test]
fn rescaled_path_rejects_times_past_horizon() {
    let env = plaquettes(6, 1);
    let tr = simulate_replica(&env, &[0, 0], 16.0, 1, 0).unwrap();
    let path = rescale_trajectory(&tr, 4).unwrap();
    assert!(path.at(1.0).is_ok());
    assert!(matches!(path.at(1.5), Err(Error::OutOfRange(_))));
}
