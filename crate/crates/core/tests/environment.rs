use proptest::prelude::*;

use cyclewalk_core::env::{
    check_env_invariants, sample_environment, CatalogEntry, CycleCatalog, CycleShape, EnvironmentTorus, Preset,
    WeightLaw,
};
use cyclewalk_core::io::{decode_env, encode_env, load_env, save_env};
use cyclewalk_core::lattice::{axis_of, opposite, sign_of};

fn law_strategy() -> impl Strategy<Value = WeightLaw> {
    prop_oneof![
        (0.0f64..2.0, 0.0f64..2.0).prop_map(|(a, w)| WeightLaw::Uniform { low: a, high: a + w }),
        (0.1f64..2.0, 1.5f64..4.0).prop_map(|(scale, tail)| WeightLaw::Pareto { scale, tail }),
        (-1.0f64..1.0, 0.0f64..1.5).prop_map(|(location, scale)| WeightLaw::Lognormal { location, scale }),
        (0.1f64..3.0).prop_map(|value| WeightLaw::Constant { value }),
    ]
}

/// Random closed self-avoiding loops: rectangles `a x b` in a random plane
/// and orientation, added on top of the 2-cycles so that the catalog covers.
fn catalog_strategy() -> impl Strategy<Value = CycleCatalog> {
    (2usize..=3, law_strategy(), law_strategy(), 1usize..=2, 1usize..=2, any::<bool>(), 0usize..6).prop_map(
        |(d, base_law, loop_law, a, b, flip, rot)| {
            let mut entries: Vec<CatalogEntry> = Preset::Nn2Cycles
                .shapes(d)
                .into_iter()
                .map(|shape| CatalogEntry { shape, law: base_law })
                .collect();
            let (p, q) = (1 + (rot % d) as i64, 1 + ((rot + 1) % d) as i64);
            let mut steps = vec![p; a];
            steps.extend(vec![q; b]);
            steps.extend(vec![-p; a]);
            steps.extend(vec![-q; b]);
            let mut shape = CycleShape::from_signed_axes(d, &steps).unwrap();
            if flip {
                shape = shape.reversed();
            }
            entries.push(CatalogEntry {
                shape: shape.rebased(rot % steps.len()),
                law: loop_law,
            });
            CycleCatalog::new(d, entries).unwrap()
        },
    )
}

fn env_strategy() -> impl Strategy<Value = EnvironmentTorus> {
    (catalog_strategy(), 0usize..3, any::<u64>()).prop_map(|(cat, extra, seed)| {
        let side = cat.min_side().max(3) + extra;
        let d = cat.d;
        sample_environment(&cat, d, side, seed).unwrap()
    })
}

fn oracle_edges(env: &EnvironmentTorus) -> Vec<f64> {
    let t = env.torus();
    let nd = t.num_directions();
    let mut c = vec![0.0; t.num_sites() * nd];
    for (s, e) in env.catalog().entries.iter().enumerate() {
        for base in 0..t.num_sites() {
            let mut p = t.coords(base);
            for &k in e.shape.steps() {
                c[t.index(&p) * nd + k] += env.weights()[s][base];
                p[axis_of(k)] += sign_of(k);
            }
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inflow_equals_outflow(env in env_strategy()) {
        let t = env.torus();
        for x in 0..t.num_sites() {
            let out: f64 = (0..t.num_directions()).map(|k| env.c(x, k)).sum();
            let inflow: f64 = (0..t.num_directions()).map(|k| env.c(t.neighbor(x, k), opposite(k))).sum();
            prop_assert!((out - inflow).abs() <= 1e-12 * out.max(1e-300));
        }
        prop_assert!(check_env_invariants(&env).passed());
    }

    #[test]
    fn antisymmetric_part_is_dominated(env in env_strategy()) {
        for x in 0..env.num_sites() {
            for k in 0..env.torus().num_directions() {
                prop_assert!(env.ca(x, k).abs() <= env.cs(x, k));
                prop_assert!((env.cs(x, k) + env.ca(x, k) - env.c(x, k)).abs() <= 1e-15 * env.c(x, k).max(1.0));
            }
        }
    }

    #[test]
    fn assembly_matches_oracle(env in env_strategy()) {
        let oracle = oracle_edges(&env);
        for (a, b) in oracle.iter().zip(env.edge_table()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn shifting_commutes_with_assembly(env in env_strategy(), z0 in -4i64..4, z1 in -4i64..4) {
        let t = env.torus();
        let mut z = vec![0i64; env.dim()];
        z[0] = z0;
        z[1] = z1;
        let s = env.shifted(&z);
        for x in 0..t.num_sites() {
            let xz = t.translate(x, &z);
            prop_assert_eq!(s.mu()[x], env.mu()[xz]);
            for k in 0..t.num_directions() {
                prop_assert_eq!(s.c(x, k), env.c(xz, k));
            }
        }
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact(env in env_strategy()) {
        let back = decode_env(&encode_env(&env).unwrap()).unwrap();
        prop_assert_eq!(back.seed(), env.seed());
        prop_assert_eq!(back.catalog(), env.catalog());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.edge_table()), bits(env.edge_table()));
        for (a, b) in back.weights().iter().zip(env.weights()) {
            prop_assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn snapshot_file_round_trip() {
    let cat = CycleCatalog::preset(2, Preset::PlaquetteRotations, WeightLaw::Uniform { low: 0.2, high: 2.0 }).unwrap();
    let env = sample_environment(&cat, 2, 6, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.bin");
    save_env(&env, &path).unwrap();
    let back = load_env(&path).unwrap();
    assert_eq!(back.edge_table(), env.edge_table());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn same_seed_same_environment() {
    let cat = CycleCatalog::preset(2, Preset::Nn2Cycles, WeightLaw::Lognormal { location: 0.0, scale: 1.0 }).unwrap();
    let a = sample_environment(&cat, 2, 8, 42).unwrap();
    let b = sample_environment(&cat, 2, 8, 42).unwrap();
    let c = sample_environment(&cat, 2, 8, 43).unwrap();
    assert_eq!(encode_env(&a).unwrap(), encode_env(&b).unwrap());
    assert_ne!(a.weights(), c.weights());
}

