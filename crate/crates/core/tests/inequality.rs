use cyclewalk_core::env::{sample_environment, CycleCatalog, Preset, WeightLaw};
use cyclewalk_core::inequality::{
    dirichlet_harmonic, energy_estimate_check, interior_residual, pipeline_exponents, BoxProblem,
};
use cyclewalk_core::io::parse_json;
use cyclewalk_core::lab::{run_inequality_lab, LabConfig};
use cyclewalk_core::Error;

const LAB: &str = r#"{
    "env": {
        "catalog": {"d": 2, "entries": [{"preset": "plaquette-rotations", "law": {"kind": "uniform", "low": 0.3, "high": 1.5}}]},
        "side": 12,
        "seed": 4
    },
    "n": 4,
    "instances": 5,
    "trials": 40,
    "q": "inf"
}"#;

#[test]
fn lab_config_accepts_infinite_moments() {
    let cfg: LabConfig = parse_json(LAB).unwrap();
    assert!(cfg.q.is_infinite());
    assert_eq!(cfg.p, 4.0);
    let report = run_inequality_lab(&cfg).unwrap();
    assert!(report.passed(), "{:?}", report.summary);
    let csv = report.csv();
    assert!(csv.starts_with("check,instance,lhs,rhs,constant,ratio,pass\n"));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
    let m = report.maximal.unwrap();
    assert_eq!(m.exponents.rho, f64::INFINITY);
}

#[test]
fn lab_rejects_unknown_fields_and_bad_moments() {
    let bad = LAB.replace("\"trials\"", "\"trails\"");
    let e = parse_json::<LabConfig>(&bad).unwrap_err().to_string();
    assert!(e.contains("trails"), "{e}");
    let bad = LAB.replace("\"inf\"", "\"infinite-ish\"");
    let e = parse_json::<LabConfig>(&bad).unwrap_err().to_string();
    assert!(e.contains("field `q`"), "{e}");
}

#[test]
fn moment_condition_is_a_config_error() {
    assert!(matches!(pipeline_exponents(2, 2.0, 2.0), Err(Error::InvalidConfig(_))));
    assert!(matches!(pipeline_exponents(3, 2.0, 4.0), Err(Error::InvalidConfig(_))));
    let e = pipeline_exponents(3, 8.0, 8.0).unwrap();
    assert!((1.0 / e.p + 1.0 / e.q) < 2.0 / 3.0);
}

#[test]
fn harmonic_extension_of_linear_data_on_constant_weights_is_linear() {
    let cat = CycleCatalog::preset(2, Preset::Nn2Cycles, WeightLaw::Constant { value: 2.0 }).unwrap();
    let env = sample_environment(&cat, 2, 15, 0).unwrap();
    let problem = BoxProblem::new(vec![7, 7], 6, 1.0, 0.5)
        .unwrap()
        .with_boundary_fn(env.torus(), |x| 3.0 * x[0] as f64 - x[1] as f64 + 0.5)
        .unwrap();
    let u = dirichlet_harmonic(&env, &problem).unwrap();
    let bx = problem.lattice_box(env.torus()).unwrap();
    for (k, &s) in bx.sites.iter().enumerate() {
        let x: Vec<i64> = bx.offsets[k].iter().zip(&problem.center).map(|(o, c)| o + c).collect();
        assert!((u[s] - (3.0 * x[0] as f64 - x[1] as f64 + 0.5)).abs() < 1e-8);
    }
    assert!(interior_residual(&env, &u, &bx) < 1e-8);
    assert!(energy_estimate_check(&env, &u, &problem, 2.0).unwrap().pass);
}

#[test]
fn off_lattice_cutoff_is_a_geometry_error() {
    let cat = CycleCatalog::preset(2, Preset::Nn2Cycles, WeightLaw::Constant { value: 1.0 }).unwrap();
    let env = sample_environment(&cat, 2, 15, 0).unwrap();
    let problem = BoxProblem::new(vec![0, 0], 4, 0.95, 0.5).unwrap().with_random_boundary(env.torus(), 1, 0).unwrap();
    let u = dirichlet_harmonic(&env, &problem).unwrap();
    assert!(matches!(energy_estimate_check(&env, &u, &problem, 2.0), Err(Error::InvalidGeometry(_))));
}
