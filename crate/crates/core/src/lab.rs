//! Configured sweep over the inequality checks on one environment.

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, EnvironmentTorus};
use crate::error::{Error, Result};
use crate::inequality::{
    calibrate_c2, calibrate_weighted_sobolev, dirichlet_harmonic, energy_estimate_check, h_minus_one_check,
    maximal_inequality_check, weak_sector_check, BoxProblem, InequalityResult, MaximalConstants, PipelineExponents,
    CSV_HEADER,
};

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}
fn four() -> f64 {
    4.0
}
fn fifty() -> usize {
    50
}
fn trials_default() -> usize {
    200
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub env: EnvSpec,
    /// Box scale; the outer box is `B(center, σn)`.
    pub n: usize,
    /// Box center; the origin when absent.
    #[serde(default)]
    pub center: Option<Vec<i64>>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "half")]
    pub sigma_prime: f64,
    /// Exponent of the energy estimate.
    #[serde(default = "two", with = "crate::io::moment")]
    pub energy_p: f64,
    /// Moment exponents of the maximal inequality.
    #[serde(default = "four", with = "crate::io::moment")]
    pub p: f64,
    #[serde(default = "four", with = "crate::io::moment")]
    pub q: f64,
    /// Harmonic instances with random boundary data.
    #[serde(default = "fifty")]
    pub instances: usize,
    /// Trial functions for calibration and the torus-wide checks.
    #[serde(default = "trials_default")]
    pub trials: usize,
    /// Seed for boundary data and trial fields; the environment seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "yes")]
    pub maximal: bool,
}

/// Per-instance outcome of the maximal pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalInstance {
    pub instance: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub k_level: f64,
    pub k_matches_rhs: bool,
    pub recursion_holds: bool,
    pub superlevel_empty: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalSummary {
    pub exponents: PipelineExponents,
    pub constants: MaximalConstants,
    pub c1: f64,
    pub c_max: f64,
    pub instances: Vec<MaximalInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabReport {
    pub d: usize,
    pub side: usize,
    pub n: usize,
    /// Every checked instance as `(instance, result)`.
    pub rows: Vec<(usize, InequalityResult)>,
    /// Worst instance per check.
    pub summary: Vec<InequalityResult>,
    pub maximal: Option<MaximalSummary>,
}

impl LabReport {
    pub fn passed(&self) -> bool {
        self.summary.iter().all(|r| r.pass)
            && self.maximal.as_ref().is_none_or(|m| m.instances.iter().all(|i| i.pass))
    }

    /// `check,instance,lhs,rhs,constant,ratio,pass`
    pub fn csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for (k, r) in &self.rows {
            out.push_str(&r.csv_row(*k));
            out.push('\n');
        }
        out
    }
}

pub fn run_inequality_lab(config: &LabConfig) -> Result<LabReport> {
    let env = config.env.build()?;
    run_inequality_lab_on(&env, config)
}

/// Runs the sweep on a given environment; `config.env` is ignored.
pub fn run_inequality_lab_on(env: &EnvironmentTorus, config: &LabConfig) -> Result<LabReport> {
    let d = env.dim();
    let seed = config.seed.unwrap_or(env.seed());
    let center = config.center.clone().unwrap_or_else(|| vec![0; d]);
    if center.len() != d {
        return Err(Error::InvalidConfig(format!("center has {} coordinates, need {d}", center.len())));
    }
    let base = BoxProblem::new(center.clone(), config.n, config.sigma, config.sigma_prime)?;
    let t = env.torus();
    let mut rows = Vec::new();

    rows.push((0, weak_sector_check(env, config.trials, seed)));
    rows.push((0, h_minus_one_check(env, config.trials, seed)));

    let mut harmonic = Vec::with_capacity(config.instances);
    for j in 0..config.instances {
        let problem = base.clone().with_random_boundary(t, seed, j as u64)?;
        let u = dirichlet_harmonic(env, &problem)?;
        rows.push((j, energy_estimate_check(env, &u, &problem, config.energy_p)?));
        harmonic.push(u);
    }

    let maximal = if config.maximal {
        let c_ws = calibrate_weighted_sobolev(env, &center, base.outer_radius(), config.q, config.trials, seed)?.estimate;
        let c2 = calibrate_c2(t, &base, config.p, config.trials, seed)?.estimate;
        let constants = MaximalConstants { c2, c_ws };
        let mut instances = Vec::with_capacity(harmonic.len());
        let mut head = None;
        for (j, u) in harmonic.iter().enumerate() {
            let r = maximal_inequality_check(env, u, &base, config.p, config.q, constants)?;
            instances.push(MaximalInstance {
                instance: j,
                lhs: r.result.lhs,
                rhs: r.result.rhs,
                k_level: r.k_level,
                k_matches_rhs: r.k_matches_rhs,
                recursion_holds: r.recursion_holds,
                superlevel_empty: r.superlevel_empty,
                pass: r.passed(),
            });
            rows.push((j, r.result.clone()));
            head.get_or_insert((r.exponents, r.c1, r.c_max));
        }
        head.map(|(exponents, c1, c_max)| MaximalSummary {
            exponents,
            constants,
            c1,
            c_max,
            instances,
        })
    } else {
        None
    };

    let mut names: Vec<&str> = Vec::new();
    for (_, r) in &rows {
        if !names.contains(&r.check.as_str()) {
            names.push(&r.check);
        }
    }
    let summary = names
        .iter()
        .filter_map(|name| {
            InequalityResult::worst_of(name, rows.iter().filter(|(_, r)| r.check == *name).map(|(_, r)| r.clone()))
        })
        .collect();
    Ok(LabReport {
        d,
        side: env.side(),
        n: config.n,
        rows,
        summary,
        maximal,
    })
}
