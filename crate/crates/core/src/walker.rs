//! Variable-speed random walk on a periodized environment.
//!
//! The walker waits an exponential time with rate `μ(x)` (the out-rate, equal
//! to the speed measure by double stochasticity) and then jumps to `x + z`
//! with probability `c(x, x+z) / μ(x)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectorSolution;
use crate::env::EnvironmentTorus;
use crate::error::{Error, Result};
use crate::lattice::{axis_of, sign_of};
use crate::rng::{stream, DOMAIN_WALK};

/// Jump-count guard; rates are bounded on a torus so this only trips on
/// absurd horizons.
pub const DEFAULT_MAX_JUMPS: usize = 1 << 31;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub d: usize,
    /// Jump epochs, strictly increasing, all in `(0, horizon]`.
    pub times: Vec<f64>,
    /// Unwrapped positions, `d` entries per point; the first is `x0`.
    pub positions: Vec<i64>,
    /// Torus site of each position.
    pub sites: Vec<usize>,
    pub horizon: f64,
    pub seed: u64,
    pub replica: u64,
}

impl Trajectory {
    pub fn num_jumps(&self) -> usize {
        self.times.len()
    }

    pub fn position(&self, k: usize) -> &[i64] {
        &self.positions[k * self.d..(k + 1) * self.d]
    }

    pub fn start(&self) -> &[i64] {
        self.position(0)
    }

    pub fn end(&self) -> &[i64] {
        self.position(self.num_jumps())
    }

    /// Index of the position occupied at time `s` (right-continuous).
    pub fn index_at(&self, s: f64) -> usize {
        self.times.partition_point(|&t| t <= s)
    }

    /// Holding intervals `(site, start, end)` clipped to the horizon.
    pub fn holding_intervals(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..=self.num_jumps()).map(move |k| {
            let a = if k == 0 { 0.0 } else { self.times[k - 1] };
            let b = if k < self.times.len() { self.times[k] } else { self.horizon };
            (self.sites[k], a, b)
        })
    }

    /// Durations of completed holding intervals (the final censored one is
    /// dropped) together with the site held.
    pub fn completed_holds(&self) -> Vec<(usize, f64)> {
        self.holding_intervals()
            .take(self.num_jumps())
            .map(|(s, a, b)| (s, b - a))
            .collect()
    }

    /// CSV with header `t,x1,...,xd`, one row per position.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.d {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push('\n');
        for k in 0..=self.num_jumps() {
            let t = if k == 0 { 0.0 } else { self.times[k - 1] };
            out.push_str(&format!("{t:e}"));
            for x in self.position(k) {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Simulates one path with the stream keyed by `(seed, replica)`.
pub fn simulate_replica(env: &EnvironmentTorus, x0: &[i64], horizon: f64, seed: u64, replica: u64) -> Result<Trajectory> {
    let mut rng = stream(seed, DOMAIN_WALK, replica);
    let mut traj = simulate_with_rng(env, x0, horizon, &mut rng, DEFAULT_MAX_JUMPS)?;
    traj.seed = seed;
    traj.replica = replica;
    Ok(traj)
}

pub fn simulate_vsrw(env: &EnvironmentTorus, x0: &[i64], horizon: f64, seed: u64) -> Result<Trajectory> {
    simulate_replica(env, x0, horizon, seed, 0)
}

pub fn simulate_with_rng(
    env: &EnvironmentTorus,
    x0: &[i64],
    horizon: f64,
    rng: &mut ChaCha8Rng,
    max_jumps: usize,
) -> Result<Trajectory> {
    let d = env.dim();
    if x0.len() != d {
        return Err(Error::InvalidInput(format!("start point has {} coordinates, expected {d}", x0.len())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let t = env.torus();
    let nd = t.num_directions();
    let c = env.edge_table();
    let rate = env.out_rate();
    let mut pos = x0.to_vec();
    let mut site = t.index(&pos);
    let mut traj = Trajectory {
        d,
        times: Vec::new(),
        positions: pos.clone(),
        sites: vec![site],
        horizon,
        seed: 0,
        replica: 0,
    };
    let mut now = 0.0;
    loop {
        let r = rate[site];
        if !(r > 0.0) {
            return Err(Error::InvalidEnvironment(format!("zero total jump rate at site {site}")));
        }
        let u: f64 = rng.random();
        now += -(1.0 - u).ln() / r;
        if now > horizon {
            break;
        }
        if traj.times.len() >= max_jumps {
            return Err(Error::NumericFailure(format!("more than {max_jumps} jumps before the horizon")));
        }
        let target = rng.random::<f64>() * r;
        let row = &c[site * nd..(site + 1) * nd];
        let mut acc = 0.0;
        let mut dir = nd;
        let mut last_positive = 0;
        for (k, &w) in row.iter().enumerate() {
            if w > 0.0 {
                last_positive = k;
            }
            acc += w;
            if target < acc {
                dir = k;
                break;
            }
        }
        if dir == nd {
            dir = last_positive;
        }
        pos[axis_of(dir)] += sign_of(dir);
        site = t.neighbor(site, dir);
        traj.times.push(now);
        traj.positions.extend_from_slice(&pos);
        traj.sites.push(site);
    }
    Ok(traj)
}

/// `X^{(n)}_t = X_{n²t} / n`.
#[derive(Debug, Clone, Copy)]
pub struct RescaledPath<'a> {
    traj: &'a Trajectory,
    n: usize,
}

impl RescaledPath<'_> {
    pub fn scale(&self) -> usize {
        self.n
    }

    /// Largest rescaled time available.
    pub fn horizon(&self) -> f64 {
        self.traj.horizon / (self.n * self.n) as f64
    }

    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let n2 = (self.n * self.n) as f64;
        let s = n2 * t;
        if !(t >= 0.0) || s > self.traj.horizon {
            return Err(Error::OutOfRange(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        let k = self.traj.index_at(s);
        Ok(self.traj.position(k).iter().map(|&x| x as f64 / self.n as f64).collect())
    }
}

pub fn rescale_trajectory(traj: &Trajectory, n: usize) -> Result<RescaledPath<'_>> {
    if n == 0 {
        return Err(Error::InvalidInput("scale n must be positive".into()));
    }
    Ok(RescaledPath { traj, n })
}

/// `M = Φ(X)` at every position of the path, `d` values per position.
pub fn martingale_path(traj: &Trajectory, sol: &CorrectorSolution) -> Vec<f64> {
    let d = traj.d;
    let mut out = Vec::with_capacity(traj.positions.len());
    for (k, &site) in traj.sites.iter().enumerate() {
        let x = traj.position(k);
        for i in 0..d {
            out.push(x[i] as f64 - (sol.phi[i][site] - sol.phi[i][0]));
        }
    }
    out
}

/// Per-site integrand `Σ_z c(x, x+z) (v·Φ̂(x,z)/n)² 1{|v·Φ̂(x,z)/n| > ε}`.
pub fn compensator_integrand(
    env: &EnvironmentTorus,
    sol: &CorrectorSolution,
    v: &[f64],
    n: usize,
    eps: Option<f64>,
) -> Vec<f64> {
    let nd = env.torus().num_directions();
    let nf = n as f64;
    (0..env.num_sites())
        .map(|x| {
            let mut acc = 0.0;
            for k in 0..nd {
                let inc: f64 = (0..sol.d).map(|i| v[i] * sol.increment(env, i, x, k)).sum::<f64>() / nf;
                if eps.is_none_or(|e| inc.abs() > e) {
                    acc += env.c(x, k) * inc * inc;
                }
            }
            acc
        })
        .collect()
}

/// Piecewise-linear `t ↦ ⟨v·M^{(n)}⟩_t`, exact between jump epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Compensator {
    /// Knot times in rescaled units.
    pub knots: Vec<f64>,
    /// Cumulative value at each knot.
    pub values: Vec<f64>,
    /// Slope on each interval `[knots[k], knots[k+1]]`.
    pub slopes: Vec<f64>,
}

impl Compensator {
    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap_or(&0.0)
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || t > self.horizon() {
            return Err(Error::OutOfRange(format!("time {t} outside [0, {}]", self.horizon())));
        }
        let k = self.knots.partition_point(|&s| s <= t).saturating_sub(1).min(self.slopes.len().saturating_sub(1));
        if self.slopes.is_empty() {
            return Ok(0.0);
        }
        Ok(self.values[k] + self.slopes[k] * (t - self.knots[k]))
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }
}

/// Builds the compensator from a precomputed per-site integrand.
pub fn compensator_from_integrand(traj: &Trajectory, integrand: &[f64], n: usize) -> Compensator {
    let n2 = (n * n) as f64;
    let mut knots = vec![0.0];
    let mut values = vec![0.0];
    let mut slopes = Vec::with_capacity(traj.sites.len());
    let mut acc = 0.0;
    for (site, a, b) in traj.holding_intervals() {
        let g = integrand[site];
        acc += g * (b - a);
        // dt = ds / n², integrand in s-time
        slopes.push(g * n2);
        knots.push(b / n2);
        values.push(acc);
    }
    Compensator { knots, values, slopes }
}

pub fn compensator_path(
    env: &EnvironmentTorus,
    traj: &Trajectory,
    sol: &CorrectorSolution,
    v: &[f64],
    n: usize,
    eps: Option<f64>,
) -> Compensator {
    let g = compensator_integrand(env, sol, v, n, eps);
    compensator_from_integrand(traj, &g, n)
}

/// `(1/T) ∫_0^T f(X_s mod L) ds` over the trajectory horizon.
pub fn environment_occupation(traj: &Trajectory, f: &[f64]) -> f64 {
    let total: f64 = traj.holding_intervals().map(|(s, a, b)| f[s] * (b - a)).sum();
    total / traj.horizon
}

/// Total time spent at each torus site.
pub fn occupation_times(traj: &Trajectory, num_sites: usize) -> Vec<f64> {
    let mut occ = vec![0.0; num_sites];
    for (s, a, b) in traj.holding_intervals() {
        occ[s] += b - a;
    }
    occ
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::solve_regularized_poisson;
    use crate::env::{sample_environment, CycleCatalog};

    fn srw() -> EnvironmentTorus {
        sample_environment(&CycleCatalog::simple_random_walk(2).unwrap(), 2, 8, 0).unwrap()
    }

    #[test]
    fn steps_are_unit_and_deterministic() {
        let env = srw();
        let a = simulate_vsrw(&env, &[0, 0], 50.0, 7).unwrap();
        let b = simulate_vsrw(&env, &[0, 0], 50.0, 7).unwrap();
        assert_eq!(a, b);
        for k in 0..a.num_jumps() {
            let p = a.position(k);
            let q = a.position(k + 1);
            let l1: i64 = p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum();
            assert_eq!(l1, 1);
        }
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.times.iter().all(|&t| t > 0.0 && t <= 50.0));
    }

    #[test]
    fn rescaling() {
        let env = srw();
        let tr = simulate_vsrw(&env, &[3, -2], 16.0, 1).unwrap();
        let id = rescale_trajectory(&tr, 1).unwrap();
        assert_eq!(id.at(16.0).unwrap(), vec![tr.end()[0] as f64, tr.end()[1] as f64]);
        let r = rescale_trajectory(&tr, 4).unwrap();
        assert!(matches!(r.at(1.5), Err(Error::OutOfRange(_))));
        if tr.num_jumps() >= 2 {
            let mid = 0.5 * (tr.times[0] + tr.times[1]);
            let x = r.at(mid / 16.0).unwrap();
            assert_eq!(x, vec![tr.position(1)[0] as f64 / 4.0, tr.position(1)[1] as f64 / 4.0]);
        }
        let still = Trajectory {
            d: 2,
            times: vec![],
            positions: vec![3, 5],
            sites: vec![0],
            horizon: 4.0,
            seed: 0,
            replica: 0,
        };
        assert_eq!(rescale_trajectory(&still, 2).unwrap().at(0.7).unwrap(), vec![1.5, 2.5]);
    }

    #[test]
    fn srw_compensator_is_linear() {
        let env = srw();
        let sol = solve_regularized_poisson(&env, 0.1, 1e-10, 100).unwrap();
        let tr = simulate_vsrw(&env, &[0, 0], 10.0, 3).unwrap();
        let comp = compensator_path(&env, &tr, &sol, &[1.0, 0.0], 1, None);
        for t in [0.0, 0.3, 2.5, 9.99, 10.0] {
            assert!((comp.at(t).unwrap() - 2.0 * t).abs() < 1e-12);
        }
        let none = compensator_path(&env, &tr, &sol, &[1.0, 0.0], 1, Some(1.5));
        assert_eq!(none.terminal(), 0.0);
        let m = martingale_path(&tr, &sol);
        let flat: Vec<f64> = tr.positions.iter().map(|&x| x as f64).collect();
        assert_eq!(m, flat);
    }

    #[test]
    fn occupation_of_constants() {
        let env = srw();
        let tr = simulate_vsrw(&env, &[0, 0], 20.0, 5).unwrap();
        assert!((environment_occupation(&tr, &vec![1.0; env.num_sites()]) - 1.0).abs() < 1e-12);
        assert!((environment_occupation(&tr, env.mu()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        let env = srw();
        assert!(simulate_vsrw(&env, &[0, 0], 0.0, 1).is_err());
        assert!(simulate_vsrw(&env, &[0], 1.0, 1).is_err());
        let zero = env.scaled(0.0).unwrap();
        assert!(matches!(simulate_vsrw(&zero, &[0, 0], 1.0, 1), Err(Error::InvalidEnvironment(_))));
        let mut rng = stream(1, DOMAIN_WALK, 0);
        assert!(matches!(
            simulate_with_rng(&env, &[0, 0], 1000.0, &mut rng, 10),
            Err(Error::NumericFailure(_))
        ));
    }
}
