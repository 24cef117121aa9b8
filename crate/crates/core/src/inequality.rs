//! Numerical checks of the analytic toolkit on boxes: harmonic extension,
//! the cycle energy estimate, weighted Sobolev and Poincaré ratios, the
//! De Giorgi bound and the maximal inequality, plus the weak-sector and
//! `H_{-1}` bounds on the whole torus.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corrector::{compute_alpha, cov_norm_edge, gradient, l2mu_norm, rho};
use crate::env::EnvironmentTorus;
use crate::error::{Error, Result};
use crate::krylov::{self, LinearOperator, SolveOptions};
use crate::lattice::{LatticeBox, Torus};
use crate::rng::{stream, DOMAIN_TRIAL};

/// Relative slack allowed on every inequality.
pub const REL_TOL: f64 = 1e-9;

/// Constant of the cycle energy estimate.
pub const C_EN: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityResult {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub constant_used: f64,
    /// Smallest constant for which the instance would pass.
    pub ratio: f64,
    pub pass: bool,
    /// Site or trial index of the worst instance.
    pub witness: Option<usize>,
    pub instances: usize,
}

impl InequalityResult {
    fn new(check: &str, lhs: f64, base: f64, constant: f64, witness: Option<usize>) -> Self {
        let rhs = constant * base;
        InequalityResult {
            check: check.to_string(),
            lhs,
            rhs,
            constant_used: constant,
            ratio: ratio(lhs, base),
            pass: lhs <= rhs * (1.0 + REL_TOL),
            witness,
            instances: 1,
        }
    }

    /// Folds a sweep into its worst instance; passes only if every instance passes.
    pub fn worst_of(check: &str, items: impl IntoIterator<Item = InequalityResult>) -> Option<InequalityResult> {
        let mut worst: Option<InequalityResult> = None;
        let mut count = 0;
        let mut all_pass = true;
        for (k, mut r) in items.into_iter().enumerate() {
            count += r.instances;
            all_pass &= r.pass;
            if r.witness.is_none() {
                r.witness = Some(k);
            }
            let replace = match &worst {
                None => true,
                Some(w) => (!r.pass && w.pass) || (r.pass == w.pass && r.ratio > w.ratio),
            };
            if replace {
                worst = Some(r);
            }
        }
        worst.map(|mut w| {
            w.check = check.to_string();
            w.instances = count;
            w.pass = all_pass;
            w
        })
    }

    /// Row for the CSV layout `check,instance,lhs,rhs,constant,ratio,pass`.
    pub fn csv_row(&self, instance: usize) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{}",
            crate::io::csv_field(&self.check),
            instance,
            self.lhs, self.rhs, self.constant_used, self.ratio, self.pass
        )
    }
}

pub const CSV_HEADER: &str = "check,instance,lhs,rhs,constant,ratio,pass";

fn ratio(lhs: f64, base: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / base
    }
}

/// Space-averaged norm `(|B|^{-1} Σ |f|^p)^{1/p}`, sup-norm for `p = ∞`.
pub fn avg_norm(values: impl IntoIterator<Item = f64>, p: f64) -> f64 {
    let mut count = 0usize;
    if p.is_infinite() {
        return values.into_iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let mut acc = 0.0;
    for v in values {
        acc += v.abs().powf(p);
        count += 1;
    }
    if count == 0 {
        return 0.0;
    }
    (acc / count as f64).powf(1.0 / p)
}

/// Hölder conjugate, with `1* = ∞` and `∞* = 1`.
pub fn conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

fn floor_radius(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-12).floor() as usize
}

/// Concentric boxes `B(σ'n) ⊂ B(σn)` with a linear cutoff and boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxProblem {
    pub center: Vec<i64>,
    pub n: usize,
    pub sigma: f64,
    pub sigma_prime: f64,
    /// Boundary values in local box order; only entries on `∂B(σn)` are read.
    pub boundary: Vec<f64>,
}

impl BoxProblem {
    pub fn new(center: Vec<i64>, n: usize, sigma: f64, sigma_prime: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("box scale n must be positive".into()));
        }
        if !(0.5 <= sigma_prime && sigma_prime < sigma && sigma <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 1/2 <= sigma' < sigma <= 1, got sigma' = {sigma_prime}, sigma = {sigma}"
            )));
        }
        let p = BoxProblem {
            center,
            n,
            sigma,
            sigma_prime,
            boundary: Vec::new(),
        };
        if p.inner_radius() >= p.outer_radius() {
            return Err(Error::InvalidGeometry("inner and outer radii coincide".into()));
        }
        Ok(p)
    }

    pub fn outer_radius(&self) -> usize {
        floor_radius(self.sigma, self.n)
    }

    pub fn inner_radius(&self) -> usize {
        floor_radius(self.sigma_prime, self.n)
    }

    pub fn lattice_box(&self, torus: &Torus) -> Result<LatticeBox> {
        LatticeBox::new(torus, &self.center, self.outer_radius())
    }

    /// `η = clamp((R - r)/(R - r'), 0, 1)` in local box order.
    pub fn cutoff(&self, bx: &LatticeBox) -> Vec<f64> {
        let outer = self.outer_radius() as f64;
        let inner = self.inner_radius() as f64;
        (0..bx.len())
            .map(|k| ((outer - bx.dist(k) as f64) / (outer - inner)).clamp(0.0, 1.0))
            .collect()
    }

    /// Cutoff as a torus field, zero outside the box.
    pub fn cutoff_field(&self, torus: &Torus, bx: &LatticeBox) -> Result<Vec<f64>> {
        let eta = self.cutoff(bx);
        let mut field = vec![0.0; torus.num_sites()];
        for (k, &s) in bx.sites.iter().enumerate() {
            field[s] = eta[k];
        }
        let grad = edge_sup_gradient(torus, &field);
        let bound = 1.0 / ((self.sigma - self.sigma_prime) * self.n as f64);
        if grad > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidGeometry(format!(
                "cutoff gradient {grad} exceeds 1/((σ-σ')n) = {bound}; choose σn, σ'n on the lattice"
            )));
        }
        Ok(field)
    }

    pub fn with_boundary(mut self, g: Vec<f64>) -> Self {
        self.boundary = g;
        self
    }

    /// Boundary data given by a function of the unwrapped lattice point.
    pub fn with_boundary_fn(self, torus: &Torus, g: impl Fn(&[i64]) -> f64) -> Result<Self> {
        let bx = self.lattice_box(torus)?;
        let vals = bx
            .offsets
            .iter()
            .map(|o| {
                let x: Vec<i64> = self.center.iter().zip(o).map(|(c, v)| c + v).collect();
                g(&x)
            })
            .collect();
        Ok(self.with_boundary(vals))
    }

    /// Independent standard normal boundary values from stream `(seed, index)`.
    pub fn with_random_boundary(self, torus: &Torus, seed: u64, index: u64) -> Result<Self> {
        let bx = self.lattice_box(torus)?;
        let mut rng = stream(seed, DOMAIN_TRIAL, index);
        let vals = (0..bx.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(self.with_boundary(vals))
    }
}

/// `max |f(y) - f(x)|` over nearest-neighbour edges.
pub fn edge_sup_gradient(torus: &Torus, f: &[f64]) -> f64 {
    let nd = torus.num_directions();
    let mut m = 0.0f64;
    for x in 0..torus.num_sites() {
        for k in (0..nd).step_by(2) {
            m = m.max((f[torus.neighbor(x, k)] - f[x]).abs());
        }
    }
    m
}

struct InteriorOperator<'a> {
    env: &'a EnvironmentTorus,
    /// Torus sites of the unknowns.
    sites: Vec<usize>,
    /// Unknown index of each torus site, if any.
    slot: Vec<Option<usize>>,
}

impl LinearOperator for InteriorOperator<'_> {
    fn dim(&self) -> usize {
        self.sites.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let t = self.env.torus();
        let nd = t.num_directions();
        for (a, &s) in self.sites.iter().enumerate() {
            let mut acc = self.env.out_rate()[s] * x[a];
            for k in 0..nd {
                if let Some(b) = self.slot[t.neighbor(s, k)] {
                    acc -= self.env.c(s, k) * x[b];
                }
            }
            y[a] = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.sites.iter().map(|&s| self.env.out_rate()[s]).collect()
    }
}

/// Solves `L u = 0` inside `B(σn)` with `u = g` on `∂B(σn)`.
///
/// The result is a torus field that vanishes outside the box.
pub fn dirichlet_harmonic(env: &EnvironmentTorus, problem: &BoxProblem) -> Result<Vec<f64>> {
    let t = env.torus();
    let bx = problem.lattice_box(t)?;
    if problem.boundary.len() != bx.len() {
        return Err(Error::InvalidInput(format!(
            "boundary data has {} entries, box has {}",
            problem.boundary.len(),
            bx.len()
        )));
    }
    let mut u = vec![0.0; t.num_sites()];
    let mut slot = vec![None; t.num_sites()];
    let mut sites = Vec::new();
    let mut gmax = 0.0f64;
    for (k, &s) in bx.sites.iter().enumerate() {
        if bx.is_boundary(k) {
            u[s] = problem.boundary[k];
            gmax = gmax.max(u[s].abs());
        } else {
            slot[s] = Some(sites.len());
            sites.push(s);
        }
    }
    if gmax == 0.0 || sites.is_empty() {
        return Ok(u);
    }
    let nd = t.num_directions();
    let rhs: Vec<f64> = sites
        .iter()
        .map(|&s| {
            (0..nd)
                .filter(|&k| slot[t.neighbor(s, k)].is_none())
                .map(|k| env.c(s, k) * u[t.neighbor(s, k)])
                .sum()
        })
        .collect();
    let min_rate = sites.iter().map(|&s| env.out_rate()[s]).fold(f64::INFINITY, f64::min);
    if !(min_rate > 0.0) {
        return Err(Error::InvalidEnvironment("zero jump rate inside the box".into()));
    }
    let op = InteriorOperator { env, sites, slot };
    let opts = SolveOptions {
        tol: 1e-11 * gmax * min_rate.min(1.0),
        ..Default::default()
    };
    let (sol, _) = krylov::solve(&op, &rhs, None, &opts).map_err(|e| e.at_stage("dirichlet"))?;
    for (a, &s) in op.sites.iter().enumerate() {
        u[s] = sol[a];
    }
    Ok(u)
}

/// Largest `|L u|` over the interior of the box.
pub fn interior_residual(env: &EnvironmentTorus, u: &[f64], bx: &LatticeBox) -> f64 {
    let lu = env.generator(u);
    (0..bx.len())
        .filter(|&k| !bx.is_boundary(k))
        .map(|k| lu[bx.sites[k]].abs())
        .fold(0.0, f64::max)
}

/// `E_Γ(f) = Σ_cycles ω Σ_{(x,y) ∈ γ} f(x) (f(x) - f(y))`.
pub fn cycle_energy(env: &EnvironmentTorus, f: &[f64]) -> f64 {
    let t = env.torus();
    let mut total = 0.0;
    for (e, w) in env.catalog().entries.iter().zip(env.weights()) {
        let maps: Vec<(Vec<usize>, usize)> = e
            .shape
            .edges()
            .map(|(tail, dir)| (t.translation_map(tail), dir))
            .collect();
        for (b, &wb) in w.iter().enumerate() {
            if wb == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (m, dir) in &maps {
                let x = m[b];
                let fx = f[x];
                s += fx * (fx - f[t.neighbor(x, *dir)]);
            }
            total += wb * s;
        }
    }
    total
}

/// `½ Σ_x Σ_z c(x, x+z) (f(x+z) - f(x))²`.
pub fn edge_energy(env: &EnvironmentTorus, f: &[f64]) -> f64 {
    let g = gradient(env, f);
    0.5 * env.edge_table().iter().zip(&g).map(|(c, d)| c * d * d).sum::<f64>()
}

fn check_energy_pair(cycle: f64, edge: f64) -> Result<()> {
    let scale = cycle.abs().max(edge.abs()).max(f64::MIN_POSITIVE);
    if (cycle - edge).abs() > 1e-9 * scale {
        return Err(Error::Consistency(format!("cycle energy {cycle} differs from edge energy {edge}")));
    }
    Ok(())
}

/// Checks `E_Γ(ηu)/|B| <= (5/2) ‖μ^(2)‖_{p,B} ‖∇η‖²_∞ ‖u²‖_{p*,B}` on `B = B(σn)`.
pub fn energy_estimate_check(env: &EnvironmentTorus, u: &[f64], problem: &BoxProblem, p: f64) -> Result<InequalityResult> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("exponent p must be >= 1, got {p}")));
    }
    let t = env.torus();
    let bx = problem.lattice_box(t)?;
    let umax = bx.sites.iter().map(|&s| u[s].abs()).fold(0.0, f64::max);
    let lu = env.generator(u);
    let nonneg = bx.sites.iter().all(|&s| u[s] >= 0.0);
    for k in (0..bx.len()).filter(|&k| !bx.is_boundary(k)) {
        let s = bx.sites[k];
        let tol = 1e-10 * env.mu()[s] * umax;
        let harmonic = lu[s].abs() <= tol;
        let sub = nonneg && -lu[s] <= tol;
        if !(harmonic || sub) {
            return Err(Error::InvalidInput(format!(
                "function is neither harmonic nor non-negative subharmonic at site {s}"
            )));
        }
    }
    let eta = problem.cutoff_field(t, &bx)?;
    let f: Vec<f64> = eta.iter().zip(u).map(|(e, v)| e * v).collect();
    let cyc = cycle_energy(env, &f);
    check_energy_pair(cyc, edge_energy(env, &f))?;
    let vol = bx.len() as f64;
    let lhs = cyc / vol;
    let grad = edge_sup_gradient(t, &eta);
    let mu2 = avg_norm(bx.sites.iter().map(|&s| env.mu_k(2)[s]), p);
    let u2 = avg_norm(bx.sites.iter().map(|&s| u[s] * u[s]), conjugate(p));
    let witness = bx
        .sites
        .iter()
        .copied()
        .max_by(|&a, &b| (u[a] * u[a] * env.mu_k(2)[a]).total_cmp(&(u[b] * u[b] * env.mu_k(2)[b])));
    Ok(InequalityResult::new("energy_estimate", lhs, mu2 * grad * grad * u2, C_EN, witness))
}

/// `Σ_{undirected edges} c_s (∇u)²`, optionally restricted to edges inside the box.
fn symmetric_energy(env: &EnvironmentTorus, u: &[f64], inside: Option<&LatticeBox>) -> f64 {
    let t = env.torus();
    let nd = t.num_directions();
    let mut acc = 0.0;
    for x in 0..t.num_sites() {
        for k in (0..nd).step_by(2) {
            let y = t.neighbor(x, k);
            if let Some(bx) = inside {
                if bx.local[x].is_none() || bx.local[y].is_none() {
                    continue;
                }
            }
            let d = u[y] - u[x];
            acc += env.cs(x, k) * d * d;
        }
    }
    acc
}

/// `‖u‖²_{2ρ,B}` against `C (n²/|B|) ‖ν‖_{q,B} Σ_edges c_s (∇u)²` on `B = B(center, n)`.
pub fn weighted_sobolev_check(
    env: &EnvironmentTorus,
    u: &[f64],
    center: &[i64],
    n: usize,
    q: f64,
    c_ws: f64,
) -> Result<InequalityResult> {
    let bx = LatticeBox::new(env.torus(), center, n)?;
    let r = rho(env.dim(), finite(q));
    let lhs = avg_norm(bx.sites.iter().map(|&s| u[s]), 2.0 * r).powi(2);
    let nu = avg_norm(bx.sites.iter().map(|&s| env.nu()[s]), q);
    let base = (n * n) as f64 / bx.len() as f64 * nu * symmetric_energy(env, u, None);
    Ok(InequalityResult::new("weighted_sobolev", lhs, base, c_ws, None))
}

/// Mean-zero version on edges inside `B(center, n)`.
pub fn local_poincare_check(
    env: &EnvironmentTorus,
    u: &[f64],
    center: &[i64],
    n: usize,
    q: f64,
    c_lp: f64,
) -> Result<InequalityResult> {
    let bx = LatticeBox::new(env.torus(), center, n)?;
    let r = rho(env.dim(), finite(q));
    let mean = bx.sites.iter().map(|&s| u[s]).sum::<f64>() / bx.len() as f64;
    let lhs = avg_norm(bx.sites.iter().map(|&s| u[s] - mean), 2.0 * r).powi(2);
    let nu = avg_norm(bx.sites.iter().map(|&s| env.nu()[s]), q);
    let base = (n * n) as f64 / bx.len() as f64 * nu * symmetric_energy(env, u, Some(&bx));
    Ok(InequalityResult::new("local_poincare", lhs, base, c_lp, None))
}

fn finite(q: f64) -> Option<f64> {
    if q.is_finite() {
        Some(q)
    } else {
        None
    }
}

/// Running maximum of a ratio over a trial set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub estimate: f64,
    pub running_max: Vec<f64>,
}

impl Calibration {
    fn from_ratios(ratios: impl IntoIterator<Item = f64>) -> Self {
        let mut running_max = Vec::new();
        let mut m = 0.0f64;
        for r in ratios {
            if r.is_finite() {
                m = m.max(r);
            }
            running_max.push(m);
        }
        Calibration { estimate: m, running_max }
    }
}

/// Smooths by the lazy symmetrized transition operator, or by lazy
/// neighbour averaging when no environment is given.
fn smooth(torus: &Torus, env: Option<&EnvironmentTorus>, f: &[f64], times: usize) -> Vec<f64> {
    let nd = torus.num_directions();
    let mut cur = f.to_vec();
    for _ in 0..times {
        cur = (0..cur.len())
            .map(|x| match env {
                Some(e) => {
                    let m = e.mu()[x];
                    let avg: f64 = (0..nd).map(|k| e.cs(x, k) * cur[torus.neighbor(x, k)]).sum::<f64>() / m;
                    0.5 * (cur[x] + avg)
                }
                None => {
                    let s: f64 = (0..nd).map(|k| cur[torus.neighbor(x, k)]).sum();
                    (cur[x] + s) / (nd + 1) as f64
                }
            })
            .collect();
    }
    cur
}

/// Trial field number `index`: rough noise, smoothed noise, random box
/// indicators and pyramids, cycling through the four kinds.
pub fn trial_field(torus: &Torus, env: Option<&EnvironmentTorus>, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = stream(seed, DOMAIN_TRIAL, index);
    let n = torus.num_sites();
    let side = torus.side() as i64;
    match index % 4 {
        0 => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        1 => {
            let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            smooth(torus, env, &raw, 1 + (index as usize / 4) % 8)
        }
        kind => {
            let c: Vec<i64> = (0..torus.dim()).map(|_| rng.random_range(0..side)).collect();
            let r = rng.random_range(0..=(side / 4).max(1)) as f64;
            (0..n)
                .map(|s| {
                    let x = torus.coords(s);
                    let dist = x
                        .iter()
                        .zip(&c)
                        .map(|(a, b)| {
                            let d = (a - b).rem_euclid(side);
                            d.min(side - d)
                        })
                        .max()
                        .unwrap_or(0) as f64;
                    if kind == 2 {
                        if dist <= r {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (1.0 - dist / (r + 1.0)).max(0.0)
                    }
                })
                .collect()
        }
    }
}

fn mask(f: &mut [f64], bx: &LatticeBox, keep: impl Fn(usize) -> bool) {
    for (s, v) in f.iter_mut().enumerate() {
        match bx.local[s] {
            Some(k) if keep(k) => {}
            _ => *v = 0.0,
        }
    }
}

/// Empirical weighted Sobolev constant over `trials` functions supported
/// in the interior of `B(center, n)`: cutoff bumps, their products with
/// trial fields, a point mass and masked trial fields.
pub fn calibrate_weighted_sobolev(
    env: &EnvironmentTorus,
    center: &[i64],
    n: usize,
    q: f64,
    trials: usize,
    seed: u64,
) -> Result<Calibration> {
    let t = env.torus();
    let bx = LatticeBox::new(t, center, n)?;
    let mut ratios = Vec::with_capacity(trials);
    for j in 0..trials {
        let mut u = vec![0.0; t.num_sites()];
        match j % 3 {
            0 => {
                // cutoff bump with inner radius cycling through 0..n
                let inner = ((j / 3) % n.max(1)) as f64;
                for (k, &s) in bx.sites.iter().enumerate() {
                    u[s] = ((n as f64 - bx.dist(k) as f64) / (n as f64 - inner)).clamp(0.0, 1.0);
                }
            }
            1 if j == 1 => u[bx.sites[bx.len() / 2]] = 1.0,
            1 => {
                let g = trial_field(t, Some(env), seed, j as u64);
                for (k, &s) in bx.sites.iter().enumerate() {
                    let eta = (n as f64 - bx.dist(k) as f64) / n as f64;
                    u[s] = eta * g[s];
                }
            }
            _ => {
                u = trial_field(t, Some(env), seed, j as u64);
                mask(&mut u, &bx, |k| !bx.is_boundary(k));
            }
        }
        ratios.push(weighted_sobolev_check(env, &u, center, n, q, 1.0)?.ratio);
    }
    Ok(Calibration::from_ratios(ratios))
}

/// Empirical local Poincaré constant over trial fields on `B(center, n)`.
pub fn calibrate_local_poincare(
    env: &EnvironmentTorus,
    center: &[i64],
    n: usize,
    q: f64,
    trials: usize,
    seed: u64,
) -> Result<Calibration> {
    let t = env.torus();
    let ratios = (0..trials)
        .map(|j| {
            let u = trial_field(t, Some(env), seed, j as u64);
            local_poincare_check(env, &u, center, n, q, 1.0).map(|r| r.ratio)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration::from_ratios(ratios))
}

/// Empirical norm-comparison constant
/// `‖w²‖_{p*,B(σ'n)} / ‖(ηw)²‖_{p*,B(σn)}`; the first trial is the indicator
/// of `B(σ'n)`, which attains `(|B(σn)|/|B(σ'n)|)^{1/p*}`.
pub fn calibrate_c2(torus: &Torus, problem: &BoxProblem, p: f64, trials: usize, seed: u64) -> Result<Calibration> {
    let bx = problem.lattice_box(torus)?;
    let eta = problem.cutoff_field(torus, &bx)?;
    let ps = conjugate(p);
    let inner = problem.inner_radius();
    let inner_sites: Vec<usize> = bx.within(inner).into_iter().map(|k| bx.sites[k]).collect();
    let ratios = (0..trials.max(1)).map(|j| {
        let w: Vec<f64> = if j == 0 {
            let mut w = vec![0.0; torus.num_sites()];
            for &s in &inner_sites {
                w[s] = 1.0;
            }
            w
        } else {
            let mut w = trial_field(torus, None, seed, j as u64);
            mask(&mut w, &bx, |_| true);
            w
        };
        let num = avg_norm(inner_sites.iter().map(|&s| w[s] * w[s]), ps);
        let den = avg_norm(bx.sites.iter().map(|&s| (eta[s] * w[s]).powi(2)), ps);
        ratio(num, den)
    });
    Ok(Calibration::from_ratios(ratios))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConstantsRow {
    pub n: usize,
    pub volume: usize,
    /// Lower bound on the `ℓ^{d/(d-1)}` Sobolev constant.
    pub sobolev: f64,
    /// Lower bound on the `ℓ^1` weak Poincaré constant.
    pub poincare: f64,
    pub sobolev_running: Vec<f64>,
    pub poincare_running: Vec<f64>,
}

/// `‖u‖_{d/(d-1),B} |B| / (n Σ_{edges} |∇u|)` for `u` supported in `B`.
pub fn lattice_sobolev_ratio(torus: &Torus, bx: &LatticeBox, u: &[f64]) -> f64 {
    let d = torus.dim() as f64;
    let lhs = avg_norm(bx.sites.iter().map(|&s| u[s]), d / (d - 1.0));
    let grad: f64 = unit_edges(torus, None).map(|(x, y)| (u[y] - u[x]).abs()).sum();
    ratio(lhs * bx.len() as f64, bx.radius as f64 * grad)
}

/// `‖u - (u)_B‖_{1,B} |B| / (n Σ_{edges in B} |∇u|)`.
pub fn lattice_poincare_ratio(torus: &Torus, bx: &LatticeBox, u: &[f64]) -> f64 {
    let mean = bx.sites.iter().map(|&s| u[s]).sum::<f64>() / bx.len() as f64;
    let lhs = avg_norm(bx.sites.iter().map(|&s| u[s] - mean), 1.0);
    let grad: f64 = unit_edges(torus, Some(bx)).map(|(x, y)| (u[y] - u[x]).abs()).sum();
    ratio(lhs * bx.len() as f64, bx.radius as f64 * grad)
}

fn unit_edges<'a>(torus: &'a Torus, inside: Option<&'a LatticeBox>) -> impl Iterator<Item = (usize, usize)> + 'a {
    let nd = torus.num_directions();
    (0..torus.num_sites())
        .flat_map(move |x| (0..nd).step_by(2).map(move |k| (x, torus.neighbor(x, k))))
        .filter(move |&(x, y)| inside.is_none_or(|b| b.local[x].is_some() && b.local[y].is_some()))
}

/// Empirical constants of the unweighted lattice inequalities on `B(n)`.
///
/// The box sits in a torus of side `2n + 3`, so that every edge leaving the
/// box ends outside it.
pub fn lattice_inequality_constants(d: usize, n_list: &[usize], trials: usize, seed: u64) -> Result<Vec<LatticeConstantsRow>> {
    if d < 2 {
        return Err(Error::InvalidInput("lattice inequalities need d >= 2".into()));
    }
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::InvalidInput("radius must be positive".into()));
            }
            let torus = Torus::new(d, 2 * n + 3)?;
            let center = vec![(n + 1) as i64; d];
            let bx = LatticeBox::new(&torus, &center, n)?;
            let mut sob = Vec::with_capacity(trials);
            let mut poi = Vec::with_capacity(trials);
            for j in 0..trials.max(1) {
                let mut u = if j == 0 {
                    let mut u = vec![0.0; torus.num_sites()];
                    u[torus.index(&center)] = 1.0;
                    u
                } else {
                    trial_field(&torus, None, seed, j as u64)
                };
                mask(&mut u, &bx, |_| true);
                sob.push(lattice_sobolev_ratio(&torus, &bx, &u));
                poi.push(lattice_poincare_ratio(&torus, &bx, &u));
            }
            let s = Calibration::from_ratios(sob);
            let p = Calibration::from_ratios(poi);
            Ok(LatticeConstantsRow {
                n,
                volume: bx.len(),
                sobolev: s.estimate,
                poincare: p.estimate,
                sobolev_running: s.running_max,
                poincare_running: p.running_max,
            })
        })
        .collect()
}

/// `K = f0^{(γ-1)/β} C^{1/β} 2^{(α+β)/(γ-1)+1} (σ-σ')^{-α/β}`.
pub fn de_giorgi_iterate(f0: f64, c: f64, alpha: f64, beta: f64, gamma: f64, sigma: f64, sigma_prime: f64) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::InvalidInput(format!("gamma must exceed 1, got {gamma}")));
    }
    if !(c > 0.0 && alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidInput("C, alpha and beta must be positive".into()));
    }
    if !(sigma > sigma_prime && sigma_prime >= 0.0) {
        return Err(Error::InvalidInput("need sigma > sigma' >= 0".into()));
    }
    if !(f0 >= 0.0) {
        return Err(Error::InvalidInput("f0 must be non-negative".into()));
    }
    Ok(f0.powf((gamma - 1.0) / beta)
        * c.powf(1.0 / beta)
        * 2f64.powf((alpha + beta) / (gamma - 1.0) + 1.0)
        * (sigma - sigma_prime).powf(-alpha / beta))
}

/// Exponents of the maximal-inequality pipeline for `(d, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineExponents {
    pub p: f64,
    pub q: f64,
    pub p_star: f64,
    pub rho: f64,
    pub delta: f64,
    pub delta_star: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn pipeline_exponents(d: usize, p: f64, q: f64) -> Result<PipelineExponents> {
    if !(p > 1.0 && q > 1.0) {
        return Err(Error::InvalidConfig(format!("need p, q > 1, got p = {p}, q = {q}")));
    }
    if 1.0 / p + 1.0 / q >= 2.0 / d as f64 {
        return Err(Error::InvalidConfig(format!(
            "moment condition 1/p + 1/q < 2/d fails for p = {p}, q = {q}, d = {d}"
        )));
    }
    let p_star = conjugate(p);
    let r = rho(d, finite(q));
    let delta = r / p_star;
    let delta_star = conjugate(delta);
    Ok(PipelineExponents {
        p,
        q,
        p_star,
        rho: r,
        delta,
        delta_star,
        kappa: delta_star / 2.0,
        alpha: 2.0,
        beta: 2.0 / delta_star,
        gamma: 1.0 + 1.0 / delta_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximalConstants {
    pub c2: f64,
    pub c_ws: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionCheck {
    pub k: f64,
    pub l: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalReport {
    pub result: InequalityResult,
    pub exponents: PipelineExponents,
    pub constants: MaximalConstants,
    pub c1: f64,
    pub c3: f64,
    pub c_max: f64,
    pub c_dg: f64,
    /// `(‖μ^(2)‖_p ‖ν‖_q / (σ-σ')²)^κ`
    pub moment_factor: f64,
    pub prefactor_at_least_one: bool,
    /// Level from the De Giorgi bound; equals the right-hand side.
    pub k_level: f64,
    pub k_matches_rhs: bool,
    pub recursion: Vec<RecursionCheck>,
    pub recursion_holds: bool,
    pub superlevel_empty: bool,
}

impl MaximalReport {
    pub fn passed(&self) -> bool {
        self.result.pass && self.recursion_holds && self.superlevel_empty && self.k_matches_rhs
    }
}

/// Checks `‖u‖_{∞,B(σ'n)} <= C_Max (‖μ^(2)‖_p ‖ν‖_q/(σ-σ')²)^κ ‖u‖_{2p*,B(σn)}`
/// together with the level-set recursion on a dyadic grid of levels.
pub fn maximal_inequality_check(
    env: &EnvironmentTorus,
    u: &[f64],
    problem: &BoxProblem,
    p: f64,
    q: f64,
    constants: MaximalConstants,
) -> Result<MaximalReport> {
    let ex = pipeline_exponents(env.dim(), p, q)?;
    let t = env.torus();
    let outer = problem.lattice_box(t)?;
    problem.cutoff_field(t, &outer)?;
    let inner_sites: Vec<usize> = outer.within(problem.inner_radius()).into_iter().map(|k| outer.sites[k]).collect();
    let mu2 = avg_norm(outer.sites.iter().map(|&s| env.mu_k(2)[s]), ex.p);
    let nu = avg_norm(outer.sites.iter().map(|&s| env.nu()[s]), ex.q);
    let gap = problem.sigma - problem.sigma_prime;
    let c3 = 2.0 * constants.c_ws * C_EN;
    let c1 = constants.c2 * c3;
    let c_max = 2f64.powf(4.0 * ex.kappa + 3.0) * c1.powf(ex.kappa);
    let moment_factor = (mu2 * nu / (gap * gap)).powf(ex.kappa);
    let c_dg = c1 * mu2 * nu;

    let level = |m: f64, sites: &[usize]| avg_norm(sites.iter().map(|&s| (u[s].abs() - m).max(0.0).powi(2)), ex.p_star);
    let lhs = inner_sites.iter().map(|&s| u[s].abs()).fold(0.0, f64::max);
    let norm_2ps = avg_norm(outer.sites.iter().map(|&s| u[s]), 2.0 * ex.p_star);
    let rhs_base = moment_factor * norm_2ps;
    let witness = inner_sites.iter().copied().max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()));
    let result = InequalityResult::new("maximal_inequality", lhs, rhs_base, c_max, witness);

    let f0 = level(0.0, &outer.sites);
    let k_level = de_giorgi_iterate(f0, c_dg, ex.alpha, ex.beta, ex.gamma, problem.sigma, problem.sigma_prime)?;
    let rhs = result.rhs;
    let k_matches_rhs = (k_level - rhs).abs() <= 1e-9 * rhs.abs().max(f64::MIN_POSITIVE) || (k_level == 0.0 && rhs == 0.0);

    let top = outer.sites.iter().map(|&s| u[s].abs()).fold(0.0, f64::max);
    let mut grid: Vec<f64> = (0..=12).map(|j| top * (1.0 - 0.5f64.powi(j))).collect();
    grid.push(top);
    grid.dedup();
    let mut recursion = Vec::new();
    for (a, &k) in grid.iter().enumerate() {
        for &l in &grid[a + 1..] {
            if l <= k {
                continue;
            }
            let lhs = level(l, &inner_sites);
            let rhs = c_dg / (gap.powf(ex.alpha) * (l - k).powf(ex.beta)) * level(k, &outer.sites).powf(ex.gamma);
            recursion.push(RecursionCheck {
                k,
                l,
                lhs,
                rhs,
                pass: lhs <= rhs * (1.0 + REL_TOL),
            });
        }
    }
    let recursion_holds = recursion.iter().all(|r| r.pass);
    let superlevel_empty = inner_sites.iter().all(|&s| u[s].abs() <= k_level) && level(k_level, &inner_sites) == 0.0;
    Ok(MaximalReport {
        result,
        exponents: ex,
        constants,
        c1,
        c3,
        c_max,
        c_dg,
        moment_factor,
        prefactor_at_least_one: c_max * moment_factor >= 1.0,
        k_level,
        k_matches_rhs,
        recursion,
        recursion_holds,
        superlevel_empty,
    })
}

/// `|E(ξ,φ)| <= 2 ‖ξ‖_{L²(μ)} ‖φ‖_{L²(μ)}` over random pairs; trial 0 uses
/// a constant `φ`, trial 1 uses `ξ = φ`.
pub fn weak_sector_check(env: &EnvironmentTorus, trials: usize, seed: u64) -> InequalityResult {
    let t = env.torus();
    let n = env.num_sites() as f64;
    let items = (0..trials).map(|j| {
        let xi = trial_field(t, Some(env), seed, 2 * j as u64);
        let phi = match j {
            0 => vec![1.5; t.num_sites()],
            1 => xi.clone(),
            _ => trial_field(t, Some(env), seed, 2 * j as u64 + 1),
        };
        let lphi = env.generator(&phi);
        let e = -xi.iter().zip(&lphi).map(|(a, b)| a * b).sum::<f64>() / n;
        let base = l2mu_norm(env, &xi) * l2mu_norm(env, &phi);
        InequalityResult::new("weak_sector", e.abs(), base, 2.0, Some(j))
    });
    InequalityResult::worst_of("weak_sector", items).unwrap_or_else(|| InequalityResult::new("weak_sector", 0.0, 0.0, 2.0, None))
}

/// `|(1/N) Σ ξ V^i| <= √2 α ‖Dξ‖_cov` for random `ξ` and every `i`.
///
/// The average is taken against `ξ - ξ(0)`, which is the same number since
/// `V^i` sums to zero, and is exactly zero for constant `ξ`.
pub fn h_minus_one_check(env: &EnvironmentTorus, trials: usize, seed: u64) -> InequalityResult {
    let t = env.torus();
    let n = env.num_sites() as f64;
    let d = env.dim();
    let alpha = compute_alpha(env);
    let constant = std::f64::consts::SQRT_2 * alpha;
    let items = (0..trials).flat_map(|j| {
        let xi = if j == 0 {
            vec![0.75; t.num_sites()]
        } else {
            trial_field(t, Some(env), seed, j as u64)
        };
        let base = cov_norm_edge(env, &gradient(env, &xi));
        let x0 = xi[0];
        (0..d)
            .map(|i| {
                let s: f64 = (0..t.num_sites()).map(|x| (xi[x] - x0) * env.drift()[x * d + i]).sum();
                InequalityResult::new("h_minus_one", (s / n).abs(), base, constant, Some(j))
            })
            .collect::<Vec<_>>()
    });
    InequalityResult::worst_of("h_minus_one", items)
        .unwrap_or_else(|| InequalityResult::new("h_minus_one", 0.0, 0.0, constant, None))
}
