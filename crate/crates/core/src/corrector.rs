//! Regularized corrector equation on the torus.
//!
//! For each coordinate `i` the solver finds `φ^i_λ` with
//! `(-L φ)(x) + λ μ(x) φ(x) = -V^i(x)` at every site. The corrector is the
//! cocycle `χ^i(x) = φ^i(x) - φ^i(0)` and the harmonic coordinates are
//! `Φ^i(x) = x^i - χ^i(x)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvironmentTorus;
use crate::error::{Error, Result};
use crate::krylov::{self, LinearOperator, SolveOptions, SolveStats};
use crate::lattice::{axis_of, opposite, sign_of};

/// `φ ↦ -L φ + λ μ φ`.
pub struct RegularizedOperator<'a> {
    env: &'a EnvironmentTorus,
    lambda: f64,
}

impl<'a> RegularizedOperator<'a> {
    pub fn new(env: &'a EnvironmentTorus, lambda: f64) -> Self {
        RegularizedOperator { env, lambda }
    }
}

impl LinearOperator for RegularizedOperator<'_> {
    fn dim(&self) -> usize {
        self.env.num_sites()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let t = self.env.torus();
        let nd = t.num_directions();
        let c = self.env.edge_table();
        let out = self.env.out_rate();
        let mu = self.env.mu();
        for s in 0..x.len() {
            let mut acc = (out[s] + self.lambda * mu[s]) * x[s];
            for k in 0..nd {
                acc -= c[s * nd + k] * x[t.neighbor(s, k)];
            }
            y[s] = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.env
            .out_rate()
            .iter()
            .zip(self.env.mu())
            .map(|(o, m)| o + self.lambda * m)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionNorms {
    /// `‖Dφ^i‖_cov` per coordinate.
    pub dphi_cov: Vec<f64>,
    /// `‖φ^i‖_{L²(μ)}` per coordinate.
    pub phi_l2mu: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSolution {
    pub lambda: f64,
    pub d: usize,
    pub side: usize,
    /// Solutions `φ^i_λ` as returned by the solver (no gauge shift applied).
    pub phi: Vec<Vec<f64>>,
    /// `(-L + λμ) φ^i + V^i` per site.
    pub solver_residual: Vec<Vec<f64>>,
    /// `L Φ^i` per site; filled by [`harmonic_coordinates`].
    pub residual_harmonic: Vec<Vec<f64>>,
    /// Largest deviation of `L Φ^i` from `residual - λ μ φ^i`.
    pub harmonic_identity_gap: f64,
    pub sigma2: Option<Vec<Vec<f64>>>,
    pub norms: SolutionNorms,
    pub stats: Vec<SolveStats>,
}

impl CorrectorSolution {
    /// `χ^i(x) = φ^i(x) - φ^i(0)` at an unwrapped lattice point.
    pub fn chi(&self, env: &EnvironmentTorus, i: usize, x: &[i64]) -> f64 {
        let t = env.torus();
        self.phi[i][t.index(x)] - self.phi[i][0]
    }

    /// `Φ^i(x) = x^i - χ^i(x)`.
    pub fn harmonic(&self, env: &EnvironmentTorus, i: usize, x: &[i64]) -> f64 {
        x[i] as f64 - self.chi(env, i, x)
    }

    /// Increment `Φ^i(x+z) - Φ^i(x) = z^i - (φ^i(x+z) - φ^i(x))`.
    #[inline]
    pub fn increment(&self, env: &EnvironmentTorus, i: usize, site: usize, dir: usize) -> f64 {
        let z = if axis_of(dir) == i { sign_of(dir) as f64 } else { 0.0 };
        let y = env.torus().neighbor(site, dir);
        z - (self.phi[i][y] - self.phi[i][site])
    }

    /// `φ^i - φ^i(0)`.
    pub fn gauged_phi(&self, i: usize) -> Vec<f64> {
        let p0 = self.phi[i][0];
        self.phi[i].iter().map(|v| v - p0).collect()
    }

    /// Increment field of `v·Φ`, indexed `site * 2d + dir`.
    pub fn projected_increments(&self, env: &EnvironmentTorus, v: &[f64]) -> Vec<f64> {
        let nd = env.torus().num_directions();
        let mut out = vec![0.0; env.num_sites() * nd];
        for x in 0..env.num_sites() {
            for k in 0..nd {
                out[x * nd + k] = (0..self.d).map(|i| v[i] * self.increment(env, i, x, k)).sum();
            }
        }
        out
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

fn require_elliptic(env: &EnvironmentTorus) -> Result<()> {
    if !env.is_elliptic() {
        return Err(Error::InvalidEnvironment(
            "symmetric edge weights vanish somewhere".into(),
        ));
    }
    Ok(())
}

/// Solves `(-L + λμ) u = rhs` with the default Krylov pipeline.
pub fn solve_regularized_system(
    env: &EnvironmentTorus,
    lambda: f64,
    rhs: &[f64],
    start: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    check_lambda(lambda)?;
    let op = RegularizedOperator::new(env, lambda);
    krylov::solve(&op, rhs, start, opts)
}

/// Same system by conjugate gradients; valid only for symmetric environments.
pub fn solve_regularized_system_cg(
    env: &EnvironmentTorus,
    lambda: f64,
    rhs: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    check_lambda(lambda)?;
    if !env.is_symmetric() {
        return Err(Error::InvalidInput("conjugate gradients need symmetric edge weights".into()));
    }
    let op = RegularizedOperator::new(env, lambda);
    krylov::conjugate_gradient(&op, rhs, None, opts)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solve_from(
    env: &EnvironmentTorus,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    start: Option<&CorrectorSolution>,
) -> Result<CorrectorSolution> {
    check_lambda(lambda)?;
    require_elliptic(env)?;
    let d = env.dim();
    let solved: Vec<Result<(Vec<f64>, SolveStats, Vec<f64>)>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let v = env.drift_component(i);
            let rhs: Vec<f64> = v.iter().map(|x| -x).collect();
            let opts = SolveOptions {
                tol: tol * sup(&v).max(1.0),
                max_iter,
                ..Default::default()
            };
            let x0 = start.map(|s| s.phi[i].as_slice());
            let (phi, stats) = solve_regularized_system(env, lambda, &rhs, x0, &opts)?;
            let op = RegularizedOperator::new(env, lambda);
            let mut res = vec![0.0; phi.len()];
            op.apply(&phi, &mut res);
            for (r, vi) in res.iter_mut().zip(&v) {
                *r += vi;
            }
            Ok((phi, stats, res))
        })
        .collect();
    let mut phi = Vec::with_capacity(d);
    let mut residual = Vec::with_capacity(d);
    let mut stats = Vec::with_capacity(d);
    for r in solved {
        let (p, s, res) = r?;
        phi.push(p);
        stats.push(s);
        residual.push(res);
    }
    let alpha = compute_alpha(env);
    let norms = SolutionNorms {
        dphi_cov: phi.iter().map(|p| cov_norm_edge(env, &gradient(env, p))).collect(),
        phi_l2mu: phi.iter().map(|p| l2mu_norm(env, p)).collect(),
        alpha,
    };
    Ok(CorrectorSolution {
        lambda,
        d,
        side: env.side(),
        phi,
        solver_residual: residual,
        residual_harmonic: Vec::new(),
        harmonic_identity_gap: 0.0,
        sigma2: None,
        norms,
        stats,
    })
}

/// Solves the regularized equation for every coordinate direction.
///
/// The residual satisfies `‖(-L+λμ)φ^i + V^i‖_∞ <= tol * max(1, ‖V^i‖_∞)`.
pub fn solve_regularized_poisson(env: &EnvironmentTorus, lambda: f64, tol: f64, max_iter: usize) -> Result<CorrectorSolution> {
    solve_from(env, lambda, tol, max_iter, None)
}

/// Lax-Milgram a-priori bounds evaluated for one solution and coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBoundCheck {
    pub lambda: f64,
    pub coordinate: usize,
    pub dphi_cov: f64,
    pub lambda_phi_l2mu: f64,
    pub alpha: f64,
    /// `‖Dφ‖²_cov + λ‖φ‖²_{L²(μ)}`
    pub energy: f64,
    /// `√2 α ‖Dφ‖_cov`
    pub energy_bound: f64,
    pub pass: bool,
}

pub fn norm_bounds(sol: &CorrectorSolution) -> Vec<NormBoundCheck> {
    let a = sol.norms.alpha;
    (0..sol.d)
        .map(|i| {
            let dphi = sol.norms.dphi_cov[i];
            let l2 = sol.norms.phi_l2mu[i];
            let energy = dphi * dphi + sol.lambda * l2 * l2;
            let energy_bound = std::f64::consts::SQRT_2 * a * dphi;
            let pass = dphi <= std::f64::consts::SQRT_2 * a + 1e-9
                && sol.lambda * l2 <= (2.0 * sol.lambda).sqrt() * a + 1e-9;
            NormBoundCheck {
                lambda: sol.lambda,
                coordinate: i,
                dphi_cov: dphi,
                lambda_phi_l2mu: sol.lambda * l2,
                alpha: a,
                energy,
                energy_bound,
                pass,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Continuation {
    pub solutions: Vec<CorrectorSolution>,
    pub bounds: Vec<NormBoundCheck>,
    /// `max_i ‖Dφ_{λ_k} - Dφ_{λ_{k+1}}‖_cov` for consecutive schedule entries.
    pub cauchy: Vec<f64>,
}

impl Continuation {
    pub fn last(&self) -> &CorrectorSolution {
        self.solutions.last().expect("non-empty schedule")
    }

    pub fn bounds_hold(&self) -> bool {
        self.bounds.iter().all(|b| b.pass)
    }
}

/// Geometric schedule from `start` down to `end` with `count` points.
pub fn geometric_schedule(start: f64, end: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !(start > 0.0 && end > 0.0) || (count > 1 && end >= start) {
        return Err(Error::InvalidInput("schedule needs 0 < end < start and count >= 1".into()));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let ratio = (end / start).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|k| if k + 1 == count { end } else { start * (ratio * k as f64).exp() })
        .collect())
}

pub fn default_schedule() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
}

/// Solves along a decreasing λ schedule, warm-starting each step.
pub fn lambda_continuation(env: &EnvironmentTorus, schedule: &[f64], tol: f64, max_iter: usize) -> Result<Continuation> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("empty lambda schedule".into()));
    }
    for w in schedule.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidInput("lambda schedule must be strictly decreasing".into()));
        }
    }
    let mut solutions: Vec<CorrectorSolution> = Vec::with_capacity(schedule.len());
    for &lambda in schedule {
        let sol = solve_from(env, lambda, tol, max_iter, solutions.last())?;
        solutions.push(sol);
    }
    let bounds = solutions.iter().flat_map(norm_bounds).collect();
    let cauchy = solutions
        .windows(2)
        .map(|w| {
            (0..env.dim())
                .map(|i| {
                    let diff: Vec<f64> = w[0].phi[i].iter().zip(&w[1].phi[i]).map(|(a, b)| a - b).collect();
                    cov_norm_edge(env, &gradient(env, &diff))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(Continuation { solutions, bounds, cauchy })
}

/// `α = max_i sqrt( (1/N) Σ_bases Σ_shapes ω Σ_{v ∈ γ} (v^i)² )`.
pub fn compute_alpha(env: &EnvironmentTorus) -> f64 {
    let d = env.dim();
    let n = env.num_sites() as f64;
    (0..d)
        .map(|i| {
            let total: f64 = env
                .catalog()
                .entries
                .iter()
                .zip(env.weights())
                .map(|(e, w)| {
                    let moment: f64 = e.shape.vertices().iter().map(|v| (v[i] * v[i]) as f64).sum();
                    moment * w.iter().sum::<f64>()
                })
                .sum();
            (total / n).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Discrete gradient `Df(x, z) = f(x+z) - f(x)`, indexed `site * 2d + dir`.
pub fn gradient(env: &EnvironmentTorus, f: &[f64]) -> Vec<f64> {
    let t = env.torus();
    let nd = t.num_directions();
    let mut g = vec![0.0; f.len() * nd];
    for x in 0..f.len() {
        for k in 0..nd {
            g[x * nd + k] = f[t.neighbor(x, k)] - f[x];
        }
    }
    g
}

/// Edge form `sqrt( (1/N) ½ Σ_x Σ_z c_s(x, x+z) Ψ(x, z)² )`.
pub fn cov_norm_edge(env: &EnvironmentTorus, psi: &[f64]) -> f64 {
    let cs = env.cs_table();
    let sum: f64 = cs.iter().zip(psi).map(|(c, p)| c * p * p).sum();
    (0.5 * sum / env.num_sites() as f64).sqrt()
}

/// Cycle form `sqrt( (1/N) ½ Σ_shapes Σ_bases ω Σ_{(x,y) ∈ γ} Ψ(b+x, y-x)² )`.
pub fn cov_norm_cycle(env: &EnvironmentTorus, psi: &[f64]) -> f64 {
    let t = env.torus();
    let nd = t.num_directions();
    let mut sum = 0.0;
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
            let cyc: f64 = maps
                .iter()
                .map(|(m, dir)| {
                    let p = psi[m[b] * nd + dir];
                    p * p
                })
                .sum();
            sum += wb * cyc;
        }
    }
    (0.5 * sum / env.num_sites() as f64).sqrt()
}

/// Largest `|Ψ(x, z) + Ψ(x+z, -z)|`; zero for increment fields.
pub fn antisymmetry_defect(env: &EnvironmentTorus, psi: &[f64]) -> f64 {
    let t = env.torus();
    let nd = t.num_directions();
    let mut worst = 0.0f64;
    for x in 0..env.num_sites() {
        for k in 0..nd {
            let back = psi[t.neighbor(x, k) * nd + opposite(k)];
            worst = worst.max((psi[x * nd + k] + back).abs());
        }
    }
    worst
}

/// Largest `|Σ_{(x,y) ∈ b+γ} Ψ(x, y-x)|` over catalog cycles at every base.
pub fn cycle_condition_defect(env: &EnvironmentTorus, psi: &[f64]) -> f64 {
    let t = env.torus();
    let nd = t.num_directions();
    let mut worst = 0.0f64;
    for e in &env.catalog().entries {
        let maps: Vec<(Vec<usize>, usize)> = e
            .shape
            .edges()
            .map(|(tail, dir)| (t.translation_map(tail), dir))
            .collect();
        for b in 0..env.num_sites() {
            let s: f64 = maps.iter().map(|(m, dir)| psi[m[b] * nd + dir]).sum();
            worst = worst.max(s.abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovNorm {
    pub edge: f64,
    pub cycle: f64,
}

/// Both forms of `‖Ψ‖_cov`. For antisymmetric (cocycle increment) fields the
/// two must agree to `1e-10` relative; a mismatch is an internal error.
pub fn cov_norm(env: &EnvironmentTorus, psi: &[f64]) -> Result<CovNorm> {
    let nd = env.torus().num_directions();
    if psi.len() != env.num_sites() * nd {
        return Err(Error::InvalidInput("field must have one value per (site, direction)".into()));
    }
    let edge = cov_norm_edge(env, psi);
    let cycle = cov_norm_cycle(env, psi);
    let scale = sup(psi).max(f64::MIN_POSITIVE);
    if antisymmetry_defect(env, psi) <= 1e-12 * scale {
        let rel = (edge * edge - cycle * cycle).abs() / (edge * edge).max(f64::MIN_POSITIVE);
        if edge != cycle && rel > 1e-10 {
            return Err(Error::Consistency(format!(
                "edge form {edge} and cycle form {cycle} of a cocycle field differ"
            )));
        }
    }
    Ok(CovNorm { edge, cycle })
}

/// `sqrt( (1/N) Σ_x μ(x) f(x)² )`.
pub fn l2mu_norm(env: &EnvironmentTorus, f: &[f64]) -> f64 {
    let s: f64 = env.mu().iter().zip(f).map(|(m, v)| m * v * v).sum();
    (s / env.num_sites() as f64).sqrt()
}

/// `E(ξ, φ) = (1/N) Σ_x ξ(x) (-L φ)(x)`.
pub fn dirichlet_form(env: &EnvironmentTorus, xi: &[f64], phi: &[f64]) -> f64 {
    let lphi = env.generator(phi);
    let s: f64 = xi.iter().zip(&lphi).map(|(a, b)| -a * b).sum();
    s / env.num_sites() as f64
}

/// Fills `L Φ^i` and checks it against `residual - λ μ φ^i` pointwise.
pub fn harmonic_coordinates(env: &EnvironmentTorus, sol: &mut CorrectorSolution) {
    let mut gap = 0.0f64;
    sol.residual_harmonic = (0..sol.d)
        .map(|i| {
            let lphi = env.generator(&sol.phi[i]);
            let v = env.drift_component(i);
            (0..env.num_sites())
                .map(|x| {
                    let l_harm = v[x] - lphi[x];
                    let expected = sol.solver_residual[i][x] - sol.lambda * env.mu()[x] * sol.phi[i][x];
                    let scale = 1.0 + v[x].abs() + env.out_rate()[x] * sol.phi[i][x].abs();
                    gap = gap.max((l_harm - expected).abs() / scale);
                    l_harm
                })
                .collect()
        })
        .collect();
    sol.harmonic_identity_gap = gap;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl Covariance {
    pub fn quadratic(&self, v: &[f64]) -> f64 {
        let d = v.len();
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| v[i] * self.matrix[i][j] * v[j])
            .sum()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigenvalues.iter().all(|&e| e > 0.0)
    }
}

pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let d = m.len();
    let mat = DMatrix::from_fn(d, d, |i, j| m[i][j]);
    let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `Σ²_ij = (1/N) Σ_x Σ_z c_s(x, x+z) Φ̂^i(x, z) Φ̂^j(x, z)`, symmetrized.
pub fn effective_covariance(env: &EnvironmentTorus, sol: &CorrectorSolution) -> Result<Covariance> {
    let d = sol.d;
    let nd = env.torus().num_directions();
    let mut m = vec![vec![0.0; d]; d];
    let mut inc = vec![0.0; d];
    for x in 0..env.num_sites() {
        for k in 0..nd {
            let w = env.cs(x, k);
            for (i, v) in inc.iter_mut().enumerate() {
                *v = sol.increment(env, i, x, k);
            }
            for i in 0..d {
                for j in 0..d {
                    m[i][j] += w * inc[i] * inc[j];
                }
            }
        }
    }
    let n = env.num_sites() as f64;
    for i in 0..d {
        for j in 0..=i {
            let s = 0.5 * (m[i][j] + m[j][i]) / n;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("effective covariance has non-finite entries".into()));
    }
    let eigenvalues = symmetric_eigenvalues(&m);
    Ok(Covariance { matrix: m, eigenvalues })
}

/// `v·Σ²v` next to `2 ‖v·Φ‖²_cov` evaluated in cycle form.
pub fn sigma_identity(env: &EnvironmentTorus, sol: &CorrectorSolution, cov: &Covariance, v: &[f64]) -> (f64, f64) {
    let psi = sol.projected_increments(env, v);
    let c = cov_norm_cycle(env, &psi);
    (cov.quadratic(v), 2.0 * c * c)
}

/// `ρ(d, q) = d / (d - 2 + d/q)`; `q = None` means `q = ∞`.
pub fn rho(d: usize, q: Option<f64>) -> f64 {
    let inv_q = q.map(|q| 1.0 / q).unwrap_or(0.0);
    let denom = d as f64 - 2.0 + d as f64 * inv_q;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        d as f64 / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearityRow {
    pub n: usize,
    pub s_inf: f64,
    pub s_2rho: f64,
}

/// `n,S_inf,S_2rho`
pub fn sublinearity_csv(rows: &[SublinearityRow]) -> String {
    let mut out = String::from("n,S_inf,S_2rho\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.n, r.s_inf, r.s_2rho));
    }
    out
}

/// `i,j,sigma2` with one row per matrix entry.
pub fn covariance_csv(m: &[Vec<f64>]) -> String {
    let mut out = String::from("i,j,sigma2\n");
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out.push_str(&format!("{},{},{v}\n", i + 1, j + 1));
        }
    }
    out
}

/// Space-averaged and sup-norm sublinearity ratios of `χ` over `B(n)`.
pub fn sublinearity_profile(
    env: &EnvironmentTorus,
    sol: &CorrectorSolution,
    n_grid: &[usize],
    q: Option<f64>,
) -> Result<Vec<SublinearityRow>> {
    let d = env.dim();
    let exponent = 2.0 * rho(d, q);
    n_grid
        .iter()
        .map(|&n| {
            if n == 0 || n > env.side() / 2 {
                return Err(Error::InvalidGeometry(format!(
                    "radius {n} outside 1..={}",
                    env.side() / 2
                )));
            }
            let width = 2 * n + 1;
            let count = width.pow(d as u32);
            let mut s_inf = 0.0f64;
            let mut s_2rho = 0.0f64;
            for i in 0..d {
                let mut max_abs = 0.0f64;
                let mut acc = 0.0;
                let mut point = vec![0i64; d];
                for k in 0..count {
                    let mut rem = k;
                    for a in (0..d).rev() {
                        point[a] = (rem % width) as i64 - n as i64;
                        rem /= width;
                    }
                    let chi = sol.chi(env, i, &point).abs();
                    max_abs = max_abs.max(chi);
                    if exponent.is_finite() {
                        acc += chi.powf(exponent);
                    }
                }
                let avg = if exponent.is_finite() {
                    (acc / count as f64).powf(1.0 / exponent)
                } else {
                    max_abs
                };
                s_inf = s_inf.max(max_abs / n as f64);
                s_2rho = s_2rho.max(avg / n as f64);
            }
            Ok(SublinearityRow { n, s_inf, s_2rho })
        })
        .collect()
}
