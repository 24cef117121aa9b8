//! Jacobi-preconditioned Krylov solvers for sparse systems given as
//! matrix-free operators.
//!
//! Convergence is always judged on the sup-norm of the true residual
//! `b - A x`, recomputed after every inner cycle.

use crate::error::{Error, Result};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bicgstab,
    Gmres,
    Cg,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Target for `‖b - A x‖_∞`.
    pub tol: f64,
    pub max_iter: usize,
    pub gmres_restart: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 20_000,
            gmres_restart: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub method: Method,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn residual<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; b.len()];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

fn inverse_diagonal<A: LinearOperator + ?Sized>(op: &A) -> Result<Vec<f64>> {
    op.diagonal()
        .into_iter()
        .map(|v| {
            if v != 0.0 && v.is_finite() {
                Ok(1.0 / v)
            } else {
                Err(Error::NumericFailure("zero or non-finite diagonal entry".into()))
            }
        })
        .collect()
}

/// BiCGStab with restarts on breakdown or stagnation, falling back to
/// restarted GMRES when BiCGStab cannot reach the tolerance.
pub fn solve<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x0: Option<&[f64]>, opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats)> {
    let budget = opts.max_iter / 2;
    match bicgstab(op, b, x0, &SolveOptions { max_iter: budget.max(1), ..*opts }) {
        Ok(done) => Ok(done),
        Err(Error::SolverFailure { iterations, .. }) => {
            let (x, mut stats) = gmres(op, b, x0, &SolveOptions { max_iter: opts.max_iter - budget, ..*opts })?;
            stats.iterations += iterations;
            Ok((x, stats))
        }
        Err(e) => Err(e),
    }
}

pub fn bicgstab<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x0: Option<&[f64]>, opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    let minv = inverse_diagonal(op)?;
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut r = residual(op, b, &x);
    let mut best = (sup(&r), x.clone());
    let mut iters = 0;
    let mut stalls = 0;
    let (mut p, mut v, mut y, mut s, mut z, mut t) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    while iters < opts.max_iter {
        if sup(&r) <= opts.tol {
            return Ok((x, SolveStats { iterations: iters, residual: sup(&r), method: Method::Bicgstab }));
        }
        // one restart cycle
        let rhat = r.clone();
        let rhat_norm = dot(&rhat, &rhat).sqrt();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        let start_best = best.0;
        while iters < opts.max_iter {
            iters += 1;
            let rho_new = dot(&rhat, &r);
            if rho_new.abs() <= 1e-30 * rhat_norm * dot(&r, &r).sqrt() || !rho_new.is_finite() {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                y[i] = minv[i] * p[i];
            }
            op.apply(&y, &mut v);
            let denom = dot(&rhat, &v);
            if denom == 0.0 || !denom.is_finite() {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if sup(&s) <= 0.5 * opts.tol {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                break;
            }
            for i in 0..n {
                z[i] = minv[i] * s[i];
            }
            op.apply(&z, &mut t);
            let tt = dot(&t, &t);
            if tt == 0.0 || !tt.is_finite() {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                break;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if omega == 0.0 || !omega.is_finite() {
                break;
            }
            if sup(&r) <= 0.5 * opts.tol {
                break;
            }
        }
        r = residual(op, b, &x);
        let res = sup(&r);
        if !res.is_finite() {
            x = best.1.clone();
            r = residual(op, b, &x);
        } else if res < best.0 {
            best = (res, x.clone());
        }
        if best.0 >= 0.999 * start_best {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    let res = sup(&residual(op, b, &best.1));
    if res <= opts.tol {
        return Ok((best.1, SolveStats { iterations: iters, residual: res, method: Method::Bicgstab }));
    }
    Err(Error::SolverFailure { iterations: iters, residual: best.0 })
}

/// Restarted GMRES with right Jacobi preconditioning.
pub fn gmres<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x0: Option<&[f64]>, opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    let m = opts.gmres_restart.max(1);
    let minv = inverse_diagonal(op)?;
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut iters = 0;
    let mut w = vec![0.0; n];
    let mut zbuf = vec![0.0; n];
    loop {
        let r = residual(op, b, &x);
        let res = sup(&r);
        if res <= opts.tol {
            return Ok((x, SolveStats { iterations: iters, residual: res, method: Method::Gmres }));
        }
        if iters >= opts.max_iter || !res.is_finite() {
            return Err(Error::SolverFailure { iterations: iters, residual: res });
        }
        let beta = dot(&r, &r).sqrt();
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            iters += 1;
            for i in 0..n {
                zbuf[i] = minv[i] * basis[k][i];
            }
            op.apply(&zbuf, &mut w);
            for (j, q) in basis.iter().enumerate() {
                let hjk = dot(&w, q);
                h[j][k] = hjk;
                for i in 0..n {
                    w[i] -= hjk * q[i];
                }
            }
            let hnext = dot(&w, &w).sqrt();
            h[k + 1][k] = hnext;
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if hnext == 0.0 || g[k + 1].abs() <= 1e-3 * opts.tol || iters >= opts.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        let mut yv = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * yv[j];
            }
            yv[i] = acc / h[i][i];
        }
        for (j, yj) in yv.iter().enumerate() {
            for i in 0..n {
                x[i] += minv[i] * yj * basis[j][i];
            }
        }
    }
}

/// Preconditioned conjugate gradients; only valid for symmetric positive
/// definite operators.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x0: Option<&[f64]>, opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    let minv = inverse_diagonal(op)?;
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut iters = 0;
    let mut ap = vec![0.0; n];
    loop {
        let mut r = residual(op, b, &x);
        if sup(&r) <= opts.tol {
            return Ok((x, SolveStats { iterations: iters, residual: sup(&r), method: Method::Cg }));
        }
        if iters >= opts.max_iter {
            return Err(Error::SolverFailure { iterations: iters, residual: sup(&r) });
        }
        let mut z: Vec<f64> = r.iter().zip(&minv).map(|(a, m)| a * m).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let cycle_end = (iters + 5 * n.max(10)).min(opts.max_iter);
        while iters < cycle_end {
            iters += 1;
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::NumericFailure("operator is not positive definite".into()));
            }
            let a = rz / pap;
            for i in 0..n {
                x[i] += a * p[i];
                r[i] -= a * ap[i];
            }
            if sup(&r) <= 0.5 * opts.tol {
                break;
            }
            for i in 0..n {
                z[i] = minv[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Dense row-major matrix as an operator; used by tests and small problems.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub n: usize,
    pub data: Vec<f64>,
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.n + i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_system(n: usize, seed: u64, symmetric: bool) -> (DenseOperator, Vec<f64>) {
        let mut rng = crate::rng::stream(seed, 0, 0);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < 0.3 {
                    data[i * n + j] = -rng.random::<f64>();
                }
            }
        }
        if symmetric {
            for i in 0..n {
                for j in 0..i {
                    data[i * n + j] = data[j * n + i];
                }
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| data[i * n + j].abs()).sum();
            data[i * n + i] = off + 0.1 + rng.random::<f64>();
        }
        let b = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        (DenseOperator { n, data }, b)
    }

    #[test]
    fn solvers_agree_on_nonsymmetric_system() {
        let (a, b) = random_system(40, 3, false);
        let opts = SolveOptions { tol: 1e-12, ..Default::default() };
        let (x1, _) = bicgstab(&a, &b, None, &opts).unwrap();
        let (x2, _) = gmres(&a, &b, None, &opts).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_matches_bicgstab_on_symmetric_system() {
        let (a, b) = random_system(50, 5, true);
        let opts = SolveOptions { tol: 1e-12, ..Default::default() };
        let (x1, s1) = conjugate_gradient(&a, &b, None, &opts).unwrap();
        let (x2, _) = solve(&a, &b, None, &opts).unwrap();
        assert_eq!(s1.method, Method::Cg);
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_budget_reports_failure() {
        let (a, b) = random_system(20, 9, false);
        let opts = SolveOptions { tol: 1e-14, max_iter: 1, ..Default::default() };
        assert!(matches!(bicgstab(&a, &b, None, &opts), Err(Error::SolverFailure { .. })));
    }
}
