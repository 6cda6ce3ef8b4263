use super::{dot, norm, LinearOperator, SolverError};

/// Stopping rule `‖b − Ax‖ ≤ max(xi_rel·‖b‖, xi_abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    pub xi_rel: f64,
    pub xi_abs: f64,
    pub restart: usize,
    pub max_iters: usize,
}

impl KrylovConfig {
    /// Tolerances for the linear solves of the relaxed schemes.
    pub fn linear() -> Self {
        Self {
            xi_rel: 1e-12,
            xi_abs: 1e-12,
            restart: 30,
            max_iters: 2000,
        }
    }

    /// Tolerances for the inner solves of Newton. The outer residual test
    /// governs accuracy; the inner solve only needs a descent direction.
    pub fn inexact_newton() -> Self {
        Self {
            xi_rel: 1e-3,
            xi_abs: 1e-14,
            restart: 30,
            max_iters: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.xi_rel > 0.0 && self.xi_abs > 0.0) {
            return Err(SolverError::Config(
                "Krylov tolerances must be positive".into(),
            ));
        }
        if self.restart == 0 || self.max_iters == 0 {
            return Err(SolverError::Config(
                "restart and max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self::linear()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Arnoldi residual estimate at return.
    pub residual_norm: f64,
    pub converged: bool,
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Right-preconditioned restarted GMRES with modified Gram–Schmidt.
///
/// `precond` applies `H⁻¹`; the iteration minimizes `‖b − A H⁻¹ u‖` and
/// returns `x = x₀ + H⁻¹ u`. Convergence is judged on the Arnoldi estimate of
/// the unpreconditioned residual, recomputed exactly at every restart.
/// Exhausting `max_iters` returns the best iterate with `converged = false`.
pub fn gmres(
    op: &dyn LinearOperator,
    rhs: &[f64],
    precond: &dyn LinearOperator,
    x0: Option<&[f64]>,
    cfg: &KrylovConfig,
) -> Result<GmresResult, SolverError> {
    cfg.validate()?;
    let n = op.dim();
    for found in [rhs.len(), precond.dim(), x0.map_or(n, <[f64]>::len)] {
        if found != n {
            return Err(SolverError::Dimension { expected: n, found });
        }
    }
    let m = cfg.restart.min(n.max(1));
    let tol = (cfg.xi_rel * norm(rhs)).max(cfg.xi_abs);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;

    loop {
        op.apply(&x, &mut r);
        r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta = norm(&r);
        if beta <= tol || total >= cfg.max_iters || !beta.is_finite() {
            return Ok(GmresResult {
                x,
                iterations: total,
                residual_norm: beta,
                converged: beta <= tol,
            });
        }

        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        // Column-major upper Hessenberg, already rotated.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut rot: Vec<(f64, f64)> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        let mut estimate = beta;

        while k < m && total < cfg.max_iters {
            precond.apply(&v[k], &mut z);
            op.apply(&z, &mut w);
            let mut col = vec![0.0; k + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                col[i] = hij;
                w.iter_mut().zip(vi).for_each(|(wj, vj)| *wj -= hij * vj);
            }
            let hnext = norm(&w);
            col[k + 1] = hnext;
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c * a + s * b;
                col[i + 1] = -s * a + c * b;
            }
            let (c, s) = givens(col[k], col[k + 1]);
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            rot.push((c, s));
            h.push(col);
            k += 1;
            total += 1;
            estimate = g[k].abs();
            if estimate <= tol || hnext <= f64::EPSILON * beta {
                break;
            }
            v.push(w.iter().map(|wj| wj / hnext).collect());
        }

        // Back substitution on the k×k triangle.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut u = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            u.iter_mut().zip(vi).for_each(|(uj, vj)| *uj += yi * vj);
        }
        precond.apply(&u, &mut z);
        x.iter_mut().zip(&z).for_each(|(xj, zj)| *xj += zj);

        if estimate <= tol {
            return Ok(GmresResult {
                x,
                iterations: total,
                residual_norm: estimate,
                converged: true,
            });
        }
    }
}
