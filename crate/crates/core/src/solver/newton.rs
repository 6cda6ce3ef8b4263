use super::{gmres, norm, KrylovConfig, LinearOperator, SolverError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearch {
    None,
    /// Armijo backtracking on `‖F‖`: accept `λ` once
    /// `‖F(x+λS)‖ ≤ (1 − c1·λ)‖F(x)‖`, otherwise `λ ← shrink·λ`.
    Backtracking {
        c1: f64,
        shrink: f64,
        max_halvings: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub eps_rel: f64,
    pub eps_abs: f64,
    /// Relative step tolerance: `‖S‖ ≤ step_tol·‖x‖` ends the iteration
    /// without applying `S`, as success only once `‖F‖ ≤ √eps_rel·‖F(x₀)‖`.
    /// Zero disables it.
    pub step_tol: f64,
    pub max_iters: usize,
    pub linesearch: LineSearch,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            eps_rel: 1e-12,
            eps_abs: 1e-12,
            step_tol: 1e-14,
            max_iters: 50,
            linesearch: LineSearch::Backtracking {
                c1: 1e-4,
                shrink: 0.5,
                max_halvings: 20,
            },
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.eps_rel > 0.0 && self.eps_abs > 0.0 && self.step_tol >= 0.0) {
            return Err(SolverError::Config(
                "Newton tolerances must be positive".into(),
            ));
        }
        if let LineSearch::Backtracking { c1, shrink, .. } = self.linesearch {
            if !(0.0 < c1 && c1 < 1.0 && 0.0 < shrink && shrink < 1.0) {
                return Err(SolverError::Config(
                    "line search needs 0 < c1 < 1 and 0 < shrink < 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `F(x) = 0` with a Jacobian action and a preconditioner.
pub trait NonlinearSystem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64], f: &mut [f64]);
    /// `J(x)` as an operator.
    fn jacobian<'a>(&'a self, x: &'a [f64]) -> Box<dyn LinearOperator + 'a>;
    /// Approximates `J(x0) + shift·I`; built once per solve (or per shift).
    fn preconditioner<'a>(
        &'a self,
        x0: &[f64],
        shift: f64,
    ) -> Result<Box<dyn LinearOperator + 'a>, SolverError>;
    /// Bound on the rounding error of `‖F(x)‖`; residuals at or below it
    /// carry no information.
    fn residual_floor(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `‖F‖ ≤ max(eps_rel·‖F(x₀)‖, eps_abs)`.
    Residual,
    /// Step below `step_tol·‖x‖` with `‖F‖ ≤ √eps_rel·‖F(x₀)‖`.
    StepTolerance,
    /// `‖F‖` at or below the system's rounding floor.
    RoundoffFloor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub gmres_iterations: usize,
    pub initial_residual: f64,
    pub residual: f64,
    /// `‖F‖` at every accepted iterate, starting with `x₀`.
    pub history: Vec<f64>,
    pub reason: StopReason,
}

/// Inexact Newton: `J S = −F` by GMRES, then `x ← x + λS`.
pub fn newton(
    sys: &dyn NonlinearSystem,
    x0: &[f64],
    ncfg: &NewtonConfig,
    kcfg: &KrylovConfig,
) -> Result<NewtonReport, SolverError> {
    ncfg.validate()?;
    let n = sys.dim();
    if x0.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            found: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    sys.residual(&x, &mut f);
    let mut fnorm = norm(&f);
    if !fnorm.is_finite() {
        return Err(SolverError::NonFinite(0));
    }
    let initial = fnorm;
    let tol = (ncfg.eps_rel * initial).max(ncfg.eps_abs);
    let precond = sys.preconditioner(&x, 0.0)?;
    let mut gmres_total = 0;
    let mut trial = vec![0.0; n];
    let mut ftrial = vec![0.0; n];
    let mut history = vec![fnorm];

    for it in 0..=ncfg.max_iters {
        if fnorm <= tol {
            return Ok(NewtonReport {
                x,
                iterations: it,
                gmres_iterations: gmres_total,
                initial_residual: initial,
                residual: fnorm,
                history,
                reason: StopReason::Residual,
            });
        }
        if fnorm <= sys.residual_floor(&x) {
            return Ok(NewtonReport {
                x,
                iterations: it,
                gmres_iterations: gmres_total,
                initial_residual: initial,
                residual: fnorm,
                history,
                reason: StopReason::RoundoffFloor,
            });
        }
        if it == ncfg.max_iters {
            break;
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let lin = {
            let jac = sys.jacobian(&x);
            gmres(jac.as_ref(), &rhs, precond.as_ref(), None, kcfg)?
        };
        gmres_total += lin.iterations;
        let step = lin.x;
        if norm(&step) <= ncfg.step_tol * norm(&x) {
            // A vanishing step far from a root is stagnation, not convergence
            // (flat residuals drive iterates off to infinity this way).
            if fnorm > ncfg.eps_rel.sqrt() * initial {
                return Err(SolverError::Newton {
                    iterations: it,
                    residual: fnorm,
                });
            }
            return Ok(NewtonReport {
                x,
                iterations: it,
                gmres_iterations: gmres_total,
                initial_residual: initial,
                residual: fnorm,
                history,
                reason: StopReason::StepTolerance,
            });
        }

        let (c1, shrink, max_halvings) = match ncfg.linesearch {
            LineSearch::None => (0.0, 0.5, 0),
            LineSearch::Backtracking {
                c1,
                shrink,
                max_halvings,
            } => (c1, shrink, max_halvings),
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=max_halvings {
            for i in 0..n {
                trial[i] = x[i] + lambda * step[i];
            }
            sys.residual(&trial, &mut ftrial);
            let tn = norm(&ftrial);
            let unguarded = matches!(ncfg.linesearch, LineSearch::None);
            if tn.is_finite() && (unguarded || tn <= (1.0 - c1 * lambda) * fnorm) {
                accepted = Some(tn);
                break;
            }
            lambda *= shrink;
        }
        match accepted {
            Some(tn) => {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut f, &mut ftrial);
                fnorm = tn;
                history.push(fnorm);
                if !fnorm.is_finite() {
                    return Err(SolverError::NonFinite(it + 1));
                }
            }
            None => {
                return Err(SolverError::LineSearch {
                    iteration: it,
                    residual: fnorm,
                })
            }
        }
    }
    Err(SolverError::Newton {
        iterations: ncfg.max_iters,
        residual: fnorm,
    })
}

/// Pseudo-transient continuation: `(J + I/τ) S = −F`, `x ← x + S`, with
/// `τ` grown by the residual ratio (switched evolution relaxation). Small `τ`
/// follows `x' = −F(x)`, which reaches a root whenever `F` is a scaled
/// gradient of a coercive functional; large `τ` recovers Newton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtcConfig {
    pub tau0: f64,
    /// Largest factor by which `τ` may grow in one step.
    pub max_growth: f64,
    /// `τ` beyond which the shift is dropped.
    pub tau_max: f64,
    pub max_iters: usize,
}

impl Default for PtcConfig {
    fn default() -> Self {
        Self {
            tau0: 1.0,
            max_growth: 4.0,
            tau_max: 1e10,
            max_iters: 2000,
        }
    }
}

pub fn pseudo_transient(
    sys: &dyn NonlinearSystem,
    x0: &[f64],
    ncfg: &NewtonConfig,
    kcfg: &KrylovConfig,
    pcfg: &PtcConfig,
) -> Result<NewtonReport, SolverError> {
    ncfg.validate()?;
    if !(pcfg.tau0 > 0.0 && pcfg.max_growth > 1.0 && pcfg.tau_max >= pcfg.tau0) {
        return Err(SolverError::Config(
            "pseudo-transient parameters out of range".into(),
        ));
    }
    let n = sys.dim();
    if x0.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            found: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    sys.residual(&x, &mut f);
    let mut fnorm = norm(&f);
    if !fnorm.is_finite() {
        return Err(SolverError::NonFinite(0));
    }
    let initial = fnorm;
    let tol = (ncfg.eps_rel * initial).max(ncfg.eps_abs);
    let mut tau = pcfg.tau0;
    let mut gmres_total = 0;
    let mut history = vec![fnorm];
    let mut trial = vec![0.0; n];
    let mut ftrial = vec![0.0; n];

    for it in 0..=pcfg.max_iters {
        let reason = if fnorm <= tol {
            Some(StopReason::Residual)
        } else if fnorm <= sys.residual_floor(&x) {
            Some(StopReason::RoundoffFloor)
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(NewtonReport {
                x,
                iterations: it,
                gmres_iterations: gmres_total,
                initial_residual: initial,
                residual: fnorm,
                history,
                reason,
            });
        }
        if it == pcfg.max_iters {
            break;
        }
        let shift = if tau >= pcfg.tau_max { 0.0 } else { 1.0 / tau };
        // The iterate travels far from x0, so the preconditioner follows it.
        let precond = sys.preconditioner(&x, shift)?;
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let lin = {
            let jac = sys.jacobian(&x);
            let shifted = super::FnOperator::new(n, |v: &[f64], out: &mut [f64]| {
                jac.apply(v, out);
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += shift * vi;
                }
            });
            gmres(&shifted, &rhs, precond.as_ref(), None, kcfg)?
        };
        gmres_total += lin.iterations;
        for i in 0..n {
            trial[i] = x[i] + lin.x[i];
        }
        sys.residual(&trial, &mut ftrial);
        let tn = norm(&ftrial);
        if !tn.is_finite() || tn > 10.0 * fnorm {
            // Too long a pseudo-step: retreat without moving.
            tau *= 0.25;
            continue;
        }
        tau = (tau * (fnorm / tn).min(pcfg.max_growth)).max(pcfg.tau0 * 1e-6);
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut f, &mut ftrial);
        fnorm = tn;
        history.push(fnorm);
    }
    Err(SolverError::Newton {
        iterations: pcfg.max_iters,
        residual: fnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{FnOperator, IdentityOperator};
    use super::*;

    /// Componentwise `F(x)_i = x_i³ − c_i`.
    struct Cubic(Vec<f64>);

    impl NonlinearSystem for Cubic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn residual(&self, x: &[f64], f: &mut [f64]) {
            for i in 0..x.len() {
                f[i] = x[i].powi(3) - self.0[i];
            }
        }
        fn jacobian<'a>(&'a self, x: &'a [f64]) -> Box<dyn LinearOperator + 'a> {
            Box::new(FnOperator::new(
                x.len(),
                move |v: &[f64], out: &mut [f64]| {
                    for i in 0..v.len() {
                        out[i] = 3.0 * x[i] * x[i] * v[i];
                    }
                },
            ))
        }
        fn preconditioner<'a>(
            &'a self,
            x0: &[f64],
            _: f64,
        ) -> Result<Box<dyn LinearOperator + 'a>, SolverError> {
            Ok(Box::new(IdentityOperator(x0.len())))
        }
    }

    struct Linear;

    impl NonlinearSystem for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64], f: &mut [f64]) {
            f[0] = x[0];
        }
        fn jacobian<'a>(&'a self, _: &'a [f64]) -> Box<dyn LinearOperator + 'a> {
            Box::new(IdentityOperator(1))
        }
        fn preconditioner<'a>(
            &'a self,
            _: &[f64],
            _: f64,
        ) -> Result<Box<dyn LinearOperator + 'a>, SolverError> {
            Ok(Box::new(IdentityOperator(1)))
        }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn linear_converges_in_one_iteration() {
        let r = newton(
            &Linear,
            &[1.0],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
        )
        .unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.x[0], 0.0);
        assert_eq!(r.reason, StopReason::Residual);
    }

    #[test]
    fn cubic_matches_bisection() {
        let sys = Cubic(vec![2.0]);
        let cfg = NewtonConfig {
            step_tol: 0.0,
            ..NewtonConfig::default()
        };
        let r = newton(&sys, &[2.0], &cfg, &KrylovConfig::linear()).unwrap();
        let root = bisect(|x| x * x * x - 2.0, 0.0, 2.0);
        assert!((r.x[0] - root).abs() < 1e-12);
        assert_eq!(r.reason, StopReason::Residual);
        assert!(r.residual <= (cfg.eps_rel * r.initial_residual).max(cfg.eps_abs));
        assert!(r.iterations <= 8);
    }

    #[test]
    fn quadratic_convergence() {
        let r = newton(
            &Cubic(vec![2.0]),
            &[2.0],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
        )
        .unwrap();
        for w in r.history.windows(2) {
            if w[0] < 0.5 && w[1] > 1e-13 {
                assert!(w[1] <= 2.0 * w[0] * w[0], "{:?}", r.history);
            }
        }
    }

    #[test]
    fn stops_immediately_at_root() {
        let sys = Cubic(vec![8.0, 27.0]);
        let r = newton(
            &sys,
            &[2.0, 3.0],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.gmres_iterations, 0);
    }

    #[test]
    fn line_search_never_increases_residual() {
        // Full Newton steps from near zero overshoot wildly.
        let sys = Cubic(vec![1.0, -1.0, 0.5]);
        let r = newton(
            &sys,
            &[0.05, -0.04, 0.03],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
        )
        .unwrap();
        assert_eq!(r.reason, StopReason::Residual);
        assert!(r.history.len() > 3);
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0], "{:?}", r.history);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let sys = Cubic(vec![2.0]);
        let cfg = NewtonConfig {
            max_iters: 2,
            ..NewtonConfig::default()
        };
        match newton(&sys, &[10.0], &cfg, &KrylovConfig::linear()) {
            Err(SolverError::Newton {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = NewtonConfig {
            linesearch: LineSearch::Backtracking {
                c1: 1.5,
                shrink: 0.5,
                max_halvings: 3,
            },
            ..NewtonConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(NewtonConfig::default().validate().is_ok());
    }

    /// `F(x) = atan(x)`: undamped Newton diverges from |x₀| > 1.39.
    struct Atan;

    impl NonlinearSystem for Atan {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64], f: &mut [f64]) {
            f[0] = x[0].atan();
        }
        fn jacobian<'a>(&'a self, x: &'a [f64]) -> Box<dyn LinearOperator + 'a> {
            let d = 1.0 / (1.0 + x[0] * x[0]);
            Box::new(FnOperator::new(1, move |v: &[f64], out: &mut [f64]| {
                out[0] = d * v[0]
            }))
        }
        fn preconditioner<'a>(
            &'a self,
            _: &[f64],
            _: f64,
        ) -> Result<Box<dyn LinearOperator + 'a>, SolverError> {
            Ok(Box::new(IdentityOperator(1)))
        }
    }

    #[test]
    fn pseudo_transient_reaches_roots_newton_misses() {
        let undamped = NewtonConfig {
            linesearch: LineSearch::None,
            ..NewtonConfig::default()
        };
        let n = newton(&Atan, &[3.0], &undamped, &KrylovConfig::linear());
        assert!(n.is_err(), "{n:?}");
        let r = pseudo_transient(
            &Atan,
            &[3.0],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
            &PtcConfig::default(),
        )
        .unwrap();
        assert!(r.x[0].abs() < 1e-12, "{:?}", r.x);
        assert_eq!(r.reason, StopReason::Residual);
    }

    #[test]
    fn pseudo_transient_matches_bisection() {
        let sys = Cubic(vec![2.0, -5.0, 0.5]);
        let r = pseudo_transient(
            &sys,
            &[1.0, 1.0, 1.0],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
            &PtcConfig::default(),
        )
        .unwrap();
        for (x, c) in r.x.iter().zip(&sys.0) {
            let root = bisect(|t| t * t * t - c, -3.0, 3.0);
            assert!((x - root).abs() < 1e-10, "{x} vs {root}");
        }
        assert!(r.history.windows(2).all(|w| w[1] <= 10.0 * w[0]));
    }

    #[test]
    fn pseudo_transient_rejects_bad_parameters() {
        let bad = PtcConfig {
            max_growth: 1.0,
            ..PtcConfig::default()
        };
        let r = pseudo_transient(
            &Linear,
            &[1.0],
            &NewtonConfig::default(),
            &KrylovConfig::linear(),
            &bad,
        );
        assert!(matches!(r, Err(SolverError::Config(_))));
    }
}
