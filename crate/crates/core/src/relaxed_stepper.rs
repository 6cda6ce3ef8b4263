//! Linear relaxed DVD schemes (ν = 1). The relaxation replaces the exact
//! energy difference by a modified energy with an auxiliary variable, or by a
//! convex-splitting inequality, so every step is one or two linear solves.
//!
//! All schemes solve for the increment `δ = φ₁ − φ₀`; for H⁻¹ the right-hand
//! side is a Laplacian and `δ` has zero mean exactly.

use std::sync::Arc;

use crate::dvd_stepper::{apply_g, Preconditioning, StepError, StepReport};
use crate::grid::{discrete_energy, Field, UniformGrid};
use crate::model::{DissipationKind, FreeEnergy};
use crate::solver::{gmres, CsrMatrix, KrylovConfig, LinearOperator, SolverError};

/// `C₀` used when none is configured: 0 for `m = 1`, 1 for `m = 2`.
pub fn default_c0(m: u32) -> f64 {
    if m == 1 {
        0.0
    } else {
        1.0
    }
}

fn radicand_root(value: f64, m: u32) -> Result<f64, StepError> {
    match m {
        1 => Ok(value),
        2 if value > 0.0 => Ok(value.sqrt()),
        _ if m % 2 == 1 && value != 0.0 => Ok(value.signum() * value.abs().powf(1.0 / m as f64)),
        _ => Err(StepError::Radicand { m, value }),
    }
}

/// `r = (∫Ē₁(φ) + C₀)^{1/m}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxScalar {
    pub r: f64,
    pub m: u32,
    pub c0: f64,
}

impl AuxScalar {
    pub fn new(phi: &Field, fe: &FreeEnergy, m: u32, c0: f64) -> Result<Self, StepError> {
        Ok(Self {
            r: scalar_root(phi, fe, m, c0)?,
            m,
            c0,
        })
    }
}

fn scalar_root(phi: &Field, fe: &FreeEnergy, m: u32, c0: f64) -> Result<f64, StepError> {
    let bar: Vec<f64> = phi
        .values()
        .iter()
        .map(|&p| fe.shifted_density(p))
        .collect();
    radicand_root(phi.grid().total(&bar) + c0, m)
}

/// Pointwise `Q = (Ē₁(φ) + C₀)^{1/m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxField {
    pub q: Field,
    pub m: u32,
    pub c0: f64,
}

impl AuxField {
    pub fn new(phi: &Field, fe: &FreeEnergy, m: u32, c0: f64) -> Result<Self, StepError> {
        Ok(Self {
            q: field_root(phi, fe, m, c0)?,
            m,
            c0,
        })
    }
}

fn field_root(phi: &Field, fe: &FreeEnergy, m: u32, c0: f64) -> Result<Field, StepError> {
    let q = phi
        .values()
        .iter()
        .map(|&p| radicand_root(fe.shifted_density(p) + c0, m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Field::new(*phi.grid(), q)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    Scalar(AuxScalar),
    Field(AuxField),
}

/// `L̂ = a0 + a1(−Δ) + a2(−Δ)²` for the stabilized scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilizer {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Stabilizer {
    /// `a0 = 2/ε²`, which bounds `E₁''` of the double well on [−1, 1].
    pub fn default_for(fe: &FreeEnergy) -> Self {
        Self {
            a0: 2.0 / (fe.epsilon * fe.epsilon),
            a1: 0.0,
            a2: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelaxedScheme {
    /// Scalar auxiliary, `m = 1`.
    RDvd1,
    /// Scalar auxiliary, `m = 2`.
    SavCn,
    /// Field auxiliary with exponent `m` (1 or 2).
    Ieq(u32),
    Stabilized(Stabilizer),
}

impl RelaxedScheme {
    pub fn name(&self) -> String {
        match self {
            RelaxedScheme::RDvd1 => "R-DVD-1".into(),
            RelaxedScheme::SavCn => "SAV-CN".into(),
            RelaxedScheme::Ieq(m) => format!("IEQ-{m}"),
            RelaxedScheme::Stabilized(_) => "Stabilized".into(),
        }
    }

    /// Auxiliary exponent, if any.
    pub fn exponent(&self) -> Option<u32> {
        match self {
            RelaxedScheme::RDvd1 => Some(1),
            RelaxedScheme::SavCn => Some(2),
            RelaxedScheme::Ieq(m) => Some(*m),
            RelaxedScheme::Stabilized(_) => None,
        }
    }
}

/// Two time levels plus the auxiliary variable.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedState {
    pub phi_curr: Field,
    /// `None` before the first step.
    pub phi_prev: Option<Field>,
    pub aux: Aux,
    pub scheme: RelaxedScheme,
}

impl RelaxedState {
    /// Auxiliary variables are initialized exactly from `phi0` with `fe.c0`.
    pub fn new(phi0: Field, scheme: RelaxedScheme, fe: &FreeEnergy) -> Result<Self, StepError> {
        let aux = match scheme {
            RelaxedScheme::RDvd1 => Aux::Scalar(AuxScalar::new(&phi0, fe, 1, fe.c0)?),
            RelaxedScheme::SavCn => Aux::Scalar(AuxScalar::new(&phi0, fe, 2, fe.c0)?),
            RelaxedScheme::Ieq(m @ (1 | 2)) => Aux::Field(AuxField::new(&phi0, fe, m, fe.c0)?),
            RelaxedScheme::Ieq(m) => {
                return Err(StepError::Unsupported(format!("IEQ exponent m={m}")))
            }
            RelaxedScheme::Stabilized(_) => Aux::None,
        };
        Ok(Self {
            phi_curr: phi0,
            phi_prev: None,
            aux,
            scheme,
        })
    }

    pub fn modified_energy(&self, fe: &FreeEnergy) -> f64 {
        modified_energy(&self.phi_curr, &self.aux, fe)
    }

    /// Advances one step with the state's scheme.
    pub fn step(
        &mut self,
        fe: &FreeEnergy,
        kind: DissipationKind,
        h: f64,
        solver: &mut LinearSolver,
    ) -> Result<StepReport, StepError> {
        let (phi, aux, report) = match self.scheme {
            RelaxedScheme::RDvd1 => {
                let (p, a, r) = rdvd1_step(self, fe, kind, h, solver)?;
                (p, Aux::Scalar(a), r)
            }
            RelaxedScheme::SavCn => {
                let (p, a, r) = savcn_step(self, fe, kind, h, solver)?;
                (p, Aux::Scalar(a), r)
            }
            RelaxedScheme::Ieq(_) => {
                let (p, a, r) = ieq_step(self, fe, kind, h, solver)?;
                (p, Aux::Field(a), r)
            }
            RelaxedScheme::Stabilized(s) => {
                let (p, r) = stabilized_step(self, fe, kind, h, &s, solver)?;
                (p, Aux::None, r)
            }
        };
        self.phi_prev = Some(std::mem::replace(&mut self.phi_curr, phi));
        self.aux = aux;
        Ok(report)
    }
}

/// `(3/2)φₙ − (1/2)φₙ₋₁`, or `φₙ` without history.
pub fn extrapolate(phi_n: &Field, phi_prev: Option<&Field>) -> Result<Field, StepError> {
    match phi_prev {
        None => Ok(phi_n.clone()),
        Some(p) => {
            if p.grid() != phi_n.grid() {
                return Err(crate::grid::GridError::Mismatch.into());
            }
            let v = phi_n
                .values()
                .iter()
                .zip(p.values())
                .map(|(a, b)| 1.5 * a - 0.5 * b)
                .collect();
            Ok(Field::new(*phi_n.grid(), v)?)
        }
    }
}

/// `γ/2⟨φ, Lφ⟩ + r^m` or `γ/2⟨φ, Lφ⟩ + ⟨Q^m⟩`; the original discrete energy
/// without an auxiliary variable.
pub fn modified_energy(phi: &Field, aux: &Aux, fe: &FreeEnergy) -> f64 {
    let quadratic = || {
        let g = phi.grid();
        let lphi = l_apply(g, fe, phi.values());
        0.5 * fe.gamma * g.inner(phi.values(), &lphi)
    };
    match aux {
        Aux::None => discrete_energy(phi, fe),
        Aux::Scalar(a) => quadratic() + a.r.powi(a.m as i32),
        Aux::Field(a) => {
            let qm: Vec<f64> = a.q.values().iter().map(|q| q.powi(a.m as i32)).collect();
            quadratic() + phi.grid().total(&qm)
        }
    }
}

/// `L f = −Δf + (β/ε²) f`.
fn l_apply(grid: &UniformGrid, fe: &FreeEnergy, f: &[f64]) -> Vec<f64> {
    let s = fe.stabilization();
    let mut out = grid.apply_laplacian(f);
    out.iter_mut().zip(f).for_each(|(o, v)| *o = -*o + s * v);
    out
}

fn l_matrix(grid: &UniformGrid, fe: &FreeEnergy) -> CsrMatrix {
    let n = grid.len();
    grid.laplacian_matrix()
        .add(&CsrMatrix::identity(n), -1.0, fe.stabilization())
}

/// `I − h G M`.
fn system_matrix(grid: &UniformGrid, kind: DissipationKind, h: f64, m: &CsrMatrix) -> CsrMatrix {
    let gm = match kind {
        DissipationKind::L2 => m.scale(-1.0),
        DissipationKind::Hminus1 => grid.laplacian_matrix().matmul(m),
    };
    CsrMatrix::identity(grid.len()).add(&gm, 1.0, -h)
}

/// Everything a constant-coefficient system matrix depends on.
fn matrix_key(
    tag: f64,
    grid: &UniformGrid,
    fe: &FreeEnergy,
    kind: DissipationKind,
    h: f64,
) -> Vec<f64> {
    let [nx, ny] = grid.n();
    let [lx, ly] = grid.length();
    vec![
        tag,
        nx as f64,
        ny as f64,
        lx,
        ly,
        grid.dim() as f64,
        f64::from(u8::from(
            grid.bc() == crate::grid::BoundaryCondition::Periodic,
        )),
        f64::from(u8::from(kind.conserves_mass())),
        h,
        fe.gamma,
        fe.stabilization(),
    ]
}

/// `h G z`.
fn h_g(grid: &UniformGrid, kind: DissipationKind, h: f64, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    apply_g(grid, kind, z, &mut out);
    out.iter_mut().for_each(|v| *v *= h);
    out
}

/// Preconditioned GMRES with the preconditioner cached per matrix; the
/// constant-coefficient schemes assemble the same matrix every step.
pub struct LinearSolver {
    pub krylov: KrylovConfig,
    pub precond: Preconditioning,
    cache: Option<(CsrMatrix, Box<dyn LinearOperator + Send + Sync>)>,
    /// Recently assembled constant-coefficient matrices by key.
    assembled: Vec<(Vec<u64>, Arc<CsrMatrix>)>,
}

impl LinearSolver {
    pub fn new(krylov: KrylovConfig, precond: Preconditioning) -> Self {
        Self {
            krylov,
            precond,
            cache: None,
            assembled: Vec::new(),
        }
    }

    pub fn default_for(grid: &UniformGrid) -> Self {
        Self::new(KrylovConfig::linear(), Preconditioning::default_for(grid))
    }

    /// The matrix last built under `key`, or a fresh one from `build`.
    fn constant_matrix(
        &mut self,
        key: &[f64],
        build: impl FnOnce() -> CsrMatrix,
    ) -> Arc<CsrMatrix> {
        let bits: Vec<u64> = key.iter().map(|v| v.to_bits()).collect();
        if let Some((_, m)) = self.assembled.iter().find(|(k, _)| *k == bits) {
            return m.clone();
        }
        let m = Arc::new(build());
        if self.assembled.len() == 4 {
            self.assembled.remove(0);
        }
        self.assembled.push((bits, m.clone()));
        m
    }

    /// Returns the solution and the GMRES iteration count.
    pub fn solve(
        &mut self,
        grid: &UniformGrid,
        a: &CsrMatrix,
        rhs: &[f64],
    ) -> Result<(Vec<f64>, usize), StepError> {
        let fresh = !matches!(&self.cache, Some((m, _)) if m == a);
        if fresh {
            self.cache = Some((a.clone(), self.precond.build(a, grid)?));
        }
        let (_, p) = self.cache.as_ref().expect("filled above");
        let r = gmres(a, rhs, p.as_ref(), None, &self.krylov)?;
        if !r.converged {
            return Err(SolverError::Krylov {
                iterations: r.iterations,
                residual: r.residual_norm,
            }
            .into());
        }
        Ok((r.x, r.iterations))
    }
}

struct Increment {
    delta: Vec<f64>,
    gmres_iters: usize,
    linear_solves: usize,
}

fn solve_increment(
    grid: &UniformGrid,
    kind: DissipationKind,
    a: &CsrMatrix,
    rhs: &[f64],
    solver: &mut LinearSolver,
) -> Result<(Vec<f64>, usize), StepError> {
    let (mut delta, it) = solver.solve(grid, a, rhs)?;
    if kind.conserves_mass() {
        // The exact increment is mean-free; drop the solver's residue.
        let mean = grid.total(&delta) / grid.measure();
        delta.iter_mut().for_each(|v| *v -= mean);
    }
    Ok((delta, it))
}

fn check_step(h: f64) -> Result<(), StepError> {
    if h > 0.0 {
        Ok(())
    } else {
        Err(StepError::TimeStep(h))
    }
}

/// `E^1 − E^0 − ⟨δ, μ⟩` relative to the larger energy.
fn identity_residual(e0: f64, e1: f64, grid: &UniformGrid, delta: &[f64], mu: &[f64]) -> f64 {
    (e1 - e0 - grid.inner(delta, mu)).abs() / e0.abs().max(e1.abs()).max(1.0)
}

fn finish(
    phi0: &Field,
    delta: &[f64],
    aux0: &Aux,
    aux1: &Aux,
    fe: &FreeEnergy,
    mu: &[f64],
    inc: (usize, usize),
) -> Result<(Field, StepReport), StepError> {
    let grid = phi0.grid();
    let v: Vec<f64> = phi0
        .values()
        .iter()
        .zip(delta)
        .map(|(a, d)| a + d)
        .collect();
    let phi1 = Field::new(*grid, v)?;
    let (m0, m1) = (
        modified_energy(phi0, aux0, fe),
        modified_energy(&phi1, aux1, fe),
    );
    let residual = match aux0 {
        // The convex splitting gives an inequality, so only excess counts.
        Aux::None => (m1 - m0 - grid.inner(delta, mu)).max(0.0) / m0.abs().max(m1.abs()).max(1.0),
        _ => identity_residual(m0, m1, grid, delta, mu),
    };
    let report = StepReport {
        energy_before: discrete_energy(phi0, fe),
        energy_after: discrete_energy(&phi1, fe),
        modified_energy_before: m0,
        modified_energy_after: m1,
        mass_before: grid.total(phi0.values()),
        mass_after: grid.total(phi1.values()),
        newton_iters: 0,
        gmres_iters: inc.0,
        linear_solves: inc.1,
        dvd_identity_residual: residual,
    };
    Ok((phi1, report))
}

/// `Ē₁'(φ̄)` pointwise.
fn shifted_derivative(bar: &Field, fe: &FreeEnergy) -> Vec<f64> {
    bar.values()
        .iter()
        .map(|&p| fe.shifted_derivative(p))
        .collect()
}

/// `(I − hG(γ/2)L)δ = hG[γLφ₀ + c]` for an explicit nonlinear term `c`;
/// shared by the `m = 1` schemes.
fn linear_m1(
    phi0: &Field,
    c: &[f64],
    fe: &FreeEnergy,
    kind: DissipationKind,
    h: f64,
    solver: &mut LinearSolver,
) -> Result<Increment, StepError> {
    let grid = phi0.grid();
    let lphi = l_apply(grid, fe, phi0.values());
    let inner: Vec<f64> = lphi.iter().zip(c).map(|(l, c)| fe.gamma * l + c).collect();
    let a = solver.constant_matrix(&matrix_key(1.0, grid, fe, kind, h), || {
        system_matrix(grid, kind, h, &l_matrix(grid, fe).scale(0.5 * fe.gamma))
    });
    let (delta, it) = solve_increment(grid, kind, &a, &h_g(grid, kind, h, &inner), solver)?;
    Ok(Increment {
        delta,
        gmres_iters: it,
        linear_solves: 1,
    })
}

/// `μ = (γ/2)L(2φ₀ + δ) + c`.
fn mu_linear(phi0: &Field, delta: &[f64], c: &[f64], fe: &FreeEnergy) -> Vec<f64> {
    let grid = phi0.grid();
    let arg: Vec<f64> = phi0
        .values()
        .iter()
        .zip(delta)
        .map(|(p, d)| 2.0 * p + d)
        .collect();
    l_apply(grid, fe, &arg)
        .iter()
        .zip(c)
        .map(|(l, c)| 0.5 * fe.gamma * l + c)
        .collect()
}

fn scalar_aux(state: &RelaxedState, m: u32) -> Result<AuxScalar, StepError> {
    match &state.aux {
        Aux::Scalar(a) if a.m == m => Ok(*a),
        _ => Err(StepError::Unsupported(format!(
            "scheme needs a scalar auxiliary with m={m}"
        ))),
    }
}

/// Scalar auxiliary with `m = 1`: one constant-coefficient solve, then
/// `r₁ = r₀ + ⟨Ē₁'(φ̄), δ⟩`.
pub fn rdvd1_step(
    state: &RelaxedState,
    fe: &FreeEnergy,
    kind: DissipationKind,
    h: f64,
    solver: &mut LinearSolver,
) -> Result<(Field, AuxScalar, StepReport), StepError> {
    check_step(h)?;
    let aux = scalar_aux(state, 1)?;
    let phi0 = &state.phi_curr;
    let bar = extrapolate(phi0, state.phi_prev.as_ref())?;
    let c = shifted_derivative(&bar, fe);
    let inc = linear_m1(phi0, &c, fe, kind, h, solver)?;
    let aux1 = AuxScalar {
        r: aux.r + phi0.grid().inner(&c, &inc.delta),
        ..aux
    };
    let mu = mu_linear(phi0, &inc.delta, &c, fe);
    let (phi1, report) = finish(
        phi0,
        &inc.delta,
        &Aux::Scalar(aux),
        &Aux::Scalar(aux1),
        fe,
        &mu,
        (inc.gmres_iters, inc.linear_solves),
    )?;
    Ok((phi1, aux1, report))
}

/// Scalar auxiliary with `m = 2`. With `b = Ē₁'(φ̄)/(2r(φ̄))` and
/// `A = I − hG(γ/2)L`, the increment is `δ = u₁ + s u₂` where
/// `A u₁ = hG[γLφ₀ + 2r₀b]`, `A u₂ = hG b` and `s = ⟨b,u₁⟩/(1 − ⟨b,u₂⟩)`;
/// then `r₁ = r₀ + s`.
pub fn savcn_step(
    state: &RelaxedState,
    fe: &FreeEnergy,
    kind: DissipationKind,
    h: f64,
    solver: &mut LinearSolver,
) -> Result<(Field, AuxScalar, StepReport), StepError> {
    check_step(h)?;
    let aux = scalar_aux(state, 2)?;
    let phi0 = &state.phi_curr;
    let grid = phi0.grid();
    let bar = extrapolate(phi0, state.phi_prev.as_ref())?;
    let rbar = scalar_root(&bar, fe, 2, aux.c0)?;
    let b: Vec<f64> = shifted_derivative(&bar, fe)
        .iter()
        .map(|d| d / (2.0 * rbar))
        .collect();

    let lphi = l_apply(grid, fe, phi0.values());
    let a = solver.constant_matrix(&matrix_key(1.0, grid, fe, kind, h), || {
        system_matrix(grid, kind, h, &l_matrix(grid, fe).scale(0.5 * fe.gamma))
    });
    let rhs1: Vec<f64> = lphi
        .iter()
        .zip(&b)
        .map(|(l, bv)| fe.gamma * l + 2.0 * aux.r * bv)
        .collect();
    let (u1, it1) = solve_increment(grid, kind, &a, &h_g(grid, kind, h, &rhs1), solver)?;
    let (u2, it2) = solve_increment(grid, kind, &a, &h_g(grid, kind, h, &b), solver)?;
    // ⟨b, u₂⟩ = h⟨b, A⁻¹Gb⟩ ≤ 0, so the denominator is at least one.
    let s = grid.inner(&b, &u1) / (1.0 - grid.inner(&b, &u2));
    let delta: Vec<f64> = u1.iter().zip(&u2).map(|(p, q)| p + s * q).collect();
    let aux1 = AuxScalar {
        r: aux.r + s,
        ..aux
    };
    let c: Vec<f64> = b.iter().map(|bv| (aux1.r + aux.r) * bv).collect();
    let mu = mu_linear(phi0, &delta, &c, fe);
    let (phi1, report) = finish(
        phi0,
        &delta,
        &Aux::Scalar(aux),
        &Aux::Scalar(aux1),
        fe,
        &mu,
        (it1 + it2, 2),
    )?;
    Ok((phi1, aux1, report))
}

/// Field auxiliary. `m = 1`: the φ-update of [`rdvd1_step`] and
/// `Q₁ = Q₀ + Ē₁'(φ̄)δ`. `m = 2`: with `b = Ē₁'(φ̄)/(2Q(φ̄))` pointwise,
/// `(I − hG((γ/2)L + b²))δ = hG[γLφ₀ + 2Q₀b]` and `Q₁ = Q₀ + bδ`.
pub fn ieq_step(
    state: &RelaxedState,
    fe: &FreeEnergy,
    kind: DissipationKind,
    h: f64,
    solver: &mut LinearSolver,
) -> Result<(Field, AuxField, StepReport), StepError> {
    check_step(h)?;
    let aux = match &state.aux {
        Aux::Field(a) => a.clone(),
        _ => return Err(StepError::Unsupported("IEQ needs a field auxiliary".into())),
    };
    let phi0 = &state.phi_curr;
    let grid = phi0.grid();
    let bar = extrapolate(phi0, state.phi_prev.as_ref())?;
    let d = shifted_derivative(&bar, fe);
    let q0 = aux.q.values();
    let (delta, b, gm) = match aux.m {
        1 => {
            let inc = linear_m1(phi0, &d, fe, kind, h, solver)?;
            (inc.delta, d, inc.gmres_iters)
        }
        2 => {
            let qbar = field_root(&bar, fe, 2, aux.c0)?;
            let b: Vec<f64> = d
                .iter()
                .zip(qbar.values())
                .map(|(d, q)| d / (2.0 * q))
                .collect();
            let b2: Vec<f64> = b.iter().map(|v| v * v).collect();
            let m = l_matrix(grid, fe).add(&CsrMatrix::diagonal(&b2), 0.5 * fe.gamma, 1.0);
            let a = system_matrix(grid, kind, h, &m);
            let lphi = l_apply(grid, fe, phi0.values());
            let inner: Vec<f64> = (0..grid.len())
                .map(|k| fe.gamma * lphi[k] + 2.0 * q0[k] * b[k])
                .collect();
            let (delta, it) = solve_increment(grid, kind, &a, &h_g(grid, kind, h, &inner), solver)?;
            (delta, b, it)
        }
        m => return Err(StepError::Unsupported(format!("IEQ exponent m={m}"))),
    };
    let q1: Vec<f64> = (0..grid.len()).map(|k| q0[k] + b[k] * delta[k]).collect();
    let aux1 = AuxField {
        q: Field::new(*grid, q1)?,
        ..aux.clone()
    };
    // Nonlinear part of μ: ((Q₁^m − Q₀^m)/(Q₁ − Q₀))·Ē₁'/(mQ^{m−1}(φ̄)).
    let c: Vec<f64> = match aux.m {
        1 => b,
        _ => (0..grid.len())
            .map(|k| (aux1.q.values()[k] + q0[k]) * b[k])
            .collect(),
    };
    let mu = mu_linear(phi0, &delta, &c, fe);
    let (phi1, report) = finish(
        phi0,
        &delta,
        &Aux::Field(aux),
        &Aux::Field(aux1.clone()),
        fe,
        &mu,
        (gm, 1),
    )?;
    Ok((phi1, aux1, report))
}

/// Convex splitting with `L̂`: `μ = (−γΔ + L̂)φ₁ − (L̂φ₀ − E₁'(φ₀))`, i.e.
/// `(I − hG(−γΔ + L̂))δ = hG(−γΔφ₀ + E₁'(φ₀))`. First order; dissipates the
/// original energy when `L̂ − E₁''` is positive.
pub fn stabilized_step(
    state: &RelaxedState,
    fe: &FreeEnergy,
    kind: DissipationKind,
    h: f64,
    lhat: &Stabilizer,
    solver: &mut LinearSolver,
) -> Result<(Field, StepReport), StepError> {
    check_step(h)?;
    let phi0 = &state.phi_curr;
    let grid = phi0.grid();
    let n = grid.len();
    let mut key = matrix_key(2.0, grid, fe, kind, h);
    key.extend([lhat.a0, lhat.a1, lhat.a2]);
    // `M = −γΔ + L̂`.
    let m = solver.constant_matrix(&[key.clone(), vec![0.0]].concat(), || {
        let lap = grid.laplacian_matrix();
        let neg_lap = lap.scale(-1.0);
        let lhat_m = CsrMatrix::identity(n)
            .scale(lhat.a0)
            .add(&neg_lap, 1.0, lhat.a1)
            .add(&lap.matmul(&lap), 1.0, lhat.a2);
        neg_lap.add(&lhat_m, fe.gamma, 1.0)
    });
    let a = solver.constant_matrix(&[key, vec![1.0]].concat(), || {
        system_matrix(grid, kind, h, &m)
    });
    let lap0 = grid.apply_laplacian(phi0.values());
    let inner: Vec<f64> = (0..n)
        .map(|k| -fe.gamma * lap0[k] + fe.e1_derivative(phi0.values()[k]))
        .collect();
    let (delta, it) = solve_increment(grid, kind, &a, &h_g(grid, kind, h, &inner), solver)?;
    let md = m.mul_vec(&delta);
    let mu: Vec<f64> = (0..n).map(|k| inner[k] + md[k]).collect();
    finish(phi0, &delta, &Aux::None, &Aux::None, fe, &mu, (it, 1))
}
