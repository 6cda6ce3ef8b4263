//! Implicit ν-stage DVD time step.
//!
//! Stage equations `φ_i = φ_0 + h Σ_s ã_is G μ_s`, where `μ_s` is the discrete
//! variational derivative of the pair `s = (i, j)`, are solved for all stages
//! at once by inexact Newton. Unknowns are the stacked stages `[φ_1, …, φ_ν]`.

use thiserror::Error;

use crate::grid::{discrete_energy, Field, GridError, UniformGrid};
use crate::model::{DissipationKind, FreeEnergy};
use crate::solver::{
    block_preconditioner, newton, pseudo_transient, two_level_preconditioner, BlockDiagonal,
    CsrMatrix, IdentityOperator, KrylovConfig, LinearOperator, NewtonConfig, NewtonReport,
    NonlinearSystem, PtcConfig, SolverError,
};
use crate::tableau::{DvdTableau, PairIndex};

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("auxiliary radicand {value:.3e} is not admissible for exponent m={m}")]
    Radicand { m: u32, value: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Per-stage preconditioner for the stage equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioning {
    None,
    /// Overlapping blocks of `block` cells per axis.
    Schwarz {
        block: usize,
        overlap: usize,
    },
    /// Schwarz plus a Galerkin coarse grid of `coarse` nodes per axis.
    TwoLevel {
        block: usize,
        overlap: usize,
        coarse: usize,
    },
}

impl Preconditioning {
    pub fn default_for(grid: &UniformGrid) -> Self {
        if grid.dim() == 1 {
            Preconditioning::Schwarz {
                block: 64,
                overlap: 4,
            }
        } else {
            Preconditioning::Schwarz {
                block: 8,
                overlap: 1,
            }
        }
    }

    /// Preconditioner for the grid operator `a`.
    pub fn build(
        self,
        a: &CsrMatrix,
        grid: &UniformGrid,
    ) -> Result<Box<dyn LinearOperator + Send + Sync>, SolverError> {
        Ok(match self {
            Preconditioning::None => Box::new(IdentityOperator(a.nrows())),
            Preconditioning::Schwarz { block, overlap } => {
                Box::new(block_preconditioner(a, grid, block, overlap)?)
            }
            Preconditioning::TwoLevel {
                block,
                overlap,
                coarse,
            } => Box::new(two_level_preconditioner(a, grid, block, overlap, coarse)?),
        })
    }

    /// Two-level variant of the default, for iterates far from `φ₀`.
    pub fn fallback_for(grid: &UniformGrid) -> Self {
        match Self::default_for(grid) {
            Preconditioning::Schwarz { block, overlap } => Preconditioning::TwoLevel {
                block,
                overlap,
                coarse: if grid.dim() == 1 { 64 } else { 32 },
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvdSolverConfig {
    pub newton: NewtonConfig,
    pub krylov: KrylovConfig,
    pub precond: Preconditioning,
    /// Fallback when Newton from the frozen guess fails.
    pub ptc: PtcConfig,
    pub fallback_precond: Preconditioning,
    /// Inner solver for the retries. Short restarts stagnate on the stiff
    /// stage systems of large steps, where the preconditioned operator is far
    /// from normal.
    pub fallback_krylov: KrylovConfig,
}

impl DvdSolverConfig {
    pub fn default_for(grid: &UniformGrid) -> Self {
        Self {
            newton: NewtonConfig::default(),
            krylov: KrylovConfig::inexact_newton(),
            precond: Preconditioning::default_for(grid),
            ptc: PtcConfig::default(),
            fallback_precond: Preconditioning::fallback_for(grid),
            fallback_krylov: KrylovConfig {
                restart: 200,
                max_iters: 4000,
                ..KrylovConfig::inexact_newton()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub energy_before: f64,
    pub energy_after: f64,
    /// Equal to the energies for schemes without auxiliary variables.
    pub modified_energy_before: f64,
    pub modified_energy_after: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    pub newton_iters: usize,
    pub gmres_iters: usize,
    pub linear_solves: usize,
    /// Largest DVD identity residual over the evaluated pairs, relative to
    /// `max(|Ẽ(φ_i)|, |Ẽ(φ_j)|, 1)`.
    pub dvd_identity_residual: f64,
}

/// Step start, stage values and step size.
#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    pub phi0: Field,
    pub stages: Vec<Field>,
    pub h: f64,
}

impl StageState {
    /// All stages initialized to `phi0`.
    pub fn frozen(phi0: Field, nu: usize, h: f64) -> Self {
        Self {
            stages: vec![phi0.clone(); nu],
            phi0,
            h,
        }
    }

    fn stacked(&self) -> Vec<f64> {
        self.stages
            .iter()
            .flat_map(|f| f.values().iter().copied())
            .collect()
    }
}

/// `out = G z`: `−z` for L², `Δz` for H⁻¹.
pub(crate) fn apply_g(grid: &UniformGrid, kind: DissipationKind, z: &[f64], out: &mut [f64]) {
    match kind {
        DissipationKind::L2 => out.iter_mut().zip(z).for_each(|(o, v)| *o = -v),
        DissipationKind::Hminus1 => grid.laplacian_into(z, out),
    }
}

fn mu_into(fi: &[f64], fj: &[f64], li: &[f64], lj: &[f64], fe: &FreeEnergy, out: &mut [f64]) {
    let g = 0.5 * fe.gamma;
    for c in 0..out.len() {
        out[c] = -g * (li[c] + lj[c]) + fe.e1_quotient(fi[c], fj[c]);
    }
}

/// `−(γ/2)(Δf_i + Δf_j) + E₁{f_i, f_j}` pointwise.
pub fn discrete_mu(fi: &Field, fj: &Field, fe: &FreeEnergy) -> Result<Field, GridError> {
    if fi.grid() != fj.grid() {
        return Err(GridError::Mismatch);
    }
    let g = fi.grid();
    let (li, lj) = (
        g.apply_laplacian(fi.values()),
        g.apply_laplacian(fj.values()),
    );
    let mut out = vec![0.0; g.len()];
    mu_into(fi.values(), fj.values(), &li, &lj, fe, &mut out);
    Field::new(*g, out)
}

/// `Ẽ(f_i) − Ẽ(f_j) − ⟨f_i − f_j, μ[f_i, f_j]⟩`.
pub fn dvd_identity_residual(fi: &Field, fj: &Field, fe: &FreeEnergy) -> Result<f64, GridError> {
    let mu = discrete_mu(fi, fj, fe)?;
    let g = fi.grid();
    let diff: Vec<f64> = fi
        .values()
        .iter()
        .zip(fj.values())
        .map(|(a, b)| a - b)
        .collect();
    Ok(discrete_energy(fi, fe) - discrete_energy(fj, fe) - g.inner(&diff, mu.values()))
}

/// Stage equations of one DVD step as a nonlinear system.
pub struct DvdSystem<'a> {
    grid: UniformGrid,
    kind: DissipationKind,
    fe: &'a FreeEnergy,
    h: f64,
    phi0: &'a [f64],
    nu: usize,
    coeffs: Vec<Vec<f64>>,
    /// Pairs with at least one nonzero coefficient, with their column.
    pairs: Vec<(usize, PairIndex)>,
    precond: Preconditioning,
}

impl<'a> DvdSystem<'a> {
    pub fn new(
        grid: UniformGrid,
        phi0: &'a [f64],
        tab: &DvdTableau,
        kind: DissipationKind,
        fe: &'a FreeEnergy,
        h: f64,
        precond: Preconditioning,
    ) -> Self {
        let coeffs = tab.coefficients();
        let pairs = tab.active_pairs();
        Self {
            grid,
            kind,
            fe,
            h,
            phi0,
            nu: tab.nu,
            coeffs,
            pairs,
            precond,
        }
    }

    fn n(&self) -> usize {
        self.grid.len()
    }

    fn stage<'b>(&'b self, x: &'b [f64], s: usize) -> &'b [f64] {
        if s == 0 {
            self.phi0
        } else {
            &x[(s - 1) * self.n()..s * self.n()]
        }
    }

    /// Writes `out_i = d_i − h G Σ_s ã_is m_s` given the pair values `m_s`.
    fn combine(&self, d: &[f64], minus: Option<&[f64]>, mus: &[Vec<f64>], out: &mut [f64]) {
        let n = self.n();
        let mut z = vec![0.0; n];
        let mut gz = vec![0.0; n];
        for i in 0..self.nu {
            z.iter_mut().for_each(|v| *v = 0.0);
            for ((col, _), m) in self.pairs.iter().zip(mus) {
                let a = self.coeffs[i][*col];
                if a != 0.0 {
                    z.iter_mut().zip(m).for_each(|(zv, mv)| *zv += a * mv);
                }
            }
            apply_g(&self.grid, self.kind, &z, &mut gz);
            let di = &d[i * n..(i + 1) * n];
            let oi = &mut out[i * n..(i + 1) * n];
            for c in 0..n {
                let base = minus.map_or(0.0, |m| m[c]);
                oi[c] = di[c] - base - self.h * gz[c];
            }
        }
    }

    /// Pair DVDs `μ_s` at the stacked state `x`.
    fn pair_mus(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let laps: Vec<Vec<f64>> = (0..=self.nu)
            .map(|s| self.grid.apply_laplacian(self.stage(x, s)))
            .collect();
        self.pairs
            .iter()
            .map(|(_, p)| {
                let mut m = vec![0.0; self.n()];
                mu_into(
                    self.stage(x, p.i),
                    self.stage(x, p.j),
                    &laps[p.i],
                    &laps[p.j],
                    self.fe,
                    &mut m,
                );
                m
            })
            .collect()
    }

    /// `Σ_{s ∋ i} ã_is`: weight of stage `i` in its own equation.
    fn self_weight(&self, i: usize) -> f64 {
        self.pairs
            .iter()
            .filter(|(_, p)| p.i == i || p.j == i)
            .map(|(col, _)| self.coeffs[i - 1][*col])
            .sum()
    }

    /// Diagonal block `∂F_i/∂φ_i` at the stacked state `x`:
    /// `I − h G Σ_{s ∋ i} ã_is (−(γ/2)Δ + diag(∂_i E₁{·,·}))`. At the frozen
    /// guess this is `I − h w_i G(−(γ/2)Δ + E₁''(φ₀)/2)`.
    pub fn stage_preconditioner_matrix(&self, i: usize, x: &[f64]) -> CsrMatrix {
        let n = self.n();
        let lap = self.grid.laplacian_matrix();
        let mut c = vec![0.0; n];
        for (col, p) in &self.pairs {
            let a = self.coeffs[i - 1][*col];
            if a == 0.0 || (p.i != i && p.j != i) {
                continue;
            }
            let (fi, fj) = (self.stage(x, p.i), self.stage(x, p.j));
            for k in 0..n {
                let (qa, qb) = self.fe.e1_quotient_partials(fi[k], fj[k]);
                c[k] += a * if p.i == i { qa } else { qb };
            }
        }
        let m = lap.add(
            &CsrMatrix::diagonal(&c),
            -0.5 * self.fe.gamma * self.self_weight(i),
            1.0,
        );
        let gm = match self.kind {
            DissipationKind::L2 => m.scale(-1.0),
            DissipationKind::Hminus1 => lap.matmul(&m),
        };
        CsrMatrix::identity(n).add(&gm, 1.0, -self.h)
    }
}

struct DvdJacobian<'s, 'a> {
    sys: &'s DvdSystem<'a>,
    /// `∂E₁{a,b}/∂a`, `∂E₁{a,b}/∂b` for each active pair.
    partials: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LinearOperator for DvdJacobian<'_, '_> {
    fn dim(&self) -> usize {
        self.sys.nu * self.sys.n()
    }

    fn apply(&self, d: &[f64], out: &mut [f64]) {
        let sys = self.sys;
        let n = sys.n();
        let laps: Vec<Vec<f64>> = (1..=sys.nu)
            .map(|s| sys.grid.apply_laplacian(&d[(s - 1) * n..s * n]))
            .collect();
        let g = 0.5 * sys.fe.gamma;
        let mus: Vec<Vec<f64>> = sys
            .pairs
            .iter()
            .zip(&self.partials)
            .map(|((_, p), (qa, qb))| {
                let mut m = vec![0.0; n];
                for s in [p.i, p.j] {
                    if s == 0 {
                        continue;
                    }
                    let q = if s == p.i { qa } else { qb };
                    let ds = &d[(s - 1) * n..s * n];
                    let ls = &laps[s - 1];
                    for c in 0..n {
                        m[c] += -g * ls[c] + q[c] * ds[c];
                    }
                }
                m
            })
            .collect();
        sys.combine(d, None, &mus, out);
    }
}

impl NonlinearSystem for DvdSystem<'_> {
    fn dim(&self) -> usize {
        self.nu * self.n()
    }

    fn residual(&self, x: &[f64], f: &mut [f64]) {
        let mus = self.pair_mus(x);
        self.combine(x, Some(self.phi0), &mus, f);
    }

    fn jacobian<'b>(&'b self, x: &'b [f64]) -> Box<dyn LinearOperator + 'b> {
        let partials = self
            .pairs
            .iter()
            .map(|(_, p)| {
                let (fi, fj) = (self.stage(x, p.i), self.stage(x, p.j));
                fi.iter()
                    .zip(fj)
                    .map(|(&a, &b)| self.fe.e1_quotient_partials(a, b))
                    .unzip()
            })
            .collect();
        Box::new(DvdJacobian {
            sys: self,
            partials,
        })
    }

    fn residual_floor(&self, x: &[f64]) -> f64 {
        // Evaluate the residual with every term replaced by its magnitude.
        let n = self.n();
        let inv: f64 = (0..self.grid.dim())
            .map(|a| self.grid.spacing(a).powi(-2))
            .sum();
        let abs_lap = |f: &[f64]| -> Vec<f64> {
            let a: Vec<f64> = f.iter().map(|v| v.abs()).collect();
            let mut l = self.grid.apply_laplacian(&a);
            l.iter_mut()
                .zip(&a)
                .for_each(|(lv, av)| *lv += 4.0 * inv * av);
            l
        };
        let laps: Vec<Vec<f64>> = (0..=self.nu).map(|s| abs_lap(self.stage(x, s))).collect();
        let mus: Vec<Vec<f64>> = self
            .pairs
            .iter()
            .map(|(_, p)| {
                let (fi, fj) = (self.stage(x, p.i), self.stage(x, p.j));
                (0..n)
                    .map(|c| {
                        let (a, b) = (fi[c], fj[c]);
                        let (qa, qb) = self.fe.e1_quotient_partials(a, b);
                        0.5 * self.fe.gamma * (laps[p.i][c] + laps[p.j][c])
                            + self.fe.e1_quotient(a, b).abs()
                            + (qa * a).abs()
                            + (qb * b).abs()
                    })
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        for i in 0..self.nu {
            let mut z = vec![0.0; n];
            for ((col, _), m) in self.pairs.iter().zip(&mus) {
                let a = self.coeffs[i][*col].abs();
                z.iter_mut().zip(m).for_each(|(zv, mv)| *zv += a * mv);
            }
            let gz = match self.kind {
                DissipationKind::L2 => z,
                DissipationKind::Hminus1 => abs_lap(&z),
            };
            let xi = &x[i * n..(i + 1) * n];
            for c in 0..n {
                let t = xi[c].abs() + self.phi0[c].abs() + self.h * gz[c];
                total += t * t;
            }
        }
        f64::EPSILON * total.sqrt()
    }

    fn preconditioner<'b>(
        &'b self,
        x0: &[f64],
        shift: f64,
    ) -> Result<Box<dyn LinearOperator + 'b>, SolverError> {
        if self.precond == Preconditioning::None {
            return Ok(Box::new(IdentityOperator(self.dim())));
        }
        let mut parts: Vec<Box<dyn LinearOperator>> = Vec::with_capacity(self.nu);
        for i in 1..=self.nu {
            let m = self.stage_preconditioner_matrix(i, x0);
            let m = m.add(&CsrMatrix::identity(self.n()), 1.0, shift);
            parts.push(self.precond.build(&m, &self.grid)?);
        }
        Ok(Box::new(BlockDiagonal::new(parts)))
    }
}

fn unstack(grid: &UniformGrid, x: &[f64]) -> Result<Vec<Field>, GridError> {
    x.chunks(grid.len())
        .map(|c| Field::new(*grid, c.to_vec()))
        .collect()
}

/// Stage residuals `F_i` at `state`.
pub fn residual(
    state: &StageState,
    tab: &DvdTableau,
    kind: DissipationKind,
    fe: &FreeEnergy,
) -> Result<Vec<Field>, GridError> {
    let grid = *state.phi0.grid();
    let sys = DvdSystem::new(
        grid,
        state.phi0.values(),
        tab,
        kind,
        fe,
        state.h,
        Preconditioning::None,
    );
    let x = state.stacked();
    let mut f = vec![0.0; x.len()];
    sys.residual(&x, &mut f);
    unstack(&grid, &f)
}

/// Directional derivative of [`residual`] at `state` along `direction`.
pub fn jacobian_apply(
    state: &StageState,
    direction: &[Field],
    tab: &DvdTableau,
    kind: DissipationKind,
    fe: &FreeEnergy,
) -> Result<Vec<Field>, GridError> {
    let grid = *state.phi0.grid();
    let sys = DvdSystem::new(
        grid,
        state.phi0.values(),
        tab,
        kind,
        fe,
        state.h,
        Preconditioning::None,
    );
    let x = state.stacked();
    let d: Vec<f64> = direction
        .iter()
        .flat_map(|f| f.values().iter().copied())
        .collect();
    let mut out = vec![0.0; x.len()];
    sys.jacobian(&x).apply(&d, &mut out);
    unstack(&grid, &out)
}

/// Halvings of `h` tried when Newton fails from the frozen initial guess.
const CONTINUATION_DEPTH: usize = 8;

/// Newton on the stage equations from the frozen guess, retried with the wide
/// Krylov space, then pseudo-transient continuation. On failure the same
/// system is approached by continuation in the step size: the stages for
/// `h/2` are computed first and extrapolated linearly in `h` to seed a
/// second attempt.
fn solve_stages(
    grid: UniformGrid,
    phi0: &[f64],
    tab: &DvdTableau,
    kind: DissipationKind,
    fe: &FreeEnergy,
    h: f64,
    cfg: &DvdSolverConfig,
    depth: usize,
) -> Result<NewtonReport, SolverError> {
    let sys = DvdSystem::new(grid, phi0, tab, kind, fe, h, cfg.precond);
    let frozen: Vec<f64> = (0..tab.nu).flat_map(|_| phi0.iter().copied()).collect();
    let attempt = |guess: &[f64]| {
        newton(&sys, guess, &cfg.newton, &cfg.krylov)
            .or_else(|_| newton(&sys, guess, &cfg.newton, &cfg.fallback_krylov))
    };
    let direct = attempt(&frozen).or_else(|_| {
        let sys = DvdSystem::new(grid, phi0, tab, kind, fe, h, cfg.fallback_precond);
        pseudo_transient(&sys, &frozen, &cfg.newton, &cfg.fallback_krylov, &cfg.ptc)
    });
    match direct {
        Ok(r) => Ok(r),
        Err(e) if depth >= CONTINUATION_DEPTH => Err(e),
        Err(_) => {
            let half = solve_stages(grid, phi0, tab, kind, fe, 0.5 * h, cfg, depth + 1)?;
            let guess: Vec<f64> = half
                .x
                .iter()
                .zip(&frozen)
                .map(|(s, p)| 2.0 * s - p)
                .collect();
            let mut r = attempt(&guess).or_else(|_| attempt(&half.x))?;
            r.iterations += half.iterations;
            r.gmres_iterations += half.gmres_iterations;
            Ok(r)
        }
    }
}

/// One DVD step from `phi0`; returns the last stage `φ_ν`.
pub fn dvd_step(
    phi0: &Field,
    tab: &DvdTableau,
    kind: DissipationKind,
    fe: &FreeEnergy,
    h: f64,
    cfg: &DvdSolverConfig,
) -> Result<(Field, StepReport), StepError> {
    if !(h > 0.0) {
        return Err(StepError::TimeStep(h));
    }
    let grid = *phi0.grid();
    let n = grid.len();
    let mut sol = solve_stages(grid, phi0.values(), tab, kind, fe, h, cfg, 0)?;
    if kind.conserves_mass() {
        // mean(F_i) = mean(φ_i − φ₀) exactly, so the exact stages carry the
        // mass of φ₀; remove what the inexact solve left behind.
        let mean0 = grid.total(phi0.values()) / grid.measure();
        for chunk in sol.x.chunks_mut(n) {
            let shift = mean0 - grid.total(chunk) / grid.measure();
            chunk.iter_mut().for_each(|v| *v += shift);
        }
    }
    let pairs = tab.active_pairs();

    let stages = unstack(&grid, &sol.x)?;
    let energy = |s: usize| {
        if s == 0 {
            discrete_energy(phi0, fe)
        } else {
            discrete_energy(&stages[s - 1], fe)
        }
    };
    let energies: Vec<f64> = (0..=tab.nu).map(energy).collect();
    let stage_field = |s: usize| if s == 0 { phi0 } else { &stages[s - 1] };
    let mut worst: f64 = 0.0;
    for (_, p) in &pairs {
        let r = dvd_identity_residual(stage_field(p.i), stage_field(p.j), fe)?;
        let scale = energies[p.i].abs().max(energies[p.j].abs()).max(1.0);
        worst = worst.max(r.abs() / scale);
    }
    let last = stages.into_iter().last().expect("nu >= 1");
    let report = StepReport {
        energy_before: energies[0],
        energy_after: energies[tab.nu],
        modified_energy_before: energies[0],
        modified_energy_after: energies[tab.nu],
        mass_before: grid.total(phi0.values()),
        mass_after: grid.total(&sol.x[(tab.nu - 1) * n..]),
        newton_iters: sol.iterations,
        gmres_iters: sol.gmres_iterations,
        linear_solves: sol.iterations,
        dvd_identity_residual: worst,
    };
    Ok((last, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;
    use crate::model::ZeroPotential;
    use crate::tableau::builtin_tableau;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn random_field(grid: UniformGrid, rng: &mut ChaCha8Rng, amp: f64) -> Field {
        let v = (0..grid.len())
            .map(|_| rng.random_range(-amp..amp))
            .collect();
        Field::new(grid, v).unwrap()
    }

    fn norm(f: &[Field]) -> f64 {
        f.iter()
            .flat_map(|x| x.values().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn mu_examples() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(16, TAU, BoundaryCondition::Periodic).unwrap();
        let mu = discrete_mu(&Field::constant(g, 1.0), &Field::constant(g, -1.0), &fe).unwrap();
        assert!(mu.values().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(g, &mut rng, 1.0);
        let mu = discrete_mu(&f, &f, &fe).unwrap();
        let lap = g.apply_laplacian(f.values());
        for c in 0..16 {
            let direct = -fe.gamma * lap[c] + fe.e1_derivative(f.values()[c]);
            assert!((mu.values()[c] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn identity_examples() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(64, TAU, BoundaryCondition::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(g, &mut rng, 1.0);
        assert_eq!(dvd_identity_residual(&f, &f, &fe).unwrap(), 0.0);
        for _ in 0..20 {
            let a = random_field(g, &mut rng, 1.5);
            let b = random_field(g, &mut rng, 1.5);
            let r = dvd_identity_residual(&a, &b, &fe).unwrap();
            let scale = discrete_energy(&a, &fe)
                .abs()
                .max(discrete_energy(&b, &fe).abs())
                .max(1.0);
            assert!(r.abs() < 1e-11 * scale);
        }
        let one = Field::constant(g, 1.0);
        let zero = Field::constant(g, 0.0);
        let r = dvd_identity_residual(&one, &zero, &fe).unwrap();
        assert!(
            (discrete_energy(&one, &fe) - discrete_energy(&zero, &fe) + TAU * 25.0).abs() < 1e-10
        );
        assert!(r.abs() < 1e-11 * TAU * 25.0);
    }

    #[test]
    fn steady_stages_have_zero_residual() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(8, 1.0, BoundaryCondition::Periodic).unwrap();
        for kind in [DissipationKind::L2, DissipationKind::Hminus1] {
            for name in ["Sch-1", "Sch-4"] {
                let tab = builtin_tableau(name).unwrap();
                let st = StageState::frozen(Field::constant(g, 1.0), tab.nu, 0.1);
                let r = residual(&st, &tab, kind, &fe).unwrap();
                assert_eq!(norm(&r), 0.0);
            }
        }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) * f(hi) <= 0.0);
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
    fn single_cell_sch1_matches_bisection() {
        // Constant fields see a zero Laplacian, so every cell is the scalar problem.
        let fe = FreeEnergy::double_well(1.0, 1.0);
        let g = UniformGrid::new_1d(2, 1.0, BoundaryCondition::Periodic).unwrap();
        let tab = builtin_tableau("Sch-1").unwrap();
        let cfg = DvdSolverConfig::default_for(&g);
        let (phi1, _) = dvd_step(
            &Field::constant(g, 0.5),
            &tab,
            DissipationKind::L2,
            &fe,
            0.1,
            &cfg,
        )
        .unwrap();
        let root = bisect(|p| p - 0.5 + 0.1 * fe.e1_quotient(p, 0.5), 0.0, 1.0);
        assert!((phi1.values()[0] - root).abs() < 1e-12);
        let st = StageState {
            phi0: Field::constant(g, 0.5),
            stages: vec![Field::constant(g, root)],
            h: 0.1,
        };
        let r = residual(&st, &tab, DissipationKind::L2, &fe).unwrap();
        assert!(norm(&r) < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(32, TAU, BoundaryCondition::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (name, kind) in [
            ("Sch-1", DissipationKind::Hminus1),
            ("Sch-2", DissipationKind::Hminus1),
            ("Sch-4", DissipationKind::L2),
            ("Sch-3", DissipationKind::Hminus1),
        ] {
            let tab = builtin_tableau(name).unwrap();
            let phi0 = random_field(g, &mut rng, 1.0);
            let stages = (0..tab.nu)
                .map(|_| random_field(g, &mut rng, 1.0))
                .collect();
            let st = StageState {
                phi0,
                stages,
                h: 1e-3,
            };
            let dir: Vec<Field> = (0..tab.nu)
                .map(|_| random_field(g, &mut rng, 1.0))
                .collect();
            let jd = jacobian_apply(&st, &dir, &tab, kind, &fe).unwrap();
            let eps = 1e-6 * norm(&st.stages);
            let shifted = |sign: f64| {
                let mut s = st.clone();
                for (f, d) in s.stages.iter_mut().zip(&dir) {
                    let v = f
                        .values()
                        .iter()
                        .zip(d.values())
                        .map(|(a, b)| a + sign * eps * b)
                        .collect();
                    *f = Field::new(g, v).unwrap();
                }
                residual(&s, &tab, kind, &fe).unwrap()
            };
            let (p, m) = (shifted(1.0), shifted(-1.0));
            let mut err = 0.0;
            for k in 0..tab.nu {
                for c in 0..g.len() {
                    let fd = (p[k].values()[c] - m[k].values()[c]) / (2.0 * eps);
                    err += (fd - jd[k].values()[c]).powi(2);
                }
            }
            assert!(
                err.sqrt() < 1e-6 * norm(&jd),
                "{name}: {} vs {}",
                err.sqrt(),
                norm(&jd)
            );
        }
    }

    #[test]
    fn zero_direction_gives_zero() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(8, 1.0, BoundaryCondition::Periodic).unwrap();
        let tab = builtin_tableau("Sch-2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let st = StageState::frozen(random_field(g, &mut rng, 1.0), 2, 0.01);
        let zero = vec![Field::constant(g, 0.0); 2];
        let jd = jacobian_apply(&st, &zero, &tab, DissipationKind::Hminus1, &fe).unwrap();
        assert_eq!(norm(&jd), 0.0);
    }

    fn heat_fe() -> FreeEnergy {
        FreeEnergy::double_well(0.7, 1.0).with_potential(Arc::new(ZeroPotential))
    }

    #[test]
    fn linear_jacobian_is_state_independent() {
        let fe = heat_fe();
        let g = UniformGrid::new_1d(12, 1.0, BoundaryCondition::NeumannHomogeneous).unwrap();
        let tab = builtin_tableau("Sch-3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dir: Vec<Field> = (0..2).map(|_| random_field(g, &mut rng, 1.0)).collect();
        let st1 = StageState::frozen(random_field(g, &mut rng, 1.0), 2, 0.05);
        let mut st2 = st1.clone();
        st2.stages = (0..2).map(|_| random_field(g, &mut rng, 3.0)).collect();
        let kind = DissipationKind::Hminus1;
        let j1 = jacobian_apply(&st1, &dir, &tab, kind, &fe).unwrap();
        let j2 = jacobian_apply(&st2, &dir, &tab, kind, &fe).unwrap();
        assert_eq!(j1, j2);
        // Superposition: F(X + D) − F(X) = J D.
        let r0 = residual(&st1, &tab, kind, &fe).unwrap();
        let mut st3 = st1.clone();
        for (f, d) in st3.stages.iter_mut().zip(&dir) {
            let v = f
                .values()
                .iter()
                .zip(d.values())
                .map(|(a, b)| a + b)
                .collect();
            *f = Field::new(g, v).unwrap();
        }
        let r1 = residual(&st3, &tab, kind, &fe).unwrap();
        for k in 0..2 {
            for c in 0..g.len() {
                let diff = r1[k].values()[c] - r0[k].values()[c];
                assert!((diff - j1[k].values()[c]).abs() < 1e-9 * norm(&j1));
            }
        }
    }

    /// Dense block system of the linear stage equations, built independently.
    fn dense_heat_step(
        g: &UniformGrid,
        phi0: &[f64],
        tab: &DvdTableau,
        gamma: f64,
        h: f64,
    ) -> Vec<f64> {
        let n = g.len();
        let nu = tab.nu;
        let mut lap = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let col = g.apply_laplacian(&e);
            for r in 0..n {
                lap[(r, i)] = col[r];
            }
        }
        // G = Δ; μ_(i,j) = −(γ/2)Δ(φ_i + φ_j); F_i = φ_i − φ_0 − h Σ a_is G μ_s.
        let gl = &lap * &lap * (-0.5 * gamma);
        let a = tab.coefficients();
        let mut k = DMatrix::<f64>::identity(nu * n, nu * n);
        let mut rhs = DVector::zeros(nu * n);
        for i in 0..nu {
            for (col, p) in crate::tableau::pairs(nu).iter().enumerate() {
                let c = a[i][col];
                if c == 0.0 {
                    continue;
                }
                for st in [p.i, p.j] {
                    let blk = &gl * (-h * c);
                    if st == 0 {
                        let v = &blk * DVector::from_column_slice(phi0);
                        for r in 0..n {
                            rhs[i * n + r] -= v[r];
                        }
                    } else {
                        let mut view = k.view_mut((i * n, (st - 1) * n), (n, n));
                        view += &blk;
                    }
                }
            }
            for r in 0..n {
                rhs[i * n + r] += phi0[r];
            }
        }
        let x = k.lu().solve(&rhs).unwrap();
        x.as_slice()[(nu - 1) * n..].to_vec()
    }

    #[test]
    fn sch3_heat_flow_matches_dense_solve() {
        let fe = heat_fe();
        let g = UniformGrid::new_1d(8, 1.0, BoundaryCondition::Periodic).unwrap();
        let tab = builtin_tableau("Sch-3").unwrap();
        let phi0 = Field::from_fn(g, |x, _| (TAU * x).sin() + 0.3 * (2.0 * TAU * x).cos());
        let h = 1e-3;
        let mut cfg = DvdSolverConfig::default_for(&g);
        cfg.krylov = KrylovConfig::linear();
        let (phi1, rep) = dvd_step(&phi0, &tab, DissipationKind::Hminus1, &fe, h, &cfg).unwrap();
        let oracle = dense_heat_step(&g, phi0.values(), &tab, fe.gamma, h);
        for (a, b) in phi1.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!(rep.newton_iters <= 2);
    }

    #[test]
    fn steady_state_needs_no_newton_step() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(16, TAU, BoundaryCondition::Periodic).unwrap();
        for name in crate::tableau::BUILTIN_SCHEMES {
            let tab = builtin_tableau(name).unwrap();
            for c in [1.0, -1.0] {
                let (phi1, rep) = dvd_step(
                    &Field::constant(g, c),
                    &tab,
                    DissipationKind::Hminus1,
                    &fe,
                    0.1,
                    &DvdSolverConfig::default_for(&g),
                )
                .unwrap();
                assert_eq!(rep.newton_iters, 0);
                assert!(phi1.values().iter().all(|&v| v == c));
            }
        }
    }

    #[test]
    fn ch_step_dissipates_and_conserves() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(64, TAU, BoundaryCondition::Periodic).unwrap();
        let phi0 = Field::from_fn(g, |x, _| 0.2 * x.sin());
        let cfg = DvdSolverConfig::default_for(&g);
        for name in crate::tableau::BUILTIN_SCHEMES {
            let tab = builtin_tableau(name).unwrap();
            let (_, rep) =
                dvd_step(&phi0, &tab, DissipationKind::Hminus1, &fe, 1e-3, &cfg).unwrap();
            assert!(
                rep.energy_after <= rep.energy_before + 1e-10 * rep.energy_before.abs().max(1.0)
            );
            assert!((rep.mass_after - rep.mass_before).abs() < 1e-10);
            assert!(rep.dvd_identity_residual < 1e-11);
        }
    }

    #[test]
    fn rejects_nonpositive_step() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(4, 1.0, BoundaryCondition::Periodic).unwrap();
        let tab = builtin_tableau("Sch-1").unwrap();
        let r = dvd_step(
            &Field::constant(g, 0.0),
            &tab,
            DissipationKind::L2,
            &fe,
            0.0,
            &DvdSolverConfig::default_for(&g),
        );
        assert!(matches!(r, Err(StepError::TimeStep(_))));
    }

    #[test]
    fn preconditioner_reduces_gmres_iterations() {
        let fe = FreeEnergy::double_well(1.0, 0.1);
        let g = UniformGrid::new_1d(256, TAU, BoundaryCondition::Periodic).unwrap();
        let phi0 = Field::from_fn(g, |x, _| 0.2 * x.sin());
        let tab = builtin_tableau("Sch-1").unwrap();
        let mut cfg = DvdSolverConfig::default_for(&g);
        let (a, with) = dvd_step(&phi0, &tab, DissipationKind::Hminus1, &fe, 1e-4, &cfg).unwrap();
        cfg.precond = Preconditioning::None;
        cfg.krylov.max_iters = 100_000;
        let (b, without) =
            dvd_step(&phi0, &tab, DissipationKind::Hminus1, &fe, 1e-4, &cfg).unwrap();
        assert!(
            with.gmres_iters < without.gmres_iters,
            "{} vs {}",
            with.gmres_iters,
            without.gmres_iters
        );
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
