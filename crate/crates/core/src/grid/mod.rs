//! Cell-centered uniform finite differences in one and two dimensions.
//!
//! Storage is row-major: cell `(ix, iy)` lives at `iy·nx + ix`. Neumann
//! boundaries reflect the ghost cell, so forward differences across the
//! boundary vanish. All reductions run in storage order, which makes every
//! sum bitwise reproducible.

mod snapshot;

use thiserror::Error;

use crate::model::FreeEnergy;
use crate::solver::sparse::CsrMatrix;

pub use snapshot::{read_snapshot, write_snapshot, Snapshot};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("need at least 2 cells per axis, got {0}")]
    TooFewCells(usize),
    #[error("domain length must be positive and finite, got {0}")]
    Length(f64),
    #[error("field has {found} values, grid has {expected} cells")]
    FieldLength { expected: usize, found: usize },
    #[error("field value {value} at cell {index} is not finite")]
    NotFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    Mismatch,
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Periodic,
    NeumannHomogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    dim: usize,
    n: [usize; 2],
    length: [f64; 2],
    origin: [f64; 2],
    bc: BoundaryCondition,
}

impl UniformGrid {
    pub fn new_1d(n: usize, length: f64, bc: BoundaryCondition) -> Result<Self, GridError> {
        Self::new(1, [n, 1], [length, 1.0], bc)
    }

    pub fn new_2d(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        bc: BoundaryCondition,
    ) -> Result<Self, GridError> {
        Self::new(2, [nx, ny], [lx, ly], bc)
    }

    /// For `dim = 1` the second axis entries are ignored and set to `(1, 1.0)`.
    pub fn new(
        dim: usize,
        n: [usize; 2],
        length: [f64; 2],
        bc: BoundaryCondition,
    ) -> Result<Self, GridError> {
        let (n, length) = match dim {
            1 => ([n[0], 1], [length[0], 1.0]),
            2 => (n, length),
            d => return Err(GridError::Dimension(d)),
        };
        for a in 0..dim {
            if n[a] < 2 {
                return Err(GridError::TooFewCells(n[a]));
            }
            if !(length[a] > 0.0 && length[a].is_finite()) {
                return Err(GridError::Length(length[a]));
            }
        }
        Ok(Self {
            dim,
            n,
            length,
            origin: [0.0; 2],
            bc,
        })
    }

    /// Lower-left corner of the domain; defaults to the origin.
    pub fn with_origin(mut self, origin: [f64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> [usize; 2] {
        self.n
    }

    pub fn length(&self) -> [f64; 2] {
        self.length
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.length[axis] / self.n[axis] as f64
    }

    /// Δx in 1D, Δx·Δy in 2D.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// |Ω|.
    pub fn measure(&self) -> f64 {
        self.length[..self.dim].iter().product()
    }

    /// Center of cell `index`; the second coordinate is 0 in 1D.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let (ix, iy) = (index % self.n[0], index / self.n[0]);
        let c = |a: usize, i: usize| self.origin[a] + (i as f64 + 0.5) * self.spacing(a);
        if self.dim == 1 {
            [c(0, ix), 0.0]
        } else {
            [c(0, ix), c(1, iy)]
        }
    }

    /// Neighbor of coordinate `i` along an axis of `n` cells; Neumann ghosts
    /// map back onto the boundary cell.
    #[inline]
    fn step(&self, i: usize, n: usize, forward: bool) -> usize {
        match (forward, self.bc) {
            (true, _) if i + 1 < n => i + 1,
            (false, _) if i > 0 => i - 1,
            (true, BoundaryCondition::Periodic) => 0,
            (false, BoundaryCondition::Periodic) => n - 1,
            (_, BoundaryCondition::NeumannHomogeneous) => i,
        }
    }

    /// Flat indices of the neighbors of `index` along `axis`, as (backward, forward).
    #[inline]
    fn neighbors(&self, index: usize, axis: usize) -> (usize, usize) {
        let nx = self.n[0];
        let (ix, iy) = (index % nx, index / nx);
        if axis == 0 {
            let base = iy * nx;
            (
                base + self.step(ix, nx, false),
                base + self.step(ix, nx, true),
            )
        } else {
            let ny = self.n[1];
            (
                self.step(iy, ny, false) * nx + ix,
                self.step(iy, ny, true) * nx + ix,
            )
        }
    }

    pub fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.len());
        assert_eq!(out.len(), self.len());
        let inv: Vec<f64> = (0..self.dim).map(|a| self.spacing(a).powi(-2)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            for (a, c) in inv.iter().enumerate() {
                let (m, p) = self.neighbors(i, a);
                v += (f[m] - 2.0 * f[i] + f[p]) * c;
            }
            *o = v;
        }
    }

    pub fn apply_laplacian(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.laplacian_into(f, &mut out);
        out
    }

    /// `Σ_cells vol · f·g`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        assert_eq!(f.len(), g.len());
        self.cell_volume() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn total(&self, f: &[f64]) -> f64 {
        self.cell_volume() * f.iter().sum::<f64>()
    }

    /// Per cell, `Σ_axes ½([D⁺f]² + [D⁻f]²)`.
    pub fn gradient_energy_density_into(&self, f: &[f64], out: &mut [f64]) {
        let inv: Vec<f64> = (0..self.dim).map(|a| 1.0 / self.spacing(a)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            for (a, c) in inv.iter().enumerate() {
                let (m, p) = self.neighbors(i, a);
                let dp = (f[p] - f[i]) * c;
                let dm = (f[i] - f[m]) * c;
                v += 0.5 * (dp * dp + dm * dm);
            }
            *o = v;
        }
    }

    /// `Σ_cells Σ_axes [D⁺f][D⁺g]` (unweighted).
    pub fn forward_difference_dot(&self, f: &[f64], g: &[f64]) -> f64 {
        let inv: Vec<f64> = (0..self.dim).map(|a| 1.0 / self.spacing(a)).collect();
        let mut s = 0.0;
        for i in 0..f.len() {
            for (a, c) in inv.iter().enumerate() {
                let (_, p) = self.neighbors(i, a);
                s += (f[p] - f[i]) * c * (g[p] - g[i]) * c;
            }
        }
        s
    }

    /// `vol · Σ_j ((γ/2)·gradient energy density + E₁(f_j))`.
    pub fn energy(&self, f: &[f64], fe: &FreeEnergy) -> f64 {
        let mut ged = vec![0.0; f.len()];
        self.gradient_energy_density_into(f, &mut ged);
        let s: f64 = f
            .iter()
            .zip(&ged)
            .map(|(&v, &g)| 0.5 * fe.gamma * g + fe.e1_density(v))
            .sum();
        self.cell_volume() * s
    }

    /// The discrete Laplacian as a sparse matrix.
    pub fn laplacian_matrix(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(5 * self.len());
        for i in 0..self.len() {
            for a in 0..self.dim {
                let c = self.spacing(a).powi(-2);
                let (m, p) = self.neighbors(i, a);
                t.push((i, m, c));
                t.push((i, p, c));
                t.push((i, i, -2.0 * c));
            }
        }
        CsrMatrix::from_triplets(self.len(), self.len(), &t)
    }

    /// Piecewise-linear (bilinear in 2D) interpolation from a coarse grid of
    /// `coarse` nodes per axis (capped at the fine count) to the cells;
    /// `len() × coarse^dim`. Rows sum to one.
    pub fn coarse_interpolation(&self, coarse: usize) -> CsrMatrix {
        let axis = |n: usize| -> Vec<[(usize, f64); 2]> {
            let nc = coarse.clamp(1, n);
            (0..n)
                .map(|k| {
                    let t = (k as f64 + 0.5) * nc as f64 / n as f64 - 0.5;
                    match self.bc {
                        BoundaryCondition::Periodic => {
                            let j = t.floor();
                            let w = t - j;
                            let j = (j as isize).rem_euclid(nc as isize) as usize;
                            [(j, 1.0 - w), ((j + 1) % nc, w)]
                        }
                        BoundaryCondition::NeumannHomogeneous => {
                            let t = t.clamp(0.0, (nc - 1) as f64);
                            let j = (t.floor() as usize).min(nc.saturating_sub(2));
                            let w = t - j as f64;
                            [(j, 1.0 - w), ((j + 1).min(nc - 1), w)]
                        }
                    }
                })
                .collect()
        };
        let xs = axis(self.n[0]);
        let ncx = coarse.clamp(1, self.n[0]);
        let mut t = Vec::new();
        if self.dim == 1 {
            for (k, ws) in xs.iter().enumerate() {
                t.extend(ws.iter().map(|&(j, w)| (k, j, w)));
            }
            return CsrMatrix::from_triplets(self.n[0], ncx, &t);
        }
        let ys = axis(self.n[1]);
        let ncy = coarse.clamp(1, self.n[1]);
        for (ky, wy) in ys.iter().enumerate() {
            for (kx, wx) in xs.iter().enumerate() {
                for &(jy, a) in wy {
                    for &(jx, b) in wx {
                        t.push((ky * self.n[0] + kx, jy * ncx + jx, a * b));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.len(), ncx * ncy, &t)
    }

    /// Overlapping subdomains for additive Schwarz: contiguous blocks of
    /// `block` cells per axis, each grown by `overlap` cells on every side
    /// (wrapping for periodic axes, clipped for Neumann). Every cell is covered.
    pub fn subdomains(&self, block: usize, overlap: usize) -> Vec<Vec<usize>> {
        let block = block.max(1);
        let axis = |n: usize| -> Vec<Vec<usize>> {
            (0..n)
                .step_by(block)
                .map(|start| {
                    let end = (start + block).min(n);
                    if end - start + 2 * overlap >= n {
                        return (0..n).collect();
                    }
                    let lo = start as isize - overlap as isize;
                    let hi = (end + overlap) as isize;
                    let mut idx: Vec<usize> = (lo..hi)
                        .filter_map(|k| match self.bc {
                            BoundaryCondition::Periodic => Some(k.rem_euclid(n as isize) as usize),
                            BoundaryCondition::NeumannHomogeneous => {
                                (0..n as isize).contains(&k).then_some(k as usize)
                            }
                        })
                        .collect();
                    idx.sort_unstable();
                    idx
                })
                .collect()
        };
        let xs = axis(self.n[0]);
        if self.dim == 1 {
            return xs;
        }
        let ys = axis(self.n[1]);
        let nx = self.n[0];
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for yb in &ys {
            for xb in &xs {
                out.push(
                    yb.iter()
                        .flat_map(|&iy| xb.iter().map(move |&ix| iy * nx + ix))
                        .collect(),
                );
            }
        }
        out
    }
}

/// Grid values `φ̃ʲ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: UniformGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::FieldLength {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NotFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: UniformGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Evaluates `f(x, y)` at cell centers (`y = 0` in 1D).
    pub fn from_fn(grid: UniformGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let [x, y] = grid.center(i);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn same_grid(&self, other: &Field) -> Result<(), GridError> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(GridError::Mismatch)
        }
    }
}

pub fn laplacian(f: &Field) -> Field {
    Field {
        grid: f.grid,
        values: f.grid.apply_laplacian(&f.values),
    }
}

pub fn inner_product(f: &Field, g: &Field) -> Result<f64, GridError> {
    f.same_grid(g)?;
    Ok(f.grid.inner(&f.values, &g.values))
}

pub fn mass(f: &Field) -> f64 {
    f.grid.total(&f.values)
}

pub fn gradient_energy_density(f: &Field) -> Field {
    let mut values = vec![0.0; f.values.len()];
    f.grid.gradient_energy_density_into(&f.values, &mut values);
    Field {
        grid: f.grid,
        values,
    }
}

pub fn discrete_energy(f: &Field, fe: &FreeEnergy) -> f64 {
    f.grid.energy(&f.values, fe)
}

/// `Σ g·D²f + Σ D⁺g·D⁺f` summed per axis; vanishes up to rounding.
pub fn sbp_check(f: &Field, g: &Field) -> Result<f64, GridError> {
    f.same_grid(g)?;
    let lap = f.grid.apply_laplacian(&f.values);
    let a: f64 = g.values.iter().zip(&lap).map(|(x, y)| x * y).sum();
    Ok(a + f.grid.forward_difference_dot(&f.values, &g.values))
}
