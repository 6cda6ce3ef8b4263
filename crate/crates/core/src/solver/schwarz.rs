use nalgebra::{DVector, Dyn, LU};

use super::{CsrMatrix, LinearOperator, SolverError};
use crate::grid::UniformGrid;

/// Additive Schwarz: `y = Σ_i R_iᵀ A_i⁻¹ R_i x` with dense LU factors of the
/// principal submatrices `A_i = A[idx_i, idx_i]`. Overlap 0 is block Jacobi.
pub struct SchwarzPreconditioner {
    dim: usize,
    blocks: Vec<(Vec<usize>, LU<f64, Dyn, Dyn>)>,
}

impl SchwarzPreconditioner {
    pub fn new(a: &CsrMatrix, subdomains: Vec<Vec<usize>>) -> Result<Self, SolverError> {
        let mut blocks = Vec::with_capacity(subdomains.len());
        for (k, idx) in subdomains.into_iter().enumerate() {
            let lu = a.principal_submatrix(&idx).lu();
            if !lu.is_invertible() {
                return Err(SolverError::SingularBlock(k));
            }
            blocks.push((idx, lu));
        }
        Ok(Self {
            dim: a.nrows(),
            blocks,
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

impl LinearOperator for SchwarzPreconditioner {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (idx, lu) in &self.blocks {
            let mut local = DVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i]));
            // Factors were checked invertible at construction.
            lu.solve_mut(&mut local);
            for (&i, v) in idx.iter().zip(local.iter()) {
                y[i] += v;
            }
        }
    }
}

/// Schwarz preconditioner over the grid's overlapping subdomains.
pub fn block_preconditioner(
    a: &CsrMatrix,
    grid: &UniformGrid,
    block: usize,
    overlap: usize,
) -> Result<SchwarzPreconditioner, SolverError> {
    if a.nrows() != grid.len() {
        return Err(SolverError::Dimension {
            expected: grid.len(),
            found: a.nrows(),
        });
    }
    SchwarzPreconditioner::new(a, grid.subdomains(block, overlap))
}

/// Hybrid two-level Schwarz: an exact Galerkin coarse solve
/// `y₀ = P (PᵀAP)⁻¹ Pᵀ x`, then the one-level correction of the remaining
/// residual, `y = y₀ + M(x − A y₀)`. The coarse space removes the smooth
/// modes that subdomain solves cannot see, including negative ones.
pub struct TwoLevelSchwarz {
    a: CsrMatrix,
    interp: CsrMatrix,
    restrict: CsrMatrix,
    coarse: LU<f64, Dyn, Dyn>,
    fine: SchwarzPreconditioner,
}

impl TwoLevelSchwarz {
    pub fn new(
        a: &CsrMatrix,
        interp: CsrMatrix,
        fine: SchwarzPreconditioner,
    ) -> Result<Self, SolverError> {
        if interp.nrows() != a.nrows() || fine.dim != a.nrows() {
            return Err(SolverError::Dimension {
                expected: a.nrows(),
                found: interp.nrows(),
            });
        }
        let restrict = interp.transpose();
        let coarse = restrict.matmul(&a.matmul(&interp)).to_dense().lu();
        if !coarse.is_invertible() {
            return Err(SolverError::SingularCoarse);
        }
        Ok(Self {
            a: a.clone(),
            interp,
            restrict,
            coarse,
            fine,
        })
    }
}

impl LinearOperator for TwoLevelSchwarz {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xc = DVector::from_vec(self.restrict.mul_vec(x));
        self.coarse.solve_mut(&mut xc);
        let y0 = self.interp.mul_vec(xc.as_slice());
        let ay0 = self.a.mul_vec(&y0);
        let r: Vec<f64> = x.iter().zip(&ay0).map(|(a, b)| a - b).collect();
        self.fine.apply(&r, y);
        y.iter_mut().zip(&y0).for_each(|(v, c)| *v += c);
    }
}

/// Two-level Schwarz over the grid's subdomains and a coarse grid of
/// `coarse` nodes per axis.
pub fn two_level_preconditioner(
    a: &CsrMatrix,
    grid: &UniformGrid,
    block: usize,
    overlap: usize,
    coarse: usize,
) -> Result<TwoLevelSchwarz, SolverError> {
    let fine = block_preconditioner(a, grid, block, overlap)?;
    TwoLevelSchwarz::new(a, grid.coarse_interpolation(coarse), fine)
}

/// Independent operators on consecutive slices of the input.
pub struct BlockDiagonal {
    parts: Vec<Box<dyn LinearOperator>>,
}

impl BlockDiagonal {
    pub fn new(parts: Vec<Box<dyn LinearOperator>>) -> Self {
        Self { parts }
    }
}

impl LinearOperator for BlockDiagonal {
    fn dim(&self) -> usize {
        self.parts.iter().map(|p| p.dim()).sum()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut off = 0;
        for p in &self.parts {
            let n = p.dim();
            p.apply(&x[off..off + n], &mut y[off..off + n]);
            off += n;
        }
    }
}
