//! Multi-stage DVD tableaux.
//!
//! A ν-stage tableau couples the stage values `φ_1..φ_ν` through the ν̂ = ν(ν+1)/2
//! pairwise discrete variational derivatives `μ[φ_i, φ_j]` (`0 <= j < i <= ν`).
//! Coefficients are stored as exact rationals so that row sums, the expanded
//! pair matrix and the stability certificate can be checked without rounding.

mod certificate;
mod construct;
mod text;

pub use certificate::{
    build_certificate, find_partition_vector, is_psd, is_psd_exact, reference_partition_vector,
    StabilityCertificate, PSD_TOLERANCE,
};
pub use construct::{construct_tableau, lagrange_weights};

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational used for tableau coefficients.
pub type Rational = Ratio<i128>;

pub(crate) fn rat(num: i128, den: i128) -> Rational {
    Rational::new(num, den)
}

pub(crate) fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableauError {
    #[error("unknown scheme name `{0}`")]
    UnknownScheme(String),
    #[error("invalid stage pair (i={i}, j={j}) for nu={nu}: need 0 <= j < i <= nu")]
    InvalidPair { i: usize, j: usize, nu: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("row {row} sums to {sum} but its node is {node}")]
    RowSum {
        row: usize,
        sum: Rational,
        node: Rational,
    },
    #[error("duplicate quadrature node {0}")]
    DuplicateNode(Rational),
    #[error("integration interval must satisfy a < b")]
    EmptyInterval,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("tableau text: {0}")]
    Parse(String),
}

/// A stage pair `(i, j)` with `j < i`; stage 0 is the step start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
}

impl PairIndex {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Number of stage pairs, ν(ν+1)/2.
pub fn pair_count(nu: usize) -> usize {
    nu * (nu + 1) / 2
}

/// One-based linear index of the pair `(i, j)`: `j(2ν−j+1)/2 + (i−j)`.
///
/// Pairs are grouped by `j` ascending, then by `i` ascending.
pub fn pair_index(i: usize, j: usize, nu: usize) -> Result<usize, TableauError> {
    if j >= i || i > nu {
        return Err(TableauError::InvalidPair { i, j, nu });
    }
    Ok(j * (2 * nu - j + 1) / 2 + (i - j))
}

/// All pairs in linear-index order; `pairs(nu)[k - 1]` is the pair with index `k`.
pub fn pairs(nu: usize) -> Vec<PairIndex> {
    let mut out = Vec::with_capacity(pair_count(nu));
    for j in 0..nu {
        for i in (j + 1)..=nu {
            out.push(PairIndex { i, j });
        }
    }
    out
}

/// A ν-stage DVD tableau: `φ_i = φ_0 + h Σ_k ã_{ik} G y_k` for `i = 1..ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct DvdTableau {
    pub name: String,
    pub nu: usize,
    /// Stage times `c_i` as fractions of the step.
    pub nodes: Vec<Rational>,
    /// ν rows of ν̂ coefficients, columns ordered by [`pair_index`].
    pub rows: Vec<Vec<Rational>>,
    /// Claimed temporal order.
    pub order: u32,
}

impl DvdTableau {
    /// Builds a tableau, checking shapes and `Σ_k ã_{ik} = c_i`.
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<Rational>,
        rows: Vec<Vec<Rational>>,
        order: u32,
    ) -> Result<Self, TableauError> {
        let nu = nodes.len();
        if nu == 0 {
            return Err(TableauError::Dimension(
                "a tableau needs at least one stage".into(),
            ));
        }
        if rows.len() != nu {
            return Err(TableauError::Dimension(format!(
                "{} rows for {} nodes",
                rows.len(),
                nu
            )));
        }
        let width = pair_count(nu);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(TableauError::Dimension(format!(
                    "row {} has {} entries, expected {}",
                    r + 1,
                    row.len(),
                    width
                )));
            }
            let sum: Rational = row.iter().copied().sum();
            if sum != nodes[r] {
                return Err(TableauError::RowSum {
                    row: r + 1,
                    sum,
                    node: nodes[r],
                });
            }
        }
        Ok(Self {
            name: name.into(),
            nu,
            nodes,
            rows,
            order,
        })
    }

    pub fn pair_count(&self) -> usize {
        pair_count(self.nu)
    }

    /// Row coefficients as floats, `coefficients()[i-1][k-1] = ã_{ik}`.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| row.iter().map(to_f64).collect())
            .collect()
    }

    /// Pair columns that carry at least one nonzero coefficient.
    pub fn active_pairs(&self) -> Vec<(usize, PairIndex)> {
        pairs(self.nu)
            .into_iter()
            .enumerate()
            .filter(|(k, _)| self.rows.iter().any(|row| !row[*k].is_zero()))
            .collect()
    }

    pub fn to_text(&self) -> String {
        text::to_text(self)
    }

    pub fn from_text(name: impl Into<String>, src: &str) -> Result<Self, TableauError> {
        text::from_text(name.into(), src)
    }
}

/// Names accepted by [`builtin_tableau`].
pub const BUILTIN_SCHEMES: [&str; 4] = ["Sch-1", "Sch-2", "Sch-3", "Sch-4"];

/// The four shipped tableaux.
pub fn builtin_tableau(name: &str) -> Result<DvdTableau, TableauError> {
    let r = rat;
    let z = Rational::zero();
    let (nodes, rows, order) = match name {
        "Sch-1" => (vec![r(1, 1)], vec![vec![r(1, 1)]], 2),
        "Sch-2" => (
            vec![r(1, 3), r(1, 1)],
            vec![
                vec![r(7, 18), r(-1, 6), r(1, 9)],
                vec![r(1, 2), r(-1, 2), r(1, 1)],
            ],
            3,
        ),
        "Sch-3" => (
            vec![r(1, 2), r(1, 1)],
            vec![
                vec![r(7, 12), r(-1, 6), r(1, 12)],
                vec![r(2, 3), r(-1, 3), r(2, 3)],
            ],
            4,
        ),
        "Sch-4" => (
            vec![r(1, 3), r(2, 3), r(1, 1)],
            vec![
                vec![r(25, 72), z, r(-1, 24), r(1, 72), z, r(1, 72)],
                vec![r(13, 36), z, r(-1, 12), r(13, 36), z, r(1, 36)],
                vec![r(3, 8), z, r(-1, 8), r(3, 8), z, r(3, 8)],
            ],
            4,
        ),
        other => return Err(TableauError::UnknownScheme(other.to_string())),
    };
    DvdTableau::new(name, nodes, rows, order)
}

/// The ν̂×ν̂ pair matrix: row `k=(i,j)` is `row_i − row_j` with `row_0 ≡ 0`,
/// so that `φ_i − φ_j = h G (row_k · y)` for every pair.
pub fn expand_matrix(tab: &DvdTableau) -> Vec<Vec<Rational>> {
    let width = tab.pair_count();
    pairs(tab.nu)
        .into_iter()
        .map(|p| {
            (0..width)
                .map(|c| {
                    let upper = tab.rows[p.i - 1][c];
                    let lower = if p.j == 0 {
                        Rational::zero()
                    } else {
                        tab.rows[p.j - 1][c]
                    };
                    upper - lower
                })
                .collect()
        })
        .collect()
}

/// Linear constraints on a unit partition vector `v`:
/// `E^ν − E^0 = Σ_k v_k (E^{i_k} − E^{j_k})` for arbitrary energy levels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPartitionSystem {
    /// (ν+1)×ν̂; row `m` collects the coefficient of `E^m`.
    pub matrix: Vec<Vec<Rational>>,
    pub rhs: Vec<Rational>,
}

impl UnitPartitionSystem {
    pub fn is_satisfied_by(&self, v: &[Rational]) -> bool {
        v.len() == self.matrix[0].len()
            && self
                .matrix
                .iter()
                .zip(&self.rhs)
                .all(|(row, rhs)| row.iter().zip(v).map(|(a, b)| a * b).sum::<Rational>() == *rhs)
    }

    /// Particular solution (free coordinates zero) plus a null-space basis.
    ///
    /// Each basis vector has a one in exactly one free coordinate, so the
    /// family is parameterized directly by the free entries of `v`.
    pub fn solution_family(&self) -> (Vec<Rational>, Vec<usize>, Vec<Vec<Rational>>) {
        let rows = self.matrix.len();
        let cols = self.matrix[0].len();
        let mut aug: Vec<Vec<Rational>> = self
            .matrix
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| {
                let mut r = row.clone();
                r.push(*b);
                r
            })
            .collect();
        let mut pivots = Vec::new();
        let mut prow = 0;
        for c in 0..cols {
            if prow == rows {
                break;
            }
            let Some(sel) = (prow..rows).find(|&r| !aug[r][c].is_zero()) else {
                continue;
            };
            aug.swap(prow, sel);
            let inv = Rational::from_integer(1) / aug[prow][c];
            for x in aug[prow].iter_mut() {
                *x *= inv;
            }
            for r in 0..rows {
                if r != prow && !aug[r][c].is_zero() {
                    let f = aug[r][c];
                    for cc in 0..=cols {
                        let delta = f * aug[prow][cc];
                        aug[r][cc] -= delta;
                    }
                }
            }
            pivots.push(c);
            prow += 1;
        }
        let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
        let mut particular = vec![Rational::zero(); cols];
        for (r, &pc) in pivots.iter().enumerate() {
            particular[pc] = aug[r][cols];
        }
        let basis = free
            .iter()
            .map(|&fc| {
                let mut n = vec![Rational::zero(); cols];
                n[fc] = Rational::from_integer(1);
                for (r, &pc) in pivots.iter().enumerate() {
                    n[pc] = -aug[r][fc];
                }
                n
            })
            .collect();
        (particular, free, basis)
    }
}

/// Builds the unit-partition constraint set for `nu` stages.
///
/// One row is redundant: the rows sum to zero.
pub fn unit_partition_system(nu: usize) -> UnitPartitionSystem {
    let width = pair_count(nu);
    let mut matrix = vec![vec![Rational::zero(); width]; nu + 1];
    for (k, p) in pairs(nu).into_iter().enumerate() {
        matrix[p.i][k] += Rational::from_integer(1);
        matrix[p.j][k] -= Rational::from_integer(1);
    }
    let mut rhs = vec![Rational::zero(); nu + 1];
    rhs[nu] += Rational::from_integer(1);
    rhs[0] -= Rational::from_integer(1);
    UnitPartitionSystem { matrix, rhs }
}
