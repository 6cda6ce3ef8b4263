//! Energy-stability certificates: `B = ½(diag(v)A + Aᵀdiag(v))` for a unit
//! partition vector `v`. A positive semidefinite `B` makes the scheme
//! unconditionally energy stable for any negative semidefinite `G`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::{Signed, Zero};

use super::{pair_count, to_f64, unit_partition_system, Rational, TableauError};

/// Slack on the smallest eigenvalue when deciding positive semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    /// Unit partition vector.
    pub v: Vec<Rational>,
    /// Symmetric certificate matrix, exact.
    pub b: Vec<Vec<Rational>>,
    pub min_eigenvalue: f64,
}

impl StabilityCertificate {
    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= -PSD_TOLERANCE
    }

    pub fn b_f64(&self) -> DMatrix<f64> {
        let n = self.b.len();
        DMatrix::from_fn(n, n, |i, j| to_f64(&self.b[i][j]))
    }
}

fn nu_for_width(width: usize) -> Option<usize> {
    (1..=width).find(|&nu| pair_count(nu) == width)
}

/// Builds the certificate for the expanded matrix `a` and partition vector `v`.
pub fn build_certificate(
    a: &[Vec<Rational>],
    v: &[Rational],
) -> Result<StabilityCertificate, TableauError> {
    let n = a.len();
    if v.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(TableauError::Dimension(format!(
            "expanded matrix is {}x{} but v has {} entries",
            n,
            a.first().map_or(0, Vec::len),
            v.len()
        )));
    }
    let nu = nu_for_width(n)
        .ok_or_else(|| TableauError::Dimension(format!("{n} is not a triangular number")))?;
    if !unit_partition_system(nu).is_satisfied_by(v) {
        return Err(TableauError::Dimension(
            "v is not a unit partition vector".into(),
        ));
    }
    let half = Rational::new(1, 2);
    let b: Vec<Vec<Rational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| half * (v[i] * a[i][j] + a[j][i] * v[j]))
                .collect()
        })
        .collect();
    let bf = DMatrix::from_fn(n, n, |i, j| to_f64(&b[i][j]));
    let min_eigenvalue = min_eigenvalue(&bf);
    Ok(StabilityCertificate {
        v: v.to_vec(),
        b,
        min_eigenvalue,
    })
}

fn min_eigenvalue(b: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(b.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Floating-point PSD verdict: `min eig(B) >= -tol`. Returns the verdict and
/// the smallest eigenvalue.
pub fn is_psd(b: &DMatrix<f64>, tol: f64) -> Result<(bool, f64), TableauError> {
    if !b.is_square() {
        return Err(TableauError::NotSymmetric);
    }
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let n = b.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (b[(i, j)] - b[(j, i)]).abs() > 1e-14 * scale {
                return Err(TableauError::NotSymmetric);
            }
        }
    }
    let lam = min_eigenvalue(b);
    Ok((lam >= -tol, lam))
}

fn det_exact(m: &[Vec<Rational>]) -> Rational {
    let n = m.len();
    let mut a: Vec<Vec<Rational>> = m.to_vec();
    let mut det = Rational::from_integer(1);
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !a[r][c].is_zero()) else {
            return Rational::zero();
        };
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in (c + 1)..n {
            if a[r][c].is_zero() {
                continue;
            }
            let f = a[r][c] / a[c][c];
            for cc in c..n {
                let delta = f * a[c][cc];
                a[r][cc] -= delta;
            }
        }
    }
    det
}

/// Exact PSD test: every principal minor is nonnegative.
///
/// Cost is `2^n` determinants, so this is meant for the small matrices that
/// tableaux produce (n <= 12).
pub fn is_psd_exact(b: &[Vec<Rational>]) -> Result<bool, TableauError> {
    let n = b.len();
    if b.iter().any(|r| r.len() != n) {
        return Err(TableauError::NotSymmetric);
    }
    for i in 0..n {
        for j in 0..i {
            if b[i][j] != b[j][i] {
                return Err(TableauError::NotSymmetric);
            }
        }
    }
    if n > 12 {
        return Err(TableauError::Dimension(format!(
            "exact PSD check limited to n <= 12, got {n}"
        )));
    }
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        let sub: Vec<Vec<Rational>> = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| b[i][j]).collect())
            .collect();
        if det_exact(&sub).is_negative() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Partition vectors used in the stability proofs of the shipped tableaux.
pub fn reference_partition_vector(name: &str) -> Option<Vec<Rational>> {
    let r = |n: i128, d: i128| Rational::new(n, d);
    match name {
        "Sch-1" => Some(vec![r(1, 1)]),
        "Sch-2" => Some(vec![r(3, 2), r(-1, 2), r(3, 2)]),
        "Sch-3" => Some(vec![r(4, 3), r(-1, 3), r(4, 3)]),
        "Sch-4" => Some([9, 0, -1, 9, 0, 9].iter().map(|&n| r(n, 8)).collect()),
        _ => None,
    }
}

/// Best rational approximation with denominator at most `max_den`.
fn approximate_rational(x: f64, max_den: i128) -> Rational {
    if !x.is_finite() {
        return Rational::zero();
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut rest = x;
    for _ in 0..64 {
        let a = rest.floor();
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = rest - a;
        if frac.abs() < 1e-15 {
            break;
        }
        rest = 1.0 / frac;
    }
    if k1 == 0 {
        return Rational::from_integer(x.round() as i128);
    }
    Rational::new(h1, k1)
}

struct Family {
    a: Vec<Vec<f64>>,
    particular: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl Family {
    fn min_eig(&self, t: &[f64]) -> f64 {
        let n = self.particular.len();
        let mut v = self.particular.clone();
        for (tk, bk) in t.iter().zip(&self.basis) {
            for (vi, bi) in v.iter_mut().zip(bk) {
                *vi += tk * bi;
            }
        }
        let b = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (v[i] * self.a[i][j] + self.a[j][i] * v[j])
        });
        min_eigenvalue(&b)
    }
}

/// Searches the unit-partition family for a vector whose certificate is PSD.
///
/// The family is parameterized by the free coordinates of `v`; a rational grid
/// on `[-2, 2]` is scanned, the best point is refined by a compass search and
/// the refined point is snapped back to nearby rationals. Returns the best
/// certificate found if its smallest eigenvalue is at least `-PSD_TOLERANCE`.
pub fn find_partition_vector(a: &[Vec<Rational>], nu: usize) -> Option<StabilityCertificate> {
    let system = unit_partition_system(nu);
    let (particular, _free, basis) = system.solution_family();
    if a.len() != particular.len() {
        return None;
    }
    if basis.is_empty() {
        return build_certificate(a, &particular)
            .ok()
            .filter(|c| c.is_psd());
    }
    let family = Family {
        a: a.iter().map(|r| r.iter().map(to_f64).collect()).collect(),
        particular: particular.iter().map(to_f64).collect(),
        basis: basis
            .iter()
            .map(|b| b.iter().map(to_f64).collect())
            .collect(),
    };
    let dim = basis.len();
    let den = [24i128, 12, 8, 6, 4, 3, 2, 1]
        .into_iter()
        .find(|&d| ((4 * d + 1) as f64).powi(dim as i32) <= 60_000.0)
        .unwrap_or(1);
    let span = 2 * den;
    let count = (2 * span + 1) as usize;

    let mut best_idx = vec![0i128; dim];
    let mut best_val = f64::NEG_INFINITY;
    let mut idx = vec![-span; dim];
    let mut t = vec![0.0; dim];
    let total = count.pow(dim as u32);
    for _ in 0..total {
        for (tk, &ik) in t.iter_mut().zip(&idx) {
            *tk = ik as f64 / den as f64;
        }
        let val = family.min_eig(&t);
        if val > best_val {
            best_val = val;
            best_idx.clone_from(&idx);
        }
        for ik in idx.iter_mut() {
            *ik += 1;
            if *ik <= span {
                break;
            }
            *ik = -span;
        }
    }

    let mut point: Vec<f64> = best_idx.iter().map(|&i| i as f64 / den as f64).collect();
    let mut value = best_val;
    let mut step = 0.5 / den as f64;
    while step > 1e-10 {
        let mut improved = false;
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                let mut trial = point.clone();
                trial[k] += sign * step;
                let val = family.min_eig(&trial);
                if val > value {
                    value = val;
                    point = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let to_v = |ts: &[Rational]| -> Vec<Rational> {
        let mut v = particular.clone();
        for (tk, bk) in ts.iter().zip(&basis) {
            for (vi, bi) in v.iter_mut().zip(bk) {
                *vi += *tk * *bi;
            }
        }
        v
    };
    let grid_t: Vec<Rational> = best_idx.iter().map(|&i| Rational::new(i, den)).collect();
    let mut candidates = vec![to_v(&grid_t)];
    for max_den in [12, 100, 1000] {
        let snapped: Vec<Rational> = point
            .iter()
            .map(|&x| approximate_rational(x, max_den))
            .collect();
        candidates.push(to_v(&snapped));
    }
    candidates
        .into_iter()
        .filter_map(|v| build_certificate(a, &v).ok())
        .max_by(|x, y| x.min_eigenvalue.total_cmp(&y.min_eigenvalue))
        .filter(StabilityCertificate::is_psd)
}
