//! Tableau construction from interpolatory quadrature.
//!
//! Each selected pair `μ[φ_i, φ_j]` is treated as a sample of the integrand at
//! the midpoint `(c_i + c_j)/2`. Row `i` integrates the Lagrange interpolant of
//! those samples over `[0, c_i]`; caller-supplied zero-sum corrections are then
//! added row by row.

use num_traits::{One, Zero};

use super::{pair_count, pair_index, DvdTableau, PairIndex, Rational, TableauError};

fn poly_mul_linear(p: &[Rational], root: Rational) -> Vec<Rational> {
    // p(t) * (t - root)
    let mut out = vec![Rational::zero(); p.len() + 1];
    for (k, c) in p.iter().enumerate() {
        out[k + 1] += *c;
        out[k] -= *c * root;
    }
    out
}

fn poly_integral(p: &[Rational], a: Rational, b: Rational) -> Rational {
    let mut total = Rational::zero();
    let (mut pa, mut pb) = (a, b);
    for (k, c) in p.iter().enumerate() {
        let n = Rational::from_integer(k as i128 + 1);
        total += *c * (pb - pa) / n;
        pa *= a;
        pb *= b;
    }
    total
}

/// `w_i = ∫_a^b l_i(t) dt` for the Lagrange basis on `nodes`.
pub fn lagrange_weights(
    nodes: &[Rational],
    a: Rational,
    b: Rational,
) -> Result<Vec<Rational>, TableauError> {
    if a >= b {
        return Err(TableauError::EmptyInterval);
    }
    for (i, x) in nodes.iter().enumerate() {
        if nodes[..i].contains(x) {
            return Err(TableauError::DuplicateNode(*x));
        }
    }
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut poly = vec![Rational::one()];
            let mut denom = Rational::one();
            for (j, &xj) in nodes.iter().enumerate() {
                if i != j {
                    poly = poly_mul_linear(&poly, xj);
                    denom *= xi - xj;
                }
            }
            poly_integral(&poly, a, b) / denom
        })
        .collect())
}

/// Builds a ν-stage tableau from stage times `nodes` (`c_1..c_ν`), the pairs
/// whose derivatives act as quadrature samples, and per-row corrections.
///
/// `corrections[r]` is added to row `r+1`; missing rows get no correction.
/// The claimed order is one more than the polynomial degree integrated exactly
/// over `[0, 1]` by the final row.
pub fn construct_tableau(
    nu: usize,
    nodes: &[Rational],
    pair_selection: &[PairIndex],
    corrections: &[Vec<Rational>],
) -> Result<DvdTableau, TableauError> {
    if nodes.len() != nu {
        return Err(TableauError::Dimension(format!(
            "{} nodes for nu={nu}",
            nodes.len()
        )));
    }
    let width = pair_count(nu);
    if corrections.len() > nu || corrections.iter().any(|c| c.len() != width) {
        return Err(TableauError::Dimension(format!(
            "corrections must be at most {nu} vectors of length {width}"
        )));
    }
    if pair_selection.is_empty() {
        return Err(TableauError::Dimension("empty pair selection".into()));
    }
    let stage_time = |s: usize| {
        if s == 0 {
            Rational::zero()
        } else {
            nodes[s - 1]
        }
    };
    let mut columns = Vec::with_capacity(pair_selection.len());
    let mut samples = Vec::with_capacity(pair_selection.len());
    for p in pair_selection {
        columns.push(pair_index(p.i, p.j, nu)? - 1);
        samples.push((stage_time(p.i) + stage_time(p.j)) / Rational::from_integer(2));
    }
    let mut rows = Vec::with_capacity(nu);
    for (r, &c) in nodes.iter().enumerate() {
        let w = lagrange_weights(&samples, Rational::zero(), c)?;
        let mut row = vec![Rational::zero(); width];
        for (&col, wk) in columns.iter().zip(w) {
            row[col] += wk;
        }
        if let Some(corr) = corrections.get(r) {
            for (x, d) in row.iter_mut().zip(corr) {
                *x += *d;
            }
        }
        rows.push(row);
    }

    // Degree of exactness of the last row, reading each column as a sample at
    // its pair midpoint.
    let all_times: Vec<Rational> = super::pairs(nu)
        .into_iter()
        .map(|p| (stage_time(p.i) + stage_time(p.j)) / Rational::from_integer(2))
        .collect();
    let last = &rows[nu - 1];
    let end = nodes[nu - 1];
    let mut degree = 0u32;
    for k in 0..=(2 * width as u32 + 2) {
        let approx: Rational = last
            .iter()
            .zip(&all_times)
            .map(|(w, t)| *w * num_traits::pow(*t, k as usize))
            .sum();
        let exact = num_traits::pow(end, k as usize + 1) / Rational::from_integer(k as i128 + 1);
        if approx != exact {
            break;
        }
        degree = k + 1;
    }
    DvdTableau::new("constructed", nodes.to_vec(), rows, degree.max(1))
}

#[cfg(test)]
mod tests {
    use super::super::{builtin_tableau, expand_matrix, find_partition_vector, rat};
    use super::*;

    fn third_nodes() -> Vec<Rational> {
        vec![rat(1, 6), rat(1, 2), rat(5, 6)]
    }

    #[test]
    fn appendix_weight_table() {
        let n = third_nodes();
        assert_eq!(
            lagrange_weights(&n, rat(0, 1), rat(1, 3)).unwrap(),
            vec![rat(25, 72), rat(-1, 36), rat(1, 72)]
        );
        assert_eq!(
            lagrange_weights(&n, rat(0, 1), rat(2, 3)).unwrap(),
            vec![rat(13, 36), rat(5, 18), rat(1, 36)]
        );
        assert_eq!(
            lagrange_weights(&n, rat(0, 1), rat(1, 1)).unwrap(),
            vec![rat(3, 8), rat(1, 4), rat(3, 8)]
        );
        assert_eq!(
            lagrange_weights(&[rat(1, 2)], rat(0, 1), rat(1, 1)).unwrap(),
            vec![rat(1, 1)]
        );
    }

    #[test]
    fn weights_integrate_monomials_exactly() {
        let nodes = vec![rat(-1, 3), rat(1, 7), rat(2, 5), rat(9, 10), rat(3, 2)];
        let (a, b) = (rat(-1, 2), rat(4, 3));
        let w = lagrange_weights(&nodes, a, b).unwrap();
        for k in 0..nodes.len() {
            let quad: Rational = w
                .iter()
                .zip(&nodes)
                .map(|(wi, x)| *wi * num_traits::pow(*x, k))
                .sum();
            let exact = (num_traits::pow(b, k + 1) - num_traits::pow(a, k + 1))
                / Rational::from_integer(k as i128 + 1);
            assert_eq!(quad, exact, "degree {k}");
        }
    }

    #[test]
    fn weight_errors() {
        assert_eq!(
            lagrange_weights(&[rat(1, 2), rat(1, 2)], rat(0, 1), rat(1, 1)),
            Err(TableauError::DuplicateNode(rat(1, 2)))
        );
        assert_eq!(
            lagrange_weights(&[rat(1, 2)], rat(1, 1), rat(0, 1)),
            Err(TableauError::EmptyInterval)
        );
    }

    fn sch4_corrections() -> Vec<Vec<Rational>> {
        let z = rat(0, 1);
        vec![
            vec![z, z, rat(-1, 24), rat(1, 24), z, z],
            vec![z, z, rat(-1, 12), rat(1, 12), z, z],
            vec![z, z, rat(-1, 8), rat(1, 8), z, z],
        ]
    }

    #[test]
    fn reproduces_sch4() {
        let nodes = vec![rat(1, 3), rat(2, 3), rat(1, 1)];
        let sel = [
            PairIndex::new(1, 0),
            PairIndex::new(2, 1),
            PairIndex::new(3, 2),
        ];
        let t = construct_tableau(3, &nodes, &sel, &sch4_corrections()).unwrap();
        let s4 = builtin_tableau("Sch-4").unwrap();
        assert_eq!(t.rows, s4.rows);
        assert_eq!(t.nodes, s4.nodes);
        assert_eq!(t.order, 4);
    }

    #[test]
    fn reproduces_sch1() {
        let t = construct_tableau(1, &[rat(1, 1)], &[PairIndex::new(1, 0)], &[]).unwrap();
        assert_eq!(t.rows, builtin_tableau("Sch-1").unwrap().rows);
        assert_eq!(t.order, 2);
    }

    #[test]
    fn uncorrected_rows_keep_row_sums() {
        let nodes = vec![rat(1, 3), rat(2, 3), rat(1, 1)];
        let sel = [
            PairIndex::new(1, 0),
            PairIndex::new(2, 1),
            PairIndex::new(3, 2),
        ];
        let t = construct_tableau(3, &nodes, &sel, &[]).unwrap();
        for (row, c) in t.rows.iter().zip(&nodes) {
            assert_eq!(row.iter().copied().sum::<Rational>(), *c);
        }
        // Whatever the verdict, a returned certificate must be genuine.
        if let Some(c) = find_partition_vector(&expand_matrix(&t), 3) {
            assert!(c.is_psd());
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let sel = [PairIndex::new(1, 0)];
        assert!(construct_tableau(2, &[rat(1, 1)], &sel, &[]).is_err());
        assert!(construct_tableau(1, &[rat(1, 1)], &sel, &[vec![rat(0, 1); 3]]).is_err());
        let bad_pair = [PairIndex::new(1, 1)];
        assert!(construct_tableau(1, &[rat(1, 1)], &bad_pair, &[]).is_err());
        let unbalanced = vec![vec![rat(1, 10)]];
        assert!(matches!(
            construct_tableau(1, &[rat(1, 1)], &sel, &unbalanced),
            Err(TableauError::RowSum { .. })
        ));
    }
}
