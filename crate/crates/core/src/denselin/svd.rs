//! Singular values by one-sided Jacobi and symmetric eigenvalues by cyclic
//! Jacobi, plus a dense Cholesky used for symmetric-definite pencils.

use super::matrix::{CMatrix, DenseMatrix};
use crate::error::{Error, Result};

/// Singular values in decreasing order (one-sided Jacobi on the columns).
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    // operate on columns of the taller orientation
    let mut u = if m >= n { a.clone() } else { a.transpose() };
    let (m, n) = (m.max(n), m.min(n));
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| u.column(j)).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += cp[i] * cp[i];
                        be += cq[i] * cq[i];
                        ga += cp[i] * cq[i];
                    }
                    (al, be, ga)
                };
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for i in 0..m {
                    let (x, y) = (cp[i], cq[i]);
                    cp[i] = c * x - s * y;
                    cq[i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    for (j, c) in cols.iter().enumerate() {
        u.set_column(j, c);
    }
    let mut s: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral condition number `σ_max / σ_min`; `+∞` for singular input.
pub fn cond_2norm(a: &DenseMatrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Condition number of a complex matrix via its real embedding.
pub fn cond_2norm_complex(a: &CMatrix) -> f64 {
    cond_2norm(&a.real_embedding())
}

/// Eigenvalues of a symmetric matrix in increasing order (cyclic Jacobi).
pub fn sym_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.symmetric_part();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (x, y) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * x - s * y;
                    m[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * x - s * y;
                    m[(q, k)] = s * x + c * y;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Dense Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > 0.0) {
            return Err(Error::Definiteness { index: j, value: s });
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Eigenvalues of the symmetric-definite pencil `A x = λ B x`, increasing.
pub fn sym_generalized_eigenvalues(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    let l = cholesky(b)?;
    let n = a.rows();
    // C = L⁻¹ A L⁻ᵀ by forward substitution on columns, then rows
    let fwd = |m: &DenseMatrix| {
        let mut out = m.clone();
        for j in 0..n {
            for i in 0..n {
                let mut s = out[(i, j)];
                for k in 0..i {
                    s -= l[(i, k)] * out[(k, j)];
                }
                out[(i, j)] = s / l[(i, i)];
            }
        }
        out
    };
    let c = fwd(&fwd(a).transpose());
    Ok(sym_eigenvalues(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::C64;

    #[test]
    fn condition_numbers_of_simple_matrices() {
        assert!((cond_2norm(&DenseMatrix::identity(4)) - 1.0).abs() < 1e-15);
        assert!((cond_2norm(&DenseMatrix::diag(&[10.0, 0.1])) - 100.0).abs() < 1e-12);
        assert_eq!(
            cond_2norm(&DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]])),
            f64::INFINITY
        );
        let z = CMatrix::diag(&[C64::new(0.0, 3.0), C64::new(1.0, 0.0)]);
        assert!((cond_2norm_complex(&z) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_values_match_symmetric_eigenvalues() {
        let a = DenseMatrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, -1.0],
            vec![3.0, 0.0, 1.0],
            vec![0.5, 0.5, 0.5],
        ]);
        let s = singular_values(&a);
        let ev = sym_eigenvalues(&a.transpose().matmul(&a));
        for (si, ei) in s.iter().rev().zip(&ev) {
            assert!((si * si - ei).abs() < 1e-12);
        }
    }

    #[test]
    fn generalized_symmetric_pencil() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, -1.0]]);
        let b = DenseMatrix::diag(&[1.0, 4.0]);
        let ev = sym_generalized_eigenvalues(&a, &b).unwrap();
        // det(A - λB) = (2-λ)(-1-4λ) - 1 = 4λ² - 7λ - 3
        let disc = (49.0f64 + 48.0).sqrt();
        assert!((ev[0] - (7.0 - disc) / 8.0).abs() < 1e-13);
        assert!((ev[1] - (7.0 + disc) / 8.0).abs() < 1e-13);
    }
}
