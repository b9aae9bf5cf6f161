//! Generalized eigenproblem `K z = λ M z` solved through `M⁻¹K`.

use super::lu::Lu;
use super::matrix::{cnorm2, CMatrix, DenseMatrix};
use super::schur::{pair_unitary, real_schur, RealSchur, SchurBlock};
use crate::complex::C64;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: C64,
    /// Unit-norm eigenvector `x + i y`.
    pub z: Vec<C64>,
}

impl EigenPair {
    pub fn alpha(&self) -> f64 {
        self.lambda.re
    }

    pub fn beta(&self) -> f64 {
        self.lambda.im
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.z.iter().map(|c| c.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.z.iter().map(|c| c.im).collect()
    }

    /// `‖K z − λ M z‖`.
    pub fn residual(&self, k: &DenseMatrix, m: &DenseMatrix) -> f64 {
        let kz = k.to_complex().mul_vec(&self.z);
        let mz = m.to_complex().mul_vec(&self.z);
        let r: Vec<C64> = kz.iter().zip(&mz).map(|(&a, &b)| a - self.lambda * b).collect();
        cnorm2(&r)
    }
}

/// Full eigen-decomposition of `M⁻¹K`: pairs plus the eigenvector matrix `X`
/// (columns in the same order as `pairs`).
#[derive(Clone, Debug)]
pub struct GeneralizedEigen {
    pub pairs: Vec<EigenPair>,
    pub x: CMatrix,
    pub schur: RealSchur,
}

impl GeneralizedEigen {
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.pairs.iter().map(|p| p.lambda).collect()
    }

    pub fn min_real_part(&self) -> f64 {
        self.pairs.iter().map(|p| p.alpha()).fold(f64::INFINITY, f64::min)
    }
}

/// `M⁻¹ K` via an LU factorization of `M`.
pub fn standard_form(k: &DenseMatrix, m: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(Lu::factor(m)?.solve_matrix(k))
}

/// All eigenpairs of `K z = λ M z`; conjugate pairs are adjacent with the
/// positive imaginary part first and conjugate eigenvectors.
pub fn generalized_eig(k: &DenseMatrix, m: &DenseMatrix) -> Result<GeneralizedEigen> {
    let a = standard_form(k, m)?;
    let rs = real_schur(&a)?;
    let v = quasi_triangular_eigenvectors(&rs.t, &rs.blocks);
    let qc = rs.q.to_complex();
    let mut x = qc.matmul(&v);
    let n = x.rows();
    let mut pairs = Vec::with_capacity(n);
    let lambdas = rs.eigenvalues();
    for j in 0..n {
        let mut col = x.column(j);
        let nr = cnorm2(&col);
        for c in col.iter_mut() {
            *c = c.scale(1.0 / nr);
        }
        x.set_column(j, &col);
        pairs.push(EigenPair {
            lambda: lambdas[j],
            z: col,
        });
    }
    Ok(GeneralizedEigen { pairs, x, schur: rs })
}

/// Eigenvectors of a standardized quasi-triangular matrix by back-substitution.
pub(crate) fn quasi_triangular_eigenvectors(t: &DenseMatrix, blocks: &[SchurBlock]) -> CMatrix {
    let n = t.rows();
    let tc = t.to_complex();
    let tnorm = t.norm_inf().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let mut v = CMatrix::zeros(n, n);
    for (bi, blk) in blocks.iter().enumerate() {
        let k = blk.start();
        let (lambda, mut vec) = match *blk {
            SchurBlock::Real(_) => {
                let mut e = vec![C64::ZERO; n];
                e[k] = C64::ONE;
                (C64::real(t[(k, k)]), e)
            }
            SchurBlock::Pair(_) => {
                let (b, c) = (t[(k, k + 1)], t[(k + 1, k)]);
                let u = pair_unitary(b, c);
                let mut e = vec![C64::ZERO; n];
                e[k] = u[0][0];
                e[k + 1] = u[1][0];
                let w = (b * c).abs().sqrt();
                (C64::new(t[(k, k)], w), e)
            }
        };
        // back-substitute through the blocks above
        for prev in blocks[..bi].iter().rev() {
            let j = prev.start();
            let rhs = |row: usize, vec: &[C64]| {
                let mut s = C64::ZERO;
                for m in j + prev.size()..n {
                    s -= tc[(row, m)] * vec[m];
                }
                s
            };
            match *prev {
                SchurBlock::Real(_) => {
                    let mut d = tc[(j, j)] - lambda;
                    if d.abs() < small {
                        d = C64::real(small);
                    }
                    vec[j] = rhs(j, &vec) / d;
                }
                SchurBlock::Pair(_) => {
                    let r0 = rhs(j, &vec);
                    let r1 = rhs(j + 1, &vec);
                    let a00 = tc[(j, j)] - lambda;
                    let a01 = tc[(j, j + 1)];
                    let a10 = tc[(j + 1, j)];
                    let a11 = tc[(j + 1, j + 1)] - lambda;
                    let mut det = a00 * a11 - a01 * a10;
                    if det.abs() < small * small {
                        det = C64::real(small * small);
                    }
                    vec[j] = (r0 * a11 - a01 * r1) / det;
                    vec[j + 1] = (a00 * r1 - a10 * r0) / det;
                }
            }
        }
        v.set_column(k, &vec);
        if let SchurBlock::Pair(_) = blk {
            let conj: Vec<C64> = vec.iter().map(|z| z.conj()).collect();
            v.set_column(k + 1, &conj);
        }
    }
    v
}

/// Quadratic forms entering the closed-form real part of a generalized
/// eigenvalue `λ = α + iβ` with eigenvector `x + iy`:
/// `a = xᵀKx + yᵀKy`, `b = xᵀMx + yᵀMy`, `c = xᵀ(M−Mᵀ)y`, `d = xᵀ(K−Kᵀ)y`,
/// and `α = (ab + cd)/(b² + c²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaForms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AlphaForms {
    pub fn compute(k: &DenseMatrix, m: &DenseMatrix, x: &[f64], y: &[f64]) -> Self {
        let a = k.bilinear(x, x) + k.bilinear(y, y);
        let b = m.bilinear(x, x) + m.bilinear(y, y);
        let c = m.bilinear(x, y) - m.bilinear(y, x);
        let d = k.bilinear(x, y) - k.bilinear(y, x);
        AlphaForms { a, b, c, d }
    }

    pub fn alpha(&self) -> f64 {
        (self.a * self.b + self.c * self.d) / (self.b * self.b + self.c * self.c)
    }
}
