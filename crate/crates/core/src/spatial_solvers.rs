//! Spatial subproblem solvers: shifted SPD solves `(K + γM) u = r` and
//! preconditioned MinRes for the real 2×2 block form of complex-shifted
//! systems.

use std::sync::Arc;

use crate::denselin::{dot, norm2, DenseMatrix};
use crate::error::{Error, Result};
use crate::sparse::{BandedCholesky, SparseMatrix};

/// Outcome of an iterative (or direct) solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Recomputed true relative residual `‖b − A x‖ / ‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpdMethod {
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    Cg,
}

/// `K + γ M` with `γ > 0`.
#[derive(Clone, Debug)]
pub struct ShiftedOperator {
    pub k: Arc<SparseMatrix>,
    pub m: Arc<SparseMatrix>,
    pub gamma: f64,
    matrix: SparseMatrix,
}

impl ShiftedOperator {
    pub fn new(k: Arc<SparseMatrix>, m: Arc<SparseMatrix>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Admissibility(format!("shift {gamma:e} must be positive")));
        }
        if k.n_rows() != m.n_rows() {
            return Err(Error::Dimension {
                expected: k.n_rows(),
                found: m.n_rows(),
            });
        }
        let matrix = k.linear_combination(1.0, &m, gamma);
        Ok(ShiftedOperator { k, m, gamma, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

#[derive(Clone, Debug)]
enum SpdKernel {
    Cholesky(BandedCholesky),
    Cg { diag_inv: Vec<f64> },
}

/// Prepared solver for one shifted operator; immutable and shareable.
#[derive(Clone, Debug)]
pub struct SpdSolver {
    op: ShiftedOperator,
    kernel: SpdKernel,
    tol: f64,
    max_iter: usize,
}

impl SpdSolver {
    pub fn new(op: ShiftedOperator, method: SpdMethod, tol: f64) -> Result<Self> {
        let kernel = match method {
            SpdMethod::Cholesky => SpdKernel::Cholesky(BandedCholesky::factor(op.matrix())?),
            SpdMethod::Cg => {
                let a = op.matrix();
                let mut diag_inv = Vec::with_capacity(a.n_rows());
                for i in 0..a.n_rows() {
                    let d = a.get(i, i);
                    if !(d > 0.0) {
                        return Err(Error::Definiteness { index: i, value: d });
                    }
                    diag_inv.push(1.0 / d);
                }
                SpdKernel::Cg { diag_inv }
            }
        };
        let max_iter = 10 * op.dim().max(10);
        Ok(SpdSolver {
            op,
            kernel,
            tol,
            max_iter,
        })
    }

    pub fn operator(&self) -> &ShiftedOperator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: rhs.len(),
            });
        }
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok((
                vec![0.0; n],
                SolveReport {
                    iterations: 0,
                    residual: 0.0,
                    converged: true,
                },
            ));
        }
        match &self.kernel {
            SpdKernel::Cholesky(ch) => {
                let x = ch.solve(rhs);
                let res = residual_norm(self.op.matrix(), &x, rhs) / bnorm;
                Ok((
                    x,
                    SolveReport {
                        iterations: 1,
                        residual: res,
                        converged: true,
                    },
                ))
            }
            SpdKernel::Cg { diag_inv } => self.cg(rhs, diag_inv, bnorm),
        }
    }

    fn cg(&self, b: &[f64], diag_inv: &[f64], bnorm: f64) -> Result<(Vec<f64>, SolveReport)> {
        let a = self.op.matrix();
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(diag_inv).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for it in 1..=self.max_iter {
            a.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Definiteness { index: it, value: pap });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm2(&r) <= self.tol * bnorm {
                let res = residual_norm(a, &x, b) / bnorm;
                return Ok((
                    x,
                    SolveReport {
                        iterations: it,
                        residual: res,
                        converged: true,
                    },
                ));
            }
            for i in 0..n {
                z[i] = r[i] * diag_inv[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Convergence {
            method: "CG",
            iterations: self.max_iter,
            residual: norm2(&r) / bnorm,
        })
    }
}

fn residual_norm(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    ax.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>().sqrt()
}

/// Solves `(K + γM) u = rhs`.
pub fn spd_solve(op: &ShiftedOperator, rhs: &[f64], tol: f64, method: SpdMethod) -> Result<(Vec<f64>, SolveReport)> {
    SpdSolver::new(op.clone(), method, tol)?.solve(rhs)
}

/// Preconditioned MINRES for a symmetric (possibly indefinite) operator with
/// an SPD preconditioner. Starts from zero; stops when the `P⁻¹`-norm of the
/// residual has been reduced by `tol`.
pub fn minres(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    apply_pinv: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        ));
    }
    let true_residual = |x: &[f64]| {
        let mut ax = vec![0.0; n];
        apply_a(x, &mut ax);
        b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<f64>>()
    };
    let mut r1 = b.to_vec();
    let mut y = apply_pinv(&r1)?;
    let beta1_sq = dot(&r1, &y);
    if beta1_sq < 0.0 {
        return Err(Error::Definiteness {
            index: 0,
            value: beta1_sq,
        });
    }
    let beta1 = beta1_sq.sqrt();
    if beta1 == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 1.0,
                converged: false,
            },
        ));
    }
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut av = vec![0.0; n];
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply_a(&v, &mut av);
        let mut yv = av.clone();
        if itn >= 2 {
            let f = beta / oldb;
            for i in 0..n {
                yv[i] -= f * r1[i];
            }
        }
        let alfa = dot(&v, &yv);
        let f = alfa / beta;
        for i in 0..n {
            yv[i] -= f * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2 = yv;
        y = apply_pinv(&r2)?;
        oldb = beta;
        let bsq = dot(&r2, &y);
        if bsq < 0.0 {
            return Err(Error::Definiteness { index: itn, value: bsq });
        }
        beta = bsq.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta);
        if gamma == 0.0 || !gamma.is_finite() {
            return Err(Error::Breakdown {
                method: "MINRES",
                iteration: itn,
            });
        }
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        let estimate_done = phibar <= tol * beta1;
        if estimate_done || itn % 25 == 0 {
            // guard against drift of the recurrence
            let r = true_residual(&x);
            let pr = apply_pinv(&r)?;
            let pnorm = dot(&r, &pr).max(0.0).sqrt();
            if pnorm <= tol * beta1 || (estimate_done && beta == 0.0) {
                return Ok((
                    x,
                    SolveReport {
                        iterations: itn,
                        residual: norm2(&r) / bnorm,
                        converged: true,
                    },
                ));
            }
        }
        if beta == 0.0 {
            break;
        }
    }
    let r = true_residual(&x);
    Err(Error::Convergence {
        method: "MINRES",
        iterations: max_iter,
        residual: norm2(&r) / bnorm,
    })
}

/// Preconditioner recipe for the 2×2 block systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreconditionerVariant {
    /// Symmetric pair `β₁ = −β₂ = −β` from a complex eigenvalue `α + iβ`:
    /// shift `α + |β|`, equal block scalars.
    Balanced,
    /// General `β₁β₂ < 0` from a real Schur block: shift `α + √|β₁β₂|`,
    /// block scalars `|β₂|`, `|β₁|`.
    Scaled,
}

/// Natural real form `[[K + αM, β₁M], [β₂M, K + αM]] (x, y) = (f, g)`.
#[derive(Clone, Debug)]
pub struct BlockSaddleOperator {
    pub k: Arc<SparseMatrix>,
    pub m: Arc<SparseMatrix>,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl BlockSaddleOperator {
    /// Operator of `(K + λM) z = h` for `λ = α + iβ`, split into real and
    /// imaginary parts.
    pub fn from_complex_shift(k: Arc<SparseMatrix>, m: Arc<SparseMatrix>, alpha: f64, beta: f64) -> Self {
        BlockSaddleOperator {
            k,
            m,
            alpha,
            beta1: -beta,
            beta2: beta,
        }
    }

    pub fn n_x(&self) -> usize {
        self.k.n_rows()
    }

    fn scales(&self, variant: PreconditionerVariant) -> (f64, f64) {
        match variant {
            PreconditionerVariant::Balanced => (1.0, 1.0),
            PreconditionerVariant::Scaled => (self.beta2.abs(), self.beta1.abs()),
        }
    }

    /// Symmetric indefinite form acting on `(x, −y)`:
    /// `[[s₁A, −β₁s₁M], [s₂β₂M, −s₂A]]` with `A = K + αM` and block scalars `(s₁, s₂)`.
    fn apply_symmetric(&self, s: (f64, f64), u: &[f64], out: &mut [f64]) {
        let n = self.n_x();
        let (x, w) = u.split_at(n);
        let kx = self.k.matvec(x);
        let mx = self.m.matvec(x);
        let kw = self.k.matvec(w);
        let mw = self.m.matvec(w);
        let (o1, o2) = out.split_at_mut(n);
        for i in 0..n {
            let ax = kx[i] + self.alpha * mx[i];
            let aw = kw[i] + self.alpha * mw[i];
            o1[i] = s.0 * (ax - self.beta1 * mw[i]);
            o2[i] = s.1 * (self.beta2 * mx[i] - aw);
        }
    }

    /// Dense symmetric block matrix for the given variant (tests, analysis).
    pub fn symmetric_dense(&self, variant: PreconditionerVariant) -> DenseMatrix {
        let n = self.n_x();
        let s = self.scales(variant);
        let mut out = DenseMatrix::zeros(2 * n, 2 * n);
        let mut e = vec![0.0; 2 * n];
        let mut col = vec![0.0; 2 * n];
        for j in 0..2 * n {
            e[j] = 1.0;
            self.apply_symmetric(s, &e, &mut col);
            out.set_column(j, &col);
            e[j] = 0.0;
        }
        out
    }

    /// `N (x, y)` with the natural (nonsymmetric) block operator.
    pub fn apply_natural(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_x();
        let (kx, mx, ky, my) = (self.k.matvec(x), self.m.matvec(x), self.k.matvec(y), self.m.matvec(y));
        let mut f = vec![0.0; n];
        let mut g = vec![0.0; n];
        for i in 0..n {
            f[i] = kx[i] + self.alpha * mx[i] + self.beta1 * my[i];
            g[i] = self.beta2 * mx[i] + ky[i] + self.alpha * my[i];
        }
        (f, g)
    }
}

/// `diag(s₁ S, s₂ S)` with `S = K + (α + shift)M`, one factorization shared
/// by both blocks.
#[derive(Clone, Debug)]
pub struct BlockDiagPreconditioner {
    pub solver: Arc<SpdSolver>,
    pub scales: (f64, f64),
    pub variant: PreconditionerVariant,
}

impl BlockDiagPreconditioner {
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.solver.dim();
        let (a, b) = r.split_at(n);
        let (mut z1, _) = self.solver.solve(a)?;
        let (z2, _) = self.solver.solve(b)?;
        for v in z1.iter_mut() {
            *v /= self.scales.0;
        }
        z1.extend(z2.into_iter().map(|v| v / self.scales.1));
        Ok(z1)
    }

    pub fn dense(&self) -> DenseMatrix {
        let s = self.solver.operator().matrix().to_dense();
        let n = s.rows();
        let mut out = DenseMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self.scales.0 * s[(i, j)];
                out[(n + i, n + j)] = self.scales.1 * s[(i, j)];
            }
        }
        out
    }
}

/// Shift `s` of the preconditioner: `|β|` (balanced) or `√|β₁β₂|` (scaled).
pub fn preconditioner_shift(op: &BlockSaddleOperator, variant: PreconditionerVariant) -> f64 {
    match variant {
        PreconditionerVariant::Balanced => op.beta2.abs().max(op.beta1.abs()),
        PreconditionerVariant::Scaled => (op.beta1 * op.beta2).abs().sqrt(),
    }
}

pub fn make_preconditioner(
    op: &BlockSaddleOperator,
    variant: PreconditionerVariant,
    method: SpdMethod,
    inner_tol: f64,
) -> Result<BlockDiagPreconditioner> {
    if !(op.alpha > 0.0) {
        return Err(Error::Admissibility(format!(
            "real part {:e} must be positive",
            op.alpha
        )));
    }
    if variant == PreconditionerVariant::Balanced
        && (op.beta1 + op.beta2).abs() > 1e-12 * (op.beta1.abs() + op.beta2.abs())
    {
        return Err(Error::Parameter("the symmetric variant requires beta1 = -beta2".into()));
    }
    let shift = preconditioner_shift(op, variant);
    let sop = ShiftedOperator::new(op.k.clone(), op.m.clone(), op.alpha + shift)?;
    let scales = match variant {
        PreconditionerVariant::Balanced => (1.0, 1.0),
        PreconditionerVariant::Scaled if shift > 0.0 => op.scales(variant),
        PreconditionerVariant::Scaled => (1.0, 1.0),
    };
    Ok(BlockDiagPreconditioner {
        solver: Arc::new(SpdSolver::new(sop, method, inner_tol)?),
        scales,
        variant,
    })
}

/// Solves the natural block system `N (x, y) = (f, g)`.
///
/// For `β₁β₂ < 0` the rescaled symmetric form is solved by preconditioned
/// MINRES; for `β₁β₂ = 0` the system is block triangular and is solved by two
/// shifted SPD solves with `K + αM` (supplied by `base`).
pub fn minres_block_solve(
    op: &BlockSaddleOperator,
    prec: &BlockDiagPreconditioner,
    base: Option<&SpdSolver>,
    f: &[f64],
    g: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, SolveReport)> {
    let n = op.n_x();
    if f.len() != n || g.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: f.len().min(g.len()),
        });
    }
    let prod = op.beta1 * op.beta2;
    if prod > 0.0 {
        return Err(Error::Precondition(format!(
            "off-diagonal product {prod:e} must be negative"
        )));
    }
    if prod == 0.0 {
        let owned;
        let a = match base {
            Some(s) => s,
            None => {
                owned = SpdSolver::new(
                    ShiftedOperator::new(op.k.clone(), op.m.clone(), op.alpha)?,
                    SpdMethod::Cholesky,
                    tol,
                )?;
                &owned
            }
        };
        let (x, y, it) = if op.beta1 == 0.0 {
            let (x, r1) = a.solve(f)?;
            let mx = op.m.matvec(&x);
            let rhs: Vec<f64> = g.iter().zip(&mx).map(|(g, m)| g - op.beta2 * m).collect();
            let (y, r2) = a.solve(&rhs)?;
            (x, y, r1.iterations + r2.iterations)
        } else {
            let (y, r1) = a.solve(g)?;
            let my = op.m.matvec(&y);
            let rhs: Vec<f64> = f.iter().zip(&my).map(|(f, m)| f - op.beta1 * m).collect();
            let (x, r2) = a.solve(&rhs)?;
            (x, y, r1.iterations + r2.iterations)
        };
        let res = natural_residual(op, &x, &y, f, g);
        return Ok((
            x,
            y,
            SolveReport {
                iterations: it,
                residual: res,
                converged: true,
            },
        ));
    }
    let s = prec.scales;
    let mut b = Vec::with_capacity(2 * n);
    b.extend(f.iter().map(|v| v * s.0));
    b.extend(g.iter().map(|v| v * s.1));
    let apply = |u: &[f64], out: &mut [f64]| op.apply_symmetric(s, u, out);
    let pinv = |r: &[f64]| prec.apply(r);
    let max_iter = (4 * n).clamp(200, 5000);
    let (u, mut rep) = minres(&apply, &pinv, &b, tol, max_iter)?;
    let x = u[..n].to_vec();
    let y: Vec<f64> = u[n..].iter().map(|v| -v).collect();
    rep.residual = natural_residual(op, &x, &y, f, g);
    Ok((x, y, rep))
}

fn natural_residual(op: &BlockSaddleOperator, x: &[f64], y: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let (nf, ng) = op.apply_natural(x, y);
    let num: f64 = nf
        .iter()
        .zip(f)
        .chain(ng.iter().zip(g))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = f.iter().chain(g).map(|v| v * v).sum();
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}
