//! Real Schur form by Householder reduction and Francis double-shift QR,
//! standardization of 2×2 blocks, and the complex Schur form derived from it.

use super::matrix::{CMatrix, DenseMatrix};
use crate::complex::C64;
use crate::error::{Error, Result};

const DEFLATION_EPS: f64 = 1e-14;

/// Diagonal block of a quasi-triangular matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchurBlock {
    /// Real eigenvalue at `T[k, k]`.
    Real(usize),
    /// Complex-conjugate pair on `T[k..k+2, k..k+2]`.
    Pair(usize),
}

impl SchurBlock {
    pub fn start(&self) -> usize {
        match *self {
            SchurBlock::Real(k) | SchurBlock::Pair(k) => k,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            SchurBlock::Real(_) => 1,
            SchurBlock::Pair(_) => 2,
        }
    }
}

/// `A = Q T Qᵀ` with orthogonal `Q` and quasi-upper-triangular `T` whose
/// 2×2 blocks have the form `[[α, β₁], [β₂, α]]`, `β₁β₂ < 0`.
#[derive(Clone, Debug)]
pub struct RealSchur {
    pub q: DenseMatrix,
    pub t: DenseMatrix,
    pub blocks: Vec<SchurBlock>,
}

impl RealSchur {
    /// Eigenvalues in diagonal order; pairs as `(α + iω, α − iω)`.
    pub fn eigenvalues(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.t.rows());
        for b in &self.blocks {
            match *b {
                SchurBlock::Real(k) => out.push(C64::real(self.t[(k, k)])),
                SchurBlock::Pair(k) => {
                    let a = self.t[(k, k)];
                    let w = (self.t[(k, k + 1)] * self.t[(k + 1, k)]).abs().sqrt();
                    out.push(C64::new(a, w));
                    out.push(C64::new(a, -w));
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.q.matmul(&self.t).matmul(&self.q.transpose())
    }
}

/// `A = Q T Qᴴ` with unitary `Q` and upper-triangular `T`.
#[derive(Clone, Debug)]
pub struct ComplexSchur {
    pub q: CMatrix,
    pub t: CMatrix,
}

impl ComplexSchur {
    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.t.rows()).map(|i| self.t[(i, i)]).collect()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.q.matmul(&self.t).matmul(&self.q.adjoint())
    }
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Standardized 2×2 block and the rotation `(cs, sn)` with
/// `[[a,b],[c,d]] = R [[aa,bb],[cc,dd]] Rᵀ`, `R = [[cs,-sn],[sn,cs]]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lanv2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub cs: f64,
    pub sn: f64,
}

pub(crate) fn lanv2(mut a: f64, mut b: f64, mut c: f64, mut d: f64) -> Lanv2 {
    let eps = f64::EPSILON;
    let (mut cs, mut sn);
    if c == 0.0 {
        cs = 1.0;
        sn = 0.0;
    } else if b == 0.0 {
        cs = 0.0;
        sn = 1.0;
        std::mem::swap(&mut a, &mut d);
        b = -c;
        c = 0.0;
    } else if a - d == 0.0 && sign(b) != sign(c) {
        cs = 1.0;
        sn = 0.0;
    } else {
        let temp = a - d;
        let mut p = 0.5 * temp;
        let bcmax = b.abs().max(c.abs());
        let bcmis = b.abs().min(c.abs()) * sign(b) * sign(c);
        let scale = p.abs().max(bcmax);
        let mut z = p / scale * p + bcmax / scale * bcmis;
        if z >= 4.0 * eps {
            z = p + sign(p) * scale.sqrt() * z.sqrt();
            a = d + z;
            d -= bcmax / z * bcmis;
            let tau = c.hypot(z);
            cs = z / tau;
            sn = c / tau;
            b -= c;
            c = 0.0;
        } else {
            let sigma = b + c;
            let tau = sigma.hypot(temp);
            cs = (0.5 * (1.0 + sigma.abs() / tau)).sqrt();
            sn = -(p / (tau * cs)) * sign(sigma);
            let aa = a * cs + b * sn;
            let bb = -a * sn + b * cs;
            let cc = c * cs + d * sn;
            let dd = -c * sn + d * cs;
            a = aa * cs + cc * sn;
            b = bb * cs + dd * sn;
            c = -aa * sn + cc * cs;
            d = -bb * sn + dd * cs;
            let temp = 0.5 * (a + d);
            a = temp;
            d = temp;
            if c != 0.0 {
                if b != 0.0 {
                    if sign(b) == sign(c) {
                        let sab = b.abs().sqrt();
                        let sac = c.abs().sqrt();
                        p = sign(c) * sab * sac;
                        let tau = 1.0 / (b + c).abs().sqrt();
                        a = temp + p;
                        d = temp - p;
                        b -= c;
                        c = 0.0;
                        let cs1 = sab * tau;
                        let sn1 = sac * tau;
                        let t = cs * cs1 - sn * sn1;
                        sn = cs * sn1 + sn * cs1;
                        cs = t;
                    }
                } else {
                    b = -c;
                    c = 0.0;
                    let t = cs;
                    cs = -sn;
                    sn = t;
                }
            }
        }
    }
    Lanv2 { a, b, c, d, cs, sn }
}

/// Applies `T ← Rᵀ T R`, `Q ← Q R` on rows/columns `k, k+1`.
fn rotate(t: &mut DenseMatrix, q: &mut DenseMatrix, k: usize, cs: f64, sn: f64) {
    let n = t.rows();
    for j in 0..n {
        let (x, y) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = cs * x + sn * y;
        t[(k + 1, j)] = -sn * x + cs * y;
    }
    for i in 0..n {
        let (x, y) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = cs * x + sn * y;
        t[(i, k + 1)] = -sn * x + cs * y;
    }
    for i in 0..q.rows() {
        let (x, y) = (q[(i, k)], q[(i, k + 1)]);
        q[(i, k)] = cs * x + sn * y;
        q[(i, k + 1)] = -sn * x + cs * y;
    }
}

/// Brings the 2×2 block at `k` to the form `[[α, β₁], [β₂, α]]` with
/// `β₁β₂ < 0` by a Givens rotation, updating `Q` so that `Q T Qᵀ` is unchanged.
pub fn normalize_2x2(t: &mut DenseMatrix, q: &mut DenseMatrix, k: usize) -> Result<()> {
    let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        return Err(Error::Precondition(format!(
            "block at {k} has discriminant {disc:e} >= 0"
        )));
    }
    let s = lanv2(a, b, c, d);
    if s.c == 0.0 {
        return Err(Error::DegenerateBlock(k));
    }
    rotate(t, q, k, s.cs, s.sn);
    t[(k, k)] = s.a;
    t[(k, k + 1)] = s.b;
    t[(k + 1, k)] = s.c;
    t[(k + 1, k + 1)] = s.d;
    Ok(())
}

fn hessenberg(t: &mut DenseMatrix, q: &mut DenseMatrix) {
    let n = t.rows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_norm: f64 = (k + 1..n).map(|i| t[(i, k)] * t[(i, k)]).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let x0 = t[(k + 1, k)];
        let alpha = -sign(x0) * alpha_norm;
        let mut v: Vec<f64> = (k + 1..n).map(|i| t[(i, k)]).collect();
        v[0] -= alpha;
        let vn2: f64 = v.iter().map(|x| x * x).sum();
        if vn2 == 0.0 {
            continue;
        }
        // T ← (I - 2vvᵀ/vᵀv) T
        for j in 0..n {
            let s: f64 = (0..v.len()).map(|i| v[i] * t[(k + 1 + i, j)]).sum::<f64>() * 2.0 / vn2;
            for (i, vi) in v.iter().enumerate() {
                t[(k + 1 + i, j)] -= s * vi;
            }
        }
        // T ← T (I - 2vvᵀ/vᵀv), Q likewise
        for m in [&mut *t, &mut *q] {
            for i in 0..n {
                let s: f64 = (0..v.len()).map(|j| m[(i, k + 1 + j)] * v[j]).sum::<f64>() * 2.0 / vn2;
                for (j, vj) in v.iter().enumerate() {
                    m[(i, k + 1 + j)] -= s * vj;
                }
            }
        }
        for i in k + 2..n {
            t[(i, k)] = 0.0;
        }
    }
}

/// Householder reflector `P = I - 2vvᵀ/vᵀv` with `P x = ±‖x‖ e₁`, returned as
/// `(v, 2/vᵀv)`; `None` when `x` already lies along `e₁`.
fn reflector(x: &[f64]) -> Option<(Vec<f64>, f64)> {
    let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nrm == 0.0 || x[1..].iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut v = x.to_vec();
    v[0] += sign(x[0]) * nrm;
    let vn2: f64 = v.iter().map(|a| a * a).sum();
    Some((v, 2.0 / vn2))
}

fn apply_left(t: &mut DenseMatrix, rows: usize, v: &[f64], beta: f64, cols: std::ops::Range<usize>) {
    for j in cols {
        let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * t[(rows + i, j)]).sum::<f64>() * beta;
        for (i, vi) in v.iter().enumerate() {
            t[(rows + i, j)] -= s * vi;
        }
    }
}

fn apply_right(m: &mut DenseMatrix, cols: usize, v: &[f64], beta: f64, rows: std::ops::Range<usize>) {
    for i in rows {
        let s: f64 = v.iter().enumerate().map(|(j, vj)| m[(i, cols + j)] * vj).sum::<f64>() * beta;
        for (j, vj) in v.iter().enumerate() {
            m[(i, cols + j)] -= s * vj;
        }
    }
}

/// Real Schur decomposition `A = Q T Qᵀ`.
pub fn real_schur(a: &DenseMatrix) -> Result<RealSchur> {
    if !a.is_square() {
        return Err(Error::Dimension {
            expected: a.rows(),
            found: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::Parameter("matrix has non-finite entries".into()));
    }
    let n = a.rows();
    let mut t = a.clone();
    let mut q = DenseMatrix::identity(n);
    hessenberg(&mut t, &mut q);

    let max_sweeps = 30 * n.max(1);
    let mut total = 0usize;
    let mut iter = 0usize;
    let mut hi = n as isize - 1;
    while hi >= 1 {
        let h = hi as usize;
        let mut l = h;
        while l > 0 {
            let s = t[(l - 1, l - 1)].abs() + t[(l, l)].abs();
            let s = if s == 0.0 { t.norm_inf() } else { s };
            if t[(l, l - 1)].abs() <= DEFLATION_EPS * s {
                t[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }
        if l == h {
            hi -= 1;
            iter = 0;
            continue;
        }
        if l + 1 == h {
            let s = lanv2(t[(l, l)], t[(l, h)], t[(h, l)], t[(h, h)]);
            rotate(&mut t, &mut q, l, s.cs, s.sn);
            t[(l, l)] = s.a;
            t[(l, h)] = s.b;
            t[(h, l)] = s.c;
            t[(h, h)] = s.d;
            hi -= 2;
            iter = 0;
            continue;
        }
        total += 1;
        iter += 1;
        if total > max_sweeps {
            return Err(Error::Convergence {
                method: "real Schur QR",
                iterations: total,
                residual: t[(h, h - 1)].abs(),
            });
        }
        let (s, p) = if iter == 10 || iter == 20 {
            let ss = t[(h, h - 1)].abs() + t[(h - 1, h - 2)].abs();
            (1.5 * ss, 0.5625 * ss * ss)
        } else {
            (
                t[(h - 1, h - 1)] + t[(h, h)],
                t[(h - 1, h - 1)] * t[(h, h)] - t[(h - 1, h)] * t[(h, h - 1)],
            )
        };
        let mut x = t[(l, l)] * t[(l, l)] + t[(l, l + 1)] * t[(l + 1, l)] - s * t[(l, l)] + p;
        let mut y = t[(l + 1, l)] * (t[(l, l)] + t[(l + 1, l + 1)] - s);
        let mut z = t[(l + 1, l)] * t[(l + 2, l + 1)];
        for k in l..h - 1 {
            if let Some((v, beta)) = reflector(&[x, y, z]) {
                let c0 = if k > l { k - 1 } else { l };
                apply_left(&mut t, k, &v, beta, c0..n);
                let r1 = (k + 4).min(h + 1);
                apply_right(&mut t, k, &v, beta, 0..r1);
                apply_right(&mut q, k, &v, beta, 0..n);
                if k > l {
                    t[(k + 1, k - 1)] = 0.0;
                    t[(k + 2, k - 1)] = 0.0;
                }
            }
            x = t[(k + 1, k)];
            y = t[(k + 2, k)];
            if k + 3 <= h {
                z = t[(k + 3, k)];
            }
        }
        if let Some((v, beta)) = reflector(&[x, y]) {
            let k = h - 1;
            apply_left(&mut t, k, &v, beta, (k - 1).max(l)..n);
            apply_right(&mut t, k, &v, beta, 0..h + 1);
            apply_right(&mut q, k, &v, beta, 0..n);
            if k > l {
                t[(k + 1, k - 1)] = 0.0;
            }
        }
    }
    // clean below the quasi-diagonal
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            t[(i, j)] = 0.0;
        }
    }
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            blocks.push(SchurBlock::Pair(k));
            k += 2;
        } else {
            blocks.push(SchurBlock::Real(k));
            k += 1;
        }
    }
    Ok(RealSchur { q, t, blocks })
}

/// Unitary `U` with `Uᴴ [[α, b], [c, α]] U = [[α + iω, ·], [0, α − iω]]`.
pub(crate) fn pair_unitary(b: f64, c: f64) -> [[C64; 2]; 2] {
    let w = (b * c).abs().sqrt();
    let r = b.hypot(w);
    // columns: (b, iω)/r and (iω, b)/r
    [
        [C64::real(b / r), C64::new(0.0, w / r)],
        [C64::new(0.0, w / r), C64::real(b / r)],
    ]
}

/// Complex Schur decomposition obtained from the real Schur form by
/// triangularizing each 2×2 block with a unitary 2×2 transformation.
pub fn complex_schur(a: &DenseMatrix) -> Result<ComplexSchur> {
    Ok(complex_from_real(&real_schur(a)?))
}

pub fn complex_from_real(rs: &RealSchur) -> ComplexSchur {
    let n = rs.t.rows();
    let mut t = rs.t.to_complex();
    let mut q = rs.q.to_complex();
    for blk in &rs.blocks {
        if let SchurBlock::Pair(k) = *blk {
            let u = pair_unitary(rs.t[(k, k + 1)], rs.t[(k + 1, k)]);
            // T ← Uᴴ T on rows k, k+1
            for j in 0..n {
                let (x, y) = (t[(k, j)], t[(k + 1, j)]);
                t[(k, j)] = u[0][0].conj() * x + u[1][0].conj() * y;
                t[(k + 1, j)] = u[0][1].conj() * x + u[1][1].conj() * y;
            }
            for m in [&mut t, &mut q] {
                for i in 0..n {
                    let (x, y) = (m[(i, k)], m[(i, k + 1)]);
                    m[(i, k)] = x * u[0][0] + y * u[1][0];
                    m[(i, k + 1)] = x * u[0][1] + y * u[1][1];
                }
            }
            t[(k + 1, k)] = C64::ZERO;
        }
    }
    ComplexSchur { q, t }
}
