//! Univariate and tensor-product B-spline bases, Gauss quadrature on knot
//! spans and knot-insertion (refinement) matrices.

use crate::denselin::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Non-decreasing knot sequence with open ends (end multiplicity `p + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Open uniform knot vector with `n_elements` equal spans on `[a, b]`.
    pub fn uniform(degree: usize, n_elements: usize, a: f64, b: f64) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Parameter(format!("degree must be >= 1, got {degree}")));
        }
        if n_elements < 1 {
            return Err(Error::Parameter("at least one element is required".into()));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Parameter(format!("invalid interval [{a}, {b}]")));
        }
        let mut knots = vec![a; degree + 1];
        for k in 1..n_elements {
            knots.push(a + (b - a) * k as f64 / n_elements as f64);
        }
        knots.extend(std::iter::repeat_n(b, degree + 1));
        Ok(KnotVector { degree, knots })
    }

    /// General open knot vector. Interior knots may have multiplicity up to
    /// `p + 1`, which produces a discontinuous (broken) spline space.
    pub(crate) fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let m = knots.len();
        if m < 2 * (degree + 1) {
            return Err(Error::Parameter(format!(
                "{m} knots cannot carry a degree-{degree} basis"
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Parameter("knots must be non-decreasing".into()));
        }
        let (a, b) = (knots[0], knots[m - 1]);
        if !(a < b) {
            return Err(Error::Parameter("knot vector spans an empty interval".into()));
        }
        let mult = |v: f64| knots.iter().filter(|&&k| k == v).count();
        if mult(a) != degree + 1 || mult(b) != degree + 1 {
            return Err(Error::Parameter("knot vector is not open".into()));
        }
        let mut i = 0;
        while i < m {
            let c = mult(knots[i]);
            if c > degree + 1 {
                return Err(Error::Parameter(format!(
                    "knot {} has multiplicity {c} > {}",
                    knots[i],
                    degree + 1
                )));
            }
            i += c;
        }
        Ok(KnotVector { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Distinct knot values in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v = self.knots.clone();
        v.dedup();
        v
    }

    pub fn n_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Span index `i` with `knots[i] <= x < knots[i+1]`; the last nonempty
    /// span is closed on the right.
    pub fn find_span(&self, x: f64) -> Result<usize> {
        let (a, b) = self.domain();
        let tol = 1e-12 * (b - a);
        if !(x >= a - tol && x <= b + tol) {
            return Err(Error::Domain { x, a, b });
        }
        let n = self.n_basis();
        if x >= b {
            return Ok(n - 1);
        }
        if x <= a {
            return Ok(self.degree);
        }
        // largest i with knots[i] <= x
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        Ok(i.min(n - 1))
    }
}

/// B-spline basis of degree `p` over an open knot vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineBasis {
    kv: KnotVector,
    // nonempty span indices, one per element
    spans: Vec<usize>,
}

/// Open uniform basis with `n_elements` spans on `interval`.
pub fn make_uniform_basis(p: usize, n_elements: usize, interval: (f64, f64)) -> Result<SplineBasis> {
    Ok(SplineBasis::new(KnotVector::uniform(
        p, n_elements, interval.0, interval.1,
    )?))
}

impl SplineBasis {
    pub fn new(kv: KnotVector) -> Self {
        let spans = (kv.degree..kv.n_basis())
            .filter(|&i| kv.knots[i] < kv.knots[i + 1])
            .collect();
        SplineBasis { kv, spans }
    }

    pub fn uniform(p: usize, n_elements: usize, a: f64, b: f64) -> Result<Self> {
        make_uniform_basis(p, n_elements, (a, b))
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.kv
    }

    pub fn degree(&self) -> usize {
        self.kv.degree
    }

    pub fn n_basis(&self) -> usize {
        self.kv.n_basis()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.kv.domain()
    }

    pub fn n_elements(&self) -> usize {
        self.spans.len()
    }

    /// `(span index, left, right)` for every element.
    pub fn elements(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.spans
            .iter()
            .map(move |&s| (s, self.kv.knots[s], self.kv.knots[s + 1]))
    }

    /// First nonzero basis index and the `p + 1` values (`deriv_order = 0`)
    /// or first derivatives (`deriv_order = 1`) at `x`.
    pub fn eval_nonzero(&self, x: f64, deriv_order: usize) -> Result<(usize, Vec<f64>)> {
        if deriv_order > 1 {
            return Err(Error::Parameter(format!(
                "derivative order {deriv_order} not supported"
            )));
        }
        let span = self.kv.find_span(x)?;
        let (a, b) = self.domain();
        let mut ders = self.ders_in_span(span, x.clamp(a, b), deriv_order);
        Ok((span - self.degree(), ders.swap_remove(deriv_order)))
    }

    /// Values and derivatives up to `n` of the `p + 1` functions nonzero on
    /// `span`, evaluated at `x` (which may lie on the span boundary).
    /// `out[k][j]` is the k-th derivative of function `span - p + j`.
    pub fn ders_in_span(&self, span: usize, x: f64, n: usize) -> Vec<Vec<f64>> {
        let p = self.degree();
        let u = &self.kv.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=n.min(p) {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        ders
    }

    /// Value of the spline `Σ c_i N_i` (or its derivative) at `x`.
    pub fn eval_function(&self, coeffs: &[f64], x: f64, deriv_order: usize) -> Result<f64> {
        if coeffs.len() != self.n_basis() {
            return Err(Error::Dimension {
                expected: self.n_basis(),
                found: coeffs.len(),
            });
        }
        let (first, vals) = self.eval_nonzero(x, deriv_order)?;
        Ok(vals.iter().enumerate().map(|(j, v)| v * coeffs[first + j]).sum())
    }

    /// Values (deriv 0) or derivatives (deriv 1) of all basis functions at `x`.
    pub fn eval_all(&self, x: f64, deriv_order: usize) -> Result<Vec<f64>> {
        let (first, vals) = self.eval_nonzero(x, deriv_order)?;
        let mut out = vec![0.0; self.n_basis()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// Same knots with every element bisected.
    pub fn refined(&self) -> SplineBasis {
        let bp = self.kv.breakpoints();
        let mut knots = Vec::with_capacity(self.kv.knots.len() * 2);
        let mult = |v: f64| self.kv.knots.iter().filter(|&&k| k == v).count();
        for (i, w) in bp.windows(2).enumerate() {
            if i == 0 {
                knots.extend(std::iter::repeat_n(w[0], mult(w[0])));
            }
            knots.push(0.5 * (w[0] + w[1]));
            knots.extend(std::iter::repeat_n(w[1], mult(w[1])));
        }
        SplineBasis::new(KnotVector {
            degree: self.degree(),
            knots,
        })
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "need at least one quadrature point");
    if q == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[q - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss points of one knot span mapped to `[a, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanQuadrature {
    pub span: usize,
    pub a: f64,
    pub b: f64,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Per-span Gauss–Legendre rule over a spline basis.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub spans: Vec<SpanQuadrature>,
}

impl QuadratureRule {
    /// `q` points on every nonempty span of `basis`.
    pub fn for_basis(basis: &SplineBasis, q: usize) -> Self {
        let (gx, gw) = gauss_legendre(q);
        let spans = basis
            .elements()
            .map(|(span, a, b)| {
                let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
                SpanQuadrature {
                    span,
                    a,
                    b,
                    points: gx.iter().map(|&x| m + r * x).collect(),
                    weights: gw.iter().map(|&w| r * w).collect(),
                }
            })
            .collect();
        QuadratureRule { spans }
    }

    /// Default rule with `p + 1` points per span.
    pub fn standard(basis: &SplineBasis) -> Self {
        Self::for_basis(basis, basis.degree() + 1)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.spans
            .iter()
            .flat_map(|s| s.points.iter().zip(&s.weights))
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Refinement matrix `E` with `fine_coeffs = E * coarse_coeffs`.
pub fn knot_insertion_matrix(coarse: &SplineBasis, fine: &SplineBasis) -> Result<SparseMatrix> {
    Ok(SparseMatrix::from_dense(&knot_insertion_dense(
        coarse.knot_vector(),
        fine.knot_vector(),
    )?))
}

pub(crate) fn knot_insertion_dense(coarse: &KnotVector, fine: &KnotVector) -> Result<DenseMatrix> {
    if coarse.degree != fine.degree {
        return Err(Error::Nesting(format!(
            "degrees differ ({} vs {})",
            coarse.degree, fine.degree
        )));
    }
    let (ca, cb) = coarse.domain();
    let (fa, fb) = fine.domain();
    let tol = 1e-12 * (cb - ca);
    if (ca - fa).abs() > tol || (cb - fb).abs() > tol {
        return Err(Error::Nesting("intervals differ".into()));
    }
    // multiset difference fine \ coarse
    let mut extra = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (c, f) = (&coarse.knots, &fine.knots);
    while j < f.len() {
        if i < c.len() && (c[i] - f[j]).abs() <= tol {
            i += 1;
            j += 1;
        } else if i < c.len() && c[i] < f[j] {
            return Err(Error::Nesting(format!(
                "coarse knot {} missing from the fine knot vector",
                c[i]
            )));
        } else {
            extra.push(f[j]);
            j += 1;
        }
    }
    if i < c.len() {
        return Err(Error::Nesting(format!(
            "coarse knot {} missing from the fine knot vector",
            c[i]
        )));
    }

    let p = coarse.degree;
    let n0 = coarse.n_basis();
    let mut knots = coarse.knots.clone();
    let mut e = DenseMatrix::identity(n0);
    for &t in &extra {
        // Boehm: insert t into `knots`
        let n = knots.len() - p - 1;
        let k = knots.partition_point(|&u| u <= t) - 1;
        let k = k.min(n - 1);
        let mut next = DenseMatrix::zeros(n + 1, n0);
        for r in 0..=n {
            let row: Vec<f64> = if r + p <= k {
                e.row(r).to_vec()
            } else if r > k {
                e.row(r - 1).to_vec()
            } else {
                let denom = knots[r + p] - knots[r];
                let alpha = if denom > 0.0 { (t - knots[r]) / denom } else { 0.0 };
                e.row(r)
                    .iter()
                    .zip(e.row(r - 1))
                    .map(|(&cur, &prev)| alpha * cur + (1.0 - alpha) * prev)
                    .collect()
            };
            next.row_mut(r).copy_from_slice(&row);
        }
        knots.insert(k + 1, t);
        e = next;
    }
    // snap tiny round-off so the sparse pattern stays clean
    for v in e.as_mut_slice() {
        if v.abs() < 1e-15 {
            *v = 0.0;
        }
    }
    Ok(e)
}

/// Tensor-product basis on `[0,1]^d` (d = 1 or 2) with optional homogeneous
/// Dirichlet sides per direction. Active functions are ordered with the first
/// direction running fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceBasis {
    dirs: Vec<SplineBasis>,
    dirichlet: Vec<[bool; 2]>,
}

impl SpaceBasis {
    pub fn new(dirs: Vec<SplineBasis>, dirichlet: Vec<[bool; 2]>) -> Result<Self> {
        if dirs.is_empty() || dirs.len() > 2 {
            return Err(Error::Parameter(format!(
                "spatial dimension {} not supported",
                dirs.len()
            )));
        }
        if dirichlet.len() != dirs.len() {
            return Err(Error::Dimension {
                expected: dirs.len(),
                found: dirichlet.len(),
            });
        }
        Ok(SpaceBasis { dirs, dirichlet })
    }

    /// Uniform basis of degree `p` with `n_elements` per direction on the
    /// unit interval or square, Dirichlet on every side.
    pub fn uniform_dirichlet(dim: usize, p: usize, n_elements: usize) -> Result<Self> {
        let b = SplineBasis::uniform(p, n_elements, 0.0, 1.0)?;
        Self::new(vec![b; dim], vec![[true, true]; dim])
    }

    pub fn dim(&self) -> usize {
        self.dirs.len()
    }

    pub fn direction(&self, k: usize) -> &SplineBasis {
        &self.dirs[k]
    }

    pub fn dirichlet(&self, k: usize) -> [bool; 2] {
        self.dirichlet[k]
    }

    /// Range of active univariate indices in direction `k`.
    pub fn active_range(&self, k: usize) -> std::ops::Range<usize> {
        let n = self.dirs[k].n_basis();
        let lo = usize::from(self.dirichlet[k][0]);
        let hi = n - usize::from(self.dirichlet[k][1]);
        lo..hi.max(lo)
    }

    pub fn n_active(&self, k: usize) -> usize {
        self.active_range(k).len()
    }

    pub fn n_dofs(&self) -> usize {
        (0..self.dim()).map(|k| self.n_active(k)).product()
    }

    /// Every direction bisected.
    pub fn refined(&self) -> SpaceBasis {
        SpaceBasis {
            dirs: self.dirs.iter().map(SplineBasis::refined).collect(),
            dirichlet: self.dirichlet.clone(),
        }
    }

    /// Univariate active-to-active refinement matrix for direction `k`.
    pub(crate) fn active_insertion(&self, fine: &SpaceBasis, k: usize) -> Result<DenseMatrix> {
        let e = knot_insertion_dense(self.dirs[k].knot_vector(), fine.dirs[k].knot_vector())?;
        let (rf, rc) = (fine.active_range(k), self.active_range(k));
        Ok(DenseMatrix::from_fn(rf.len(), rc.len(), |i, j| {
            e[(rf.start + i, rc.start + j)]
        }))
    }

    /// Prolongation from this (coarse) space to `fine` on active functions.
    pub fn prolongation(&self, fine: &SpaceBasis) -> Result<SparseMatrix> {
        if fine.dim() != self.dim() || fine.dirichlet != self.dirichlet {
            return Err(Error::Nesting("spatial bases have different structure".into()));
        }
        let ex = SparseMatrix::from_dense(&self.active_insertion(fine, 0)?);
        if self.dim() == 1 {
            return Ok(ex);
        }
        let ey = SparseMatrix::from_dense(&self.active_insertion(fine, 1)?);
        Ok(SparseMatrix::kron(&ey, &ex))
    }

    /// Value of the discrete function with active coefficients `c` at `x`,
    /// together with its gradient.
    pub fn eval_with_gradient(&self, c: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if c.len() != self.n_dofs() {
            return Err(Error::Dimension {
                expected: self.n_dofs(),
                found: c.len(),
            });
        }
        let d = self.dim();
        let mut firsts = Vec::with_capacity(d);
        let mut vals = Vec::with_capacity(d);
        for k in 0..d {
            let b = &self.dirs[k];
            let span = b.knot_vector().find_span(x[k])?;
            let (lo, hi) = b.domain();
            firsts.push(span - b.degree());
            vals.push(b.ders_in_span(span, x[k].clamp(lo, hi), 1));
        }
        let mut val = 0.0;
        let mut grad = vec![0.0; d];
        let r0 = self.active_range(0);
        let p0 = self.dirs[0].degree();
        if d == 1 {
            for j in 0..=p0 {
                let g = firsts[0] + j;
                if r0.contains(&g) {
                    let ci = c[g - r0.start];
                    val += ci * vals[0][0][j];
                    grad[0] += ci * vals[0][1][j];
                }
            }
        } else {
            let r1 = self.active_range(1);
            let p1 = self.dirs[1].degree();
            let nx = r0.len();
            for jy in 0..=p1 {
                let gy = firsts[1] + jy;
                if !r1.contains(&gy) {
                    continue;
                }
                for jx in 0..=p0 {
                    let gx = firsts[0] + jx;
                    if !r0.contains(&gx) {
                        continue;
                    }
                    let ci = c[(gy - r1.start) * nx + gx - r0.start];
                    val += ci * vals[0][0][jx] * vals[1][0][jy];
                    grad[0] += ci * vals[0][1][jx] * vals[1][0][jy];
                    grad[1] += ci * vals[0][0][jx] * vals[1][1][jy];
                }
            }
        }
        Ok((val, grad))
    }
}
