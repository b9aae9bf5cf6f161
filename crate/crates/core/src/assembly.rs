//! Assembly of the spatial mass/stiffness matrices, the time matrices of the
//! upwind-stabilized slab formulation, the interface coupling and the load
//! vectors, plus the Kronecker-form slab operator.
//!
//! Slab vectors are stored time-major: entry `i_t * N_x + i_x` belongs to
//! time function `i_t` and spatial function `i_x`.

use std::sync::Arc;

use crate::denselin::{DenseMatrix, Lu};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::splines::{QuadratureRule, SpaceBasis, SplineBasis};

/// Coefficients of one slab, time-major (`i_t * N_x + i_x`).
pub type SlabVector = Vec<f64>;

/// Affine geometry map `x = J ξ + s` from the parameter domain.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    jac: DenseMatrix,
    shift: Vec<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        AffineMap {
            jac: DenseMatrix::identity(dim),
            shift: vec![0.0; dim],
        }
    }

    pub fn new(jac: DenseMatrix, shift: Vec<f64>) -> Result<Self> {
        let d = jac.rows();
        if !jac.is_square() || !(1..=2).contains(&d) || shift.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: shift.len(),
            });
        }
        let m = AffineMap { jac, shift };
        let det = m.det();
        let scale = m.jac.max_abs().powi(d as i32);
        if !(det.abs() > 1e-14 * scale) || !det.is_finite() {
            return Err(Error::Geometry(det));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn det(&self) -> f64 {
        if self.dim() == 1 {
            self.jac[(0, 0)]
        } else {
            self.jac[(0, 0)] * self.jac[(1, 1)] - self.jac[(0, 1)] * self.jac[(1, 0)]
        }
    }

    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        let mut x = self.jac.mul_vec(xi);
        for (a, s) in x.iter_mut().zip(&self.shift) {
            *a += s;
        }
        x
    }

    /// `J⁻¹ J⁻ᵀ`, the metric for reference gradients.
    fn metric(&self) -> DenseMatrix {
        let inv = Lu::factor(&self.jac).expect("checked at construction").inverse();
        inv.matmul(&inv.transpose())
    }

    /// Physical gradient `J⁻ᵀ ∇ξ`.
    pub fn push_gradient(&self, g: &[f64]) -> Vec<f64> {
        let inv = Lu::factor(&self.jac).expect("checked at construction").inverse();
        inv.transpose().mul_vec(g)
    }
}

/// 1D reference matrices on the active functions of direction `k`:
/// mass, stiffness, and `C[i,j] = ∫ N_j' N_i`.
fn univariate_matrices(space: &SpaceBasis, k: usize) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let b = space.direction(k);
    let r = space.active_range(k);
    let n = r.len();
    let p = b.degree();
    let mut m = DenseMatrix::zeros(n, n);
    let mut s = DenseMatrix::zeros(n, n);
    let mut c = DenseMatrix::zeros(n, n);
    let rule = QuadratureRule::standard(b);
    for span in &rule.spans {
        let first = span.span - p;
        for (&x, &w) in span.points.iter().zip(&span.weights) {
            let d = b.ders_in_span(span.span, x, 1);
            for a in 0..=p {
                let gi = first + a;
                if !r.contains(&gi) {
                    continue;
                }
                for e in 0..=p {
                    let gj = first + e;
                    if !r.contains(&gj) {
                        continue;
                    }
                    let (i, j) = (gi - r.start, gj - r.start);
                    m[(i, j)] += w * d[0][e] * d[0][a];
                    s[(i, j)] += w * d[1][e] * d[1][a];
                    c[(i, j)] += w * d[1][e] * d[0][a];
                }
            }
        }
    }
    (m.symmetric_part(), s.symmetric_part(), c)
}

fn symmetrize(a: &SparseMatrix) -> SparseMatrix {
    a.linear_combination(0.5, &a.transpose(), 0.5)
}

/// Mass and stiffness matrices on the active (non-Dirichlet) functions.
pub fn assemble_space(space: &SpaceBasis, map: &AffineMap) -> Result<(SparseMatrix, SparseMatrix)> {
    if map.dim() != space.dim() {
        return Err(Error::Dimension {
            expected: space.dim(),
            found: map.dim(),
        });
    }
    let det = map.det().abs();
    let g = map.metric();
    let (mx, kx, cx) = univariate_matrices(space, 0);
    if space.dim() == 1 {
        let m = SparseMatrix::from_dense(&mx.scaled(det));
        let k = SparseMatrix::from_dense(&kx.scaled(det * g[(0, 0)]));
        return Ok((m, k));
    }
    let (my, ky, cy) = univariate_matrices(space, 1);
    let sp = SparseMatrix::from_dense;
    let mass = SparseMatrix::kron(&sp(&my), &sp(&mx));
    let mut stiff = SparseMatrix::kron(&sp(&my), &sp(&kx)).linear_combination(
        g[(0, 0)],
        &SparseMatrix::kron(&sp(&ky), &sp(&mx)),
        g[(1, 1)],
    );
    if g[(0, 1)] != 0.0 {
        let mixed = SparseMatrix::kron(&sp(&cy.transpose()), &sp(&cx)).linear_combination(
            1.0,
            &SparseMatrix::kron(&sp(&cy), &sp(&cx.transpose())),
            1.0,
        );
        stiff = stiff.linear_combination(1.0, &mixed, g[(0, 1)]);
    }
    Ok((symmetrize(&mass.scaled(det)), symmetrize(&stiff.scaled(det))))
}

/// Time matrices of one slab:
/// `K_t[i,j] = ∫ ψ_j'(ψ_i + θhψ_i') + ψ_j(t₀)ψ_i(t₀)` and
/// `M_t[i,j] = ∫ ψ_j(ψ_i + θhψ_i')`, with `h` the local element length.
pub fn assemble_time(basis_t: &SplineBasis, theta: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::Parameter(format!("theta must be >= 0, got {theta}")));
    }
    let n = basis_t.n_basis();
    let p = basis_t.degree();
    let mut k = DenseMatrix::zeros(n, n);
    let mut m = DenseMatrix::zeros(n, n);
    let rule = QuadratureRule::standard(basis_t);
    for span in &rule.spans {
        let h = span.b - span.a;
        let first = span.span - p;
        for (&t, &w) in span.points.iter().zip(&span.weights) {
            let d = basis_t.ders_in_span(span.span, t, 1);
            for a in 0..=p {
                let test = d[0][a] + theta * h * d[1][a];
                for e in 0..=p {
                    k[(first + a, first + e)] += w * d[1][e] * test;
                    m[(first + a, first + e)] += w * d[0][e] * test;
                }
            }
        }
    }
    let (t0, _) = basis_t.domain();
    let v0 = basis_t.eval_all(t0, 0)?;
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] += v0[j] * v0[i];
        }
    }
    Ok((k, m))
}

/// Time element length of a uniform slab basis.
pub fn time_element_size(basis_t: &SplineBasis) -> f64 {
    let (a, b) = basis_t.domain();
    (b - a) / basis_t.n_elements() as f64
}

/// Constant of the inverse trace inequality `|v(t₀)|² ≤ C² h⁻¹ ‖v‖²` on one
/// time element, `C² = h (M⁻¹)₀₀` with `M` the element mass matrix.
pub fn inverse_trace_constant_sq(p: usize) -> Result<f64> {
    let b = SplineBasis::uniform(p, 1, 0.0, 1.0)?;
    let (_, m) = assemble_time(&b, 0.0)?;
    let lu = Lu::factor(&m)?;
    let mut e0 = vec![0.0; m.rows()];
    e0[0] = 1.0;
    Ok(lu.solve(&e0)[0])
}

/// Interface coupling between consecutive slabs:
/// `N_t[i,k] = ψ^{n-1}_k(t)ψ^n_i(t)` and the mixed mass `M̃_x[i,k] = ∫ φ^{n-1}_k φ^n_i`.
pub fn assemble_coupling(
    time_prev: &SplineBasis,
    time_next: &SplineBasis,
    space_prev: &SpaceBasis,
    space_next: &SpaceBasis,
    map: &AffineMap,
    t_interface: f64,
) -> Result<(DenseMatrix, SparseMatrix)> {
    let (_, prev_end) = time_prev.domain();
    let (next_start, _) = time_next.domain();
    let tol = 1e-12 * (1.0 + t_interface.abs());
    if (prev_end - t_interface).abs() > tol || (next_start - t_interface).abs() > tol {
        return Err(Error::Interface { prev_end, next_start });
    }
    let a = time_prev.eval_all(t_interface, 0)?;
    let b = time_next.eval_all(t_interface, 0)?;
    let nt = DenseMatrix::from_fn(b.len(), a.len(), |i, k| a[k] * b[i]);
    let mt = mixed_mass(space_prev, space_next, map)?;
    Ok((nt, mt))
}

/// `M̃[i,k] = ∫ φ^{prev}_k φ^{next}_i` on active functions; integrated on the
/// union of both breakpoint sets.
pub fn mixed_mass(prev: &SpaceBasis, next: &SpaceBasis, map: &AffineMap) -> Result<SparseMatrix> {
    if prev == next {
        return Ok(assemble_space(next, map)?.0);
    }
    if prev.dim() != next.dim() {
        return Err(Error::Dimension {
            expected: next.dim(),
            found: prev.dim(),
        });
    }
    let mut factors = Vec::new();
    for k in 0..prev.dim() {
        let (bp, bn) = (prev.direction(k), next.direction(k));
        let (rp, rn) = (prev.active_range(k), next.active_range(k));
        let mut pts: Vec<f64> = bp
            .knot_vector()
            .breakpoints()
            .into_iter()
            .chain(bn.knot_vector().breakpoints())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let q = bp.degree().max(bn.degree()) + 1;
        let (gx, gw) = crate::splines::gauss_legendre(q);
        let mut m = DenseMatrix::zeros(rn.len(), rp.len());
        for w in pts.windows(2) {
            let (mid, rad) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            for (&x, &wt) in gx.iter().zip(&gw) {
                let t = mid + rad * x;
                let vp = bp.eval_all(t, 0)?;
                let vn = bn.eval_all(t, 0)?;
                for (i, gi) in rn.clone().enumerate() {
                    if vn[gi] == 0.0 {
                        continue;
                    }
                    for (j, gj) in rp.clone().enumerate() {
                        m[(i, j)] += rad * wt * vn[gi] * vp[gj];
                    }
                }
            }
        }
        factors.push(SparseMatrix::from_dense(&m));
    }
    let det = map.det().abs();
    let out = if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        SparseMatrix::kron(&factors[1], &factors[0])
    };
    Ok(out.scaled(det))
}

/// Quadrature point of the spatial domain with the active functions that do
/// not vanish there.
#[derive(Clone, Debug)]
pub struct SpacePoint {
    pub x: Vec<f64>,
    pub weight: f64,
    /// `(active index, value, physical gradient)`.
    pub funcs: Vec<(usize, f64, Vec<f64>)>,
}

/// Gauss points of every spatial element mapped to the physical domain.
pub fn space_quadrature(space: &SpaceBasis, map: &AffineMap) -> Vec<SpacePoint> {
    let det = map.det().abs();
    let d = space.dim();
    let rules: Vec<QuadratureRule> = (0..d).map(|k| QuadratureRule::standard(space.direction(k))).collect();
    // univariate tables: (span, point, weight, first index, values, derivs)
    let tables: Vec<Vec<(f64, f64, usize, Vec<f64>, Vec<f64>)>> = (0..d)
        .map(|k| {
            let b = space.direction(k);
            let mut t = Vec::new();
            for s in &rules[k].spans {
                for (&x, &w) in s.points.iter().zip(&s.weights) {
                    let dd = b.ders_in_span(s.span, x, 1);
                    t.push((x, w, s.span - b.degree(), dd[0].clone(), dd[1].clone()));
                }
            }
            t
        })
        .collect();
    let mut out = Vec::new();
    let r0 = space.active_range(0);
    if d == 1 {
        for (x, w, first, v, dv) in &tables[0] {
            let mut funcs = Vec::new();
            for a in 0..v.len() {
                let g = first + a;
                if r0.contains(&g) {
                    funcs.push((g - r0.start, v[a], map.push_gradient(&[dv[a]])));
                }
            }
            out.push(SpacePoint {
                x: map.apply(&[*x]),
                weight: w * det,
                funcs,
            });
        }
        return out;
    }
    let r1 = space.active_range(1);
    let nx = r0.len();
    for (y, wy, fy, vy, dvy) in &tables[1] {
        for (x, wx, fx, vx, dvx) in &tables[0] {
            let mut funcs = Vec::new();
            for b in 0..vy.len() {
                let gy = fy + b;
                if !r1.contains(&gy) {
                    continue;
                }
                for a in 0..vx.len() {
                    let gx = fx + a;
                    if !r0.contains(&gx) {
                        continue;
                    }
                    let grad = map.push_gradient(&[dvx[a] * vy[b], vx[a] * dvy[b]]);
                    funcs.push(((gy - r1.start) * nx + gx - r0.start, vx[a] * vy[b], grad));
                }
            }
            out.push(SpacePoint {
                x: map.apply(&[*x, *y]),
                weight: wx * wy * det,
                funcs,
            });
        }
    }
    out
}

/// Load vector of one slab:
/// `f_n[i] = ∫_{Q_n} f (φ_i + θh ∂ₜφ_i)`, plus `∫ u₀ φ_i(·, t₀)` on the first slab.
pub fn assemble_rhs(
    f: &dyn Fn(&[f64], f64) -> f64,
    u0: Option<&dyn Fn(&[f64]) -> f64>,
    space_points: &[SpacePoint],
    n_space: usize,
    basis_t: &SplineBasis,
    theta: f64,
) -> Result<SlabVector> {
    let nt = basis_t.n_basis();
    let p = basis_t.degree();
    let mut out = vec![0.0; nt * n_space];
    let rule = QuadratureRule::standard(basis_t);
    for span in &rule.spans {
        let h = span.b - span.a;
        let first = span.span - p;
        for (&t, &wt) in span.points.iter().zip(&span.weights) {
            let d = basis_t.ders_in_span(span.span, t, 1);
            let tv: Vec<f64> = (0..=p).map(|a| d[0][a] + theta * h * d[1][a]).collect();
            for sp in space_points {
                let fv = f(&sp.x, t) * sp.weight * wt;
                if fv == 0.0 {
                    continue;
                }
                for (a, &tva) in tv.iter().enumerate() {
                    let row = (first + a) * n_space;
                    for (ix, v, _) in &sp.funcs {
                        out[row + ix] += fv * tva * v;
                    }
                }
            }
        }
    }
    if let Some(u0) = u0 {
        let (t0, _) = basis_t.domain();
        let v0 = basis_t.eval_all(t0, 0)?;
        for sp in space_points {
            let uv = u0(&sp.x) * sp.weight;
            for (it, &vt) in v0.iter().enumerate() {
                if vt == 0.0 {
                    continue;
                }
                for (ix, v, _) in &sp.funcs {
                    out[it * n_space + ix] += uv * vt * v;
                }
            }
        }
    }
    Ok(out)
}

/// `A = K_t ⊗ M_x + M_t ⊗ K_x`, kept in factored form.
#[derive(Clone, Debug)]
pub struct SlabOperator {
    pub kt: Arc<DenseMatrix>,
    pub mt: Arc<DenseMatrix>,
    pub mx: Arc<SparseMatrix>,
    pub kx: Arc<SparseMatrix>,
    pub theta: f64,
    pub h_t: f64,
}

impl SlabOperator {
    pub fn new(
        kt: DenseMatrix,
        mt: DenseMatrix,
        mx: Arc<SparseMatrix>,
        kx: Arc<SparseMatrix>,
        theta: f64,
        h_t: f64,
    ) -> Result<Self> {
        if kt.rows() != mt.rows() || !kt.is_square() || !mt.is_square() {
            return Err(Error::Dimension {
                expected: kt.rows(),
                found: mt.rows(),
            });
        }
        if mx.n_rows() != kx.n_rows() || mx.n_rows() != mx.n_cols() || kx.n_rows() != kx.n_cols() {
            return Err(Error::Dimension {
                expected: mx.n_rows(),
                found: kx.n_rows(),
            });
        }
        Ok(SlabOperator {
            kt: Arc::new(kt),
            mt: Arc::new(mt),
            mx,
            kx,
            theta,
            h_t,
        })
    }

    pub fn n_t(&self) -> usize {
        self.kt.rows()
    }

    pub fn n_x(&self) -> usize {
        self.mx.n_rows()
    }

    pub fn size(&self) -> usize {
        self.n_t() * self.n_x()
    }

    /// Sparse materialization (time-major ordering).
    pub fn to_sparse(&self) -> SparseMatrix {
        let a = SparseMatrix::kron_dense_left(&self.kt, &self.mx);
        let b = SparseMatrix::kron_dense_left(&self.mt, &self.kx);
        a.linear_combination(1.0, &b, 1.0)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.kt
            .kron(&self.mx.to_dense())
            .add(&self.mt.kron(&self.kx.to_dense()))
    }
}

/// `(K_t ⊗ M_x + M_t ⊗ K_x) v` without materializing the operator.
pub fn slab_matvec(op: &SlabOperator, v: &[f64]) -> Result<SlabVector> {
    let (nt, nx) = (op.n_t(), op.n_x());
    if v.len() != nt * nx {
        return Err(Error::Dimension {
            expected: nt * nx,
            found: v.len(),
        });
    }
    let mut wm = vec![0.0; nt * nx];
    let mut wk = vec![0.0; nt * nx];
    for j in 0..nt {
        let vj = &v[j * nx..(j + 1) * nx];
        op.mx.matvec_into(vj, &mut wm[j * nx..(j + 1) * nx]);
        op.kx.matvec_into(vj, &mut wk[j * nx..(j + 1) * nx]);
    }
    let mut out = vec![0.0; nt * nx];
    for i in 0..nt {
        let oi = &mut out[i * nx..(i + 1) * nx];
        for j in 0..nt {
            let (a, b) = (op.kt[(i, j)], op.mt[(i, j)]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let (mj, kj) = (&wm[j * nx..(j + 1) * nx], &wk[j * nx..(j + 1) * nx]);
            for x in 0..nx {
                oi[x] += a * mj[x] + b * kj[x];
            }
        }
    }
    Ok(out)
}
