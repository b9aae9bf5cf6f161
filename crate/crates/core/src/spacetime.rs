//! The global block lower-bidiagonal system `L_h u = f` over all time slabs,
//! its exact sequential (time-stepping) solver, manufactured solutions and
//! the dG error norm.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{
    assemble_coupling, assemble_rhs, assemble_space, assemble_time, slab_matvec, space_quadrature, time_element_size,
    AffineMap, SlabOperator, SlabVector, SpacePoint,
};
use crate::denselin::{norm2, DenseMatrix, Lu};
use crate::error::{Error, Result};
use crate::slab_inverse::{SlabInverse, Strategy};
use crate::sparse::{BandedCholesky, SparseMatrix};
use crate::splines::{make_uniform_basis, QuadratureRule, SpaceBasis, SplineBasis};

/// Source term and initial value of `∂ₜu − Δu = f`, `u = 0` on the boundary.
pub trait Problem: Sync {
    fn source(&self, x: &[f64], t: f64) -> f64;
    fn initial(&self, x: &[f64]) -> f64;
}

/// A problem with known solution.
pub trait ExactSolution: Problem {
    fn value(&self, x: &[f64], t: f64) -> f64;
    fn gradient(&self, x: &[f64], t: f64) -> Vec<f64>;
    fn time_derivative(&self, x: &[f64], t: f64) -> f64;
}

/// Closed-form manufactured solutions on `[0, 1]^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Manufactured {
    /// `u = e^{−t} Π sin(π x_k)`.
    SineExp { dim: usize },
    /// `u = Π x_k (1 − x_k)`, constant in time.
    Quadratic { dim: usize },
    /// `u = 0`.
    Zero,
}

impl Manufactured {
    fn factors(&self, x: &[f64]) -> Vec<(f64, f64, f64)> {
        // (g, g', g'') per direction
        let pi = std::f64::consts::PI;
        match self {
            Manufactured::SineExp { .. } => x
                .iter()
                .map(|&s| ((pi * s).sin(), pi * (pi * s).cos(), -pi * pi * (pi * s).sin()))
                .collect(),
            Manufactured::Quadratic { .. } => x.iter().map(|&s| (s * (1.0 - s), 1.0 - 2.0 * s, -2.0)).collect(),
            Manufactured::Zero => x.iter().map(|_| (0.0, 0.0, 0.0)).collect(),
        }
    }

    fn time_factor(&self, t: f64) -> (f64, f64) {
        match self {
            Manufactured::SineExp { .. } => ((-t).exp(), -(-t).exp()),
            _ => (1.0, 0.0),
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let f = self.factors(x);
        (0..f.len())
            .map(|k| {
                f.iter()
                    .enumerate()
                    .map(|(j, v)| if j == k { v.2 } else { v.0 })
                    .product::<f64>()
            })
            .sum()
    }

    fn spatial(&self, x: &[f64]) -> f64 {
        self.factors(x).iter().map(|v| v.0).product()
    }
}

impl Problem for Manufactured {
    fn source(&self, x: &[f64], t: f64) -> f64 {
        let (g, dg) = self.time_factor(t);
        dg * self.spatial(x) - g * self.laplacian(x)
    }

    fn initial(&self, x: &[f64]) -> f64 {
        self.value(x, 0.0)
    }
}

impl ExactSolution for Manufactured {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.time_factor(t).0 * self.spatial(x)
    }

    fn gradient(&self, x: &[f64], t: f64) -> Vec<f64> {
        let g = self.time_factor(t).0;
        let f = self.factors(x);
        (0..f.len())
            .map(|k| {
                g * f
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if j == k { v.1 } else { v.0 })
                    .product::<f64>()
            })
            .collect()
    }

    fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        self.time_factor(t).1 * self.spatial(x)
    }
}

/// Subdiagonal block `B_n = N_t ⊗ M̃_x` with rank-one `N_t = b aᵀ`
/// (`a`: previous slab functions at the interface, `b`: next slab functions).
#[derive(Clone, Debug)]
pub struct Coupling {
    pub prev_trace: Vec<f64>,
    pub next_trace: Vec<f64>,
    pub mixed_mass: Arc<SparseMatrix>,
}

impl Coupling {
    pub fn nt(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.next_trace.len(), self.prev_trace.len(), |i, k| {
            self.next_trace[i] * self.prev_trace[k]
        })
    }

    /// Spatial coefficients of the previous slab's solution at the interface.
    pub fn trace(&self, u_prev: &[f64]) -> Vec<f64> {
        let nx = self.mixed_mass.n_cols();
        let mut w = vec![0.0; nx];
        for (k, &a) in self.prev_trace.iter().enumerate() {
            if a != 0.0 {
                for (wi, ui) in w.iter_mut().zip(&u_prev[k * nx..(k + 1) * nx]) {
                    *wi += a * ui;
                }
            }
        }
        w
    }

    /// `out += s · B u_prev`.
    pub fn apply_acc(&self, s: f64, u_prev: &[f64], out: &mut [f64]) {
        let mw = self.mixed_mass.matvec(&self.trace(u_prev));
        let nx = mw.len();
        for (i, &b) in self.next_trace.iter().enumerate() {
            if b != 0.0 {
                for (o, m) in out[i * nx..(i + 1) * nx].iter_mut().zip(&mw) {
                    *o += s * b * m;
                }
            }
        }
    }
}

/// Parameters of a uniform space-time discretization on `[0,1]^d × (t₀, t₀ + N·L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformSetup {
    pub dim: usize,
    pub p_space: usize,
    pub nel_space: usize,
    pub p_time: usize,
    /// Time elements per slab.
    pub nel_time: usize,
    pub n_slabs: usize,
    pub slab_length: f64,
    pub theta: f64,
    pub t0: f64,
}

impl Default for UniformSetup {
    fn default() -> Self {
        UniformSetup {
            dim: 2,
            p_space: 3,
            nel_space: 4,
            p_time: 3,
            nel_time: 2,
            n_slabs: 2,
            slab_length: 0.1,
            theta: 0.01,
            t0: 0.0,
        }
    }
}

impl UniformSetup {
    pub fn n_dofs(&self) -> usize {
        let nx = (self.nel_space + self.p_space).saturating_sub(2).pow(self.dim as u32);
        nx * (self.nel_time + self.p_time) * self.n_slabs
    }
}

/// Block lower-bidiagonal space-time system.
#[derive(Clone, Debug)]
pub struct SpaceTimeSystem {
    pub slabs: Vec<SlabOperator>,
    /// `couplings[n − 1]` couples slab `n − 1` into slab `n`.
    pub couplings: Vec<Coupling>,
    pub rhs: Vec<SlabVector>,
    pub time_bases: Vec<SplineBasis>,
    pub space: SpaceBasis,
    pub map: AffineMap,
    pub theta: f64,
}

impl SpaceTimeSystem {
    pub fn new(
        slabs: Vec<SlabOperator>,
        couplings: Vec<Coupling>,
        rhs: Vec<SlabVector>,
        time_bases: Vec<SplineBasis>,
        space: SpaceBasis,
        map: AffineMap,
        theta: f64,
    ) -> Result<Self> {
        let n = slabs.len();
        if n == 0 {
            return Err(Error::Parameter("at least one slab is required".into()));
        }
        if couplings.len() + 1 != n || rhs.len() != n || time_bases.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: rhs.len().min(time_bases.len()).min(couplings.len() + 1),
            });
        }
        for (i, s) in slabs.iter().enumerate() {
            if rhs[i].len() != s.size() || time_bases[i].n_basis() != s.n_t() {
                return Err(Error::Dimension {
                    expected: s.size(),
                    found: rhs[i].len(),
                });
            }
        }
        for (i, c) in couplings.iter().enumerate() {
            let (prev, next) = (&slabs[i], &slabs[i + 1]);
            if c.prev_trace.len() != prev.n_t()
                || c.next_trace.len() != next.n_t()
                || c.mixed_mass.n_cols() != prev.n_x()
                || c.mixed_mass.n_rows() != next.n_x()
            {
                return Err(Error::Dimension {
                    expected: next.size(),
                    found: prev.size(),
                });
            }
        }
        Ok(SpaceTimeSystem {
            slabs,
            couplings,
            rhs,
            time_bases,
            space,
            map,
            theta,
        })
    }

    /// Uniform slabs on the unit cube; all slabs share the same matrices.
    /// Without a problem the right-hand side is zero.
    pub fn uniform(setup: &UniformSetup, problem: Option<&dyn Problem>) -> Result<Self> {
        if setup.n_slabs == 0 || !(setup.slab_length > 0.0) {
            return Err(Error::Parameter("need n_slabs >= 1 and slab_length > 0".into()));
        }
        let space = SpaceBasis::uniform_dirichlet(setup.dim, setup.p_space, setup.nel_space)?;
        let map = AffineMap::identity(setup.dim);
        let (mx, kx) = assemble_space(&space, &map)?;
        let (mx, kx) = (Arc::new(mx), Arc::new(kx));
        let interval = |n: usize| {
            let a = setup.t0 + n as f64 * setup.slab_length;
            (a, a + setup.slab_length)
        };
        let time_bases: Vec<SplineBasis> = (0..setup.n_slabs)
            .map(|n| make_uniform_basis(setup.p_time, setup.nel_time, interval(n)))
            .collect::<Result<_>>()?;
        let (kt, mt) = assemble_time(&time_bases[0], setup.theta)?;
        let h = time_element_size(&time_bases[0]);
        let op = SlabOperator::new(kt, mt, mx.clone(), kx, setup.theta, h)?;
        let slabs = vec![op; setup.n_slabs];
        let mut couplings = Vec::with_capacity(setup.n_slabs.saturating_sub(1));
        for n in 1..setup.n_slabs {
            let t = interval(n).0;
            assemble_coupling(&time_bases[n - 1], &time_bases[n], &space, &space, &map, t)?;
            couplings.push(Coupling {
                prev_trace: time_bases[n - 1].eval_all(t, 0)?,
                next_trace: time_bases[n].eval_all(t, 0)?,
                mixed_mass: mx.clone(),
            });
        }
        let nx = space.n_dofs();
        let rhs = match problem {
            Some(pr) => {
                let pts = space_quadrature(&space, &map);
                let src = |x: &[f64], t: f64| pr.source(x, t);
                let init = |x: &[f64]| pr.initial(x);
                (0..setup.n_slabs)
                    .map(|n| {
                        let u0: Option<&dyn Fn(&[f64]) -> f64> = if n == 0 { Some(&init) } else { None };
                        assemble_rhs(&src, u0, &pts, nx, &time_bases[n], setup.theta)
                    })
                    .collect::<Result<_>>()?
            }
            None => time_bases.iter().map(|b| vec![0.0; b.n_basis() * nx]).collect(),
        };
        Self::new(slabs, couplings, rhs, time_bases, space, map, setup.theta)
    }

    pub fn n_slabs(&self) -> usize {
        self.slabs.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.slabs.iter().map(SlabOperator::size).sum()
    }

    pub fn zeros(&self) -> Vec<SlabVector> {
        self.slabs.iter().map(|s| vec![0.0; s.size()]).collect()
    }

    fn check_shape(&self, u: &[SlabVector]) -> Result<()> {
        if u.len() != self.n_slabs() {
            return Err(Error::Dimension {
                expected: self.n_slabs(),
                found: u.len(),
            });
        }
        for (s, v) in self.slabs.iter().zip(u) {
            if v.len() != s.size() {
                return Err(Error::Dimension {
                    expected: s.size(),
                    found: v.len(),
                });
            }
        }
        Ok(())
    }

    /// `r₁ = A₁u₁`, `rₙ = Aₙuₙ − Bₙu_{n−1}`.
    pub fn global_matvec(&self, u: &[SlabVector]) -> Result<Vec<SlabVector>> {
        self.check_shape(u)?;
        (0..self.n_slabs())
            .into_par_iter()
            .map(|n| {
                let mut r = slab_matvec(&self.slabs[n], &u[n])?;
                if n > 0 {
                    self.couplings[n - 1].apply_acc(-1.0, &u[n - 1], &mut r);
                }
                Ok(r)
            })
            .collect()
    }

    /// `f − L_h u`.
    pub fn residual(&self, u: &[SlabVector], f: &[SlabVector]) -> Result<Vec<SlabVector>> {
        let lu = self.global_matvec(u)?;
        self.check_shape(f)?;
        Ok(f.iter()
            .zip(lu)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect())
    }

    /// Direct inverses for every slab; slabs with shared matrices share one.
    pub fn direct_inverses(&self) -> Result<Vec<Arc<SlabInverse>>> {
        let mut out: Vec<Arc<SlabInverse>> = Vec::with_capacity(self.n_slabs());
        for (n, s) in self.slabs.iter().enumerate() {
            let shared = out.iter().find(|inv| same_operator(inv.operator(), s)).cloned();
            let inv = match shared {
                Some(inv) => inv,
                None => Arc::new(SlabInverse::build(s, Strategy::Direct, 0.0).map_err(|e| e.in_slab(n))?),
            };
            out.push(inv);
        }
        Ok(out)
    }

    /// Forward substitution `uₙ = Aₙ⁻¹(fₙ + Bₙu_{n−1})` with the given inverses.
    pub fn sequential_solve_with(&self, inverses: &[Arc<SlabInverse>], f: &[SlabVector]) -> Result<Vec<SlabVector>> {
        self.check_shape(f)?;
        let mut u: Vec<SlabVector> = Vec::with_capacity(self.n_slabs());
        for n in 0..self.n_slabs() {
            let mut rhs = f[n].clone();
            if n > 0 {
                self.couplings[n - 1].apply_acc(1.0, &u[n - 1], &mut rhs);
            }
            u.push(inverses[n].apply(&rhs).map_err(|e| e.in_slab(n))?);
        }
        Ok(u)
    }

    /// Exact solve of `L_h u = f` for the stored right-hand side.
    pub fn sequential_solve(&self) -> Result<Vec<SlabVector>> {
        let inv = self.direct_inverses()?;
        self.sequential_solve_with(&inv, &self.rhs)
    }

    /// Dense `L_h` (tests and tiny systems only).
    pub fn to_dense(&self) -> DenseMatrix {
        let offsets = self.offsets();
        let n = self.n_dofs();
        let mut out = DenseMatrix::zeros(n, n);
        for (k, s) in self.slabs.iter().enumerate() {
            let a = s.to_dense();
            let o = offsets[k];
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    out[(o + i, o + j)] = a[(i, j)];
                }
            }
            if k > 0 {
                let c = &self.couplings[k - 1];
                let b = c.nt().kron(&c.mixed_mass.to_dense());
                let op = offsets[k - 1];
                for i in 0..b.rows() {
                    for j in 0..b.cols() {
                        out[(o + i, op + j)] = -b[(i, j)];
                    }
                }
            }
        }
        out
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.n_slabs());
        let mut acc = 0;
        for s in &self.slabs {
            o.push(acc);
            acc += s.size();
        }
        o
    }

    /// Space-time `L²` projection of `u` onto every slab's discrete space.
    pub fn l2_project(&self, u: &dyn Fn(&[f64], f64) -> f64) -> Result<Vec<SlabVector>> {
        let pts = space_quadrature(&self.space, &self.map);
        let nx = self.space.n_dofs();
        let (mx, _) = assemble_space(&self.space, &self.map)?;
        let chol = BandedCholesky::factor(&mx)?;
        let mut out = Vec::with_capacity(self.n_slabs());
        for basis in &self.time_bases {
            let g = assemble_rhs(u, None, &pts, nx, basis, 0.0)?;
            let (_, mt) = assemble_time(basis, 0.0)?;
            let lu = Lu::factor(&mt)?;
            let nt = basis.n_basis();
            // C = M_t⁻¹ G M_x⁻¹ with G stored time-major
            let mut c = vec![0.0; nt * nx];
            for i in 0..nt {
                let row = chol.solve(&g[i * nx..(i + 1) * nx]);
                c[i * nx..(i + 1) * nx].copy_from_slice(&row);
            }
            for k in 0..nx {
                let col: Vec<f64> = (0..nt).map(|i| c[i * nx + k]).collect();
                let s = lu.solve(&col);
                for i in 0..nt {
                    c[i * nx + k] = s[i];
                }
            }
            out.push(c);
        }
        Ok(out)
    }

    /// Spatial coefficient vector of slab `n` at time `t` (and its time derivative).
    fn spatial_coefficients(&self, n: usize, u: &[f64], t: f64, deriv: usize) -> Result<Vec<f64>> {
        let nx = self.space.n_dofs();
        let (first, vals) = self.time_bases[n].eval_nonzero(t, deriv)?;
        let mut c = vec![0.0; nx];
        for (a, v) in vals.iter().enumerate() {
            let i = first + a;
            if *v != 0.0 {
                for (ci, ui) in c.iter_mut().zip(&u[i * nx..(i + 1) * nx]) {
                    *ci += v * ui;
                }
            }
        }
        Ok(c)
    }

    /// Value of the discrete function of slab `n` at `(x, t)`.
    pub fn evaluate(&self, u: &[SlabVector], n: usize, x: &[f64], t: f64) -> Result<f64> {
        let c = self.spatial_coefficients(n, &u[n], t, 0)?;
        Ok(self.space.eval_with_gradient(&c, x)?.0)
    }

    /// `‖u − u_h‖_dG` by Gauss quadrature.
    pub fn dg_error(&self, u_h: &[SlabVector], exact: &dyn ExactSolution) -> Result<f64> {
        self.check_shape(u_h)?;
        let pts = space_quadrature(&self.space, &self.map);
        let trace_error = |n: usize, t: f64, other: Option<(usize, f64)>| -> Result<f64> {
            // ‖e(t)‖² on the slice, or the jump u_h^{prev}(t) − u_h^n(t) when `other` is given
            let c = self.spatial_coefficients(n, &u_h[n], t, 0)?;
            let cp = match other {
                Some((m, tm)) => Some(self.spatial_coefficients(m, &u_h[m], tm, 0)?),
                None => None,
            };
            let mut acc = 0.0;
            for sp in &pts {
                let vh: f64 = sp.funcs.iter().map(|(i, v, _)| c[*i] * v).sum();
                let e = match &cp {
                    Some(cp) => sp.funcs.iter().map(|(i, v, _)| cp[*i] * v).sum::<f64>() - vh,
                    None => exact.value(&sp.x, t) - vh,
                };
                acc += sp.weight * e * e;
            }
            Ok(acc)
        };
        let mut total = 0.0;
        for n in 0..self.n_slabs() {
            let basis = &self.time_bases[n];
            let h = time_element_size(basis);
            let rule = QuadratureRule::for_basis(basis, basis.degree() + 2);
            for span in &rule.spans {
                for (&t, &wt) in span.points.iter().zip(&span.weights) {
                    let c = self.spatial_coefficients(n, &u_h[n], t, 0)?;
                    let dc = self.spatial_coefficients(n, &u_h[n], t, 1)?;
                    total += wt * slice_energy(&pts, &c, &dc, exact, t, self.theta * h);
                }
            }
            let (a, _) = basis.domain();
            let jump = if n == 0 {
                trace_error(0, a, None)?
            } else {
                let (_, b_prev) = self.time_bases[n - 1].domain();
                trace_error(n, a, Some((n - 1, b_prev)))?
            };
            total += 0.5 * jump;
        }
        let last = self.n_slabs() - 1;
        total += 0.5 * trace_error(last, self.time_bases[last].domain().1, None)?;
        Ok(total.sqrt())
    }

    /// Writes the coefficients in binary little-endian form with a text sidecar.
    pub fn write_solution(&self, path: &Path, u: &[SlabVector]) -> Result<()> {
        self.check_shape(u)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SOLUTION_MAGIC)?;
        w.write_all(&(u.len() as u64).to_le_bytes())?;
        for (s, v) in self.slabs.iter().zip(u) {
            w.write_all(&(s.n_t() as u64).to_le_bytes())?;
            w.write_all(&(s.n_x() as u64).to_le_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        let mut meta = BufWriter::new(File::create(sidecar_path(path))?);
        writeln!(meta, "format=stmg-solution-v1")?;
        writeln!(meta, "byte_order=little-endian")?;
        writeln!(meta, "layout=time-major")?;
        writeln!(meta, "n_slabs={}", u.len())?;
        writeln!(meta, "theta={}", self.theta)?;
        writeln!(meta, "space_dim={}", self.space.dim())?;
        writeln!(meta, "space_degree={}", self.space.direction(0).degree())?;
        for (n, (s, b)) in self.slabs.iter().zip(&self.time_bases).enumerate() {
            let (a, e) = b.domain();
            writeln!(
                meta,
                "slab{n}: t=[{a}, {e}] n_t={} n_x={} time_degree={}",
                s.n_t(),
                s.n_x(),
                b.degree()
            )?;
        }
        meta.flush()?;
        Ok(())
    }
}

const SOLUTION_MAGIC: &[u8; 8] = b"STMGSOL1";

/// Path of the metadata sidecar written next to a solution file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Reads a file written by [`SpaceTimeSystem::write_solution`]; returns
/// `(N_t, N_x, coefficients)` per slab.
pub fn read_solution(path: &Path) -> Result<Vec<(usize, usize, SlabVector)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SOLUTION_MAGIC {
        return Err(Error::Io("not a solution file".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let n = next_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let nt = next_u64(&mut r)? as usize;
        let nx = next_u64(&mut r)? as usize;
        let mut v = Vec::with_capacity(nt * nx);
        for _ in 0..nt * nx {
            v.push(f64::from_bits(next_u64(&mut r)?));
        }
        out.push((nt, nx, v));
    }
    Ok(out)
}

/// `∫_Ω |∇(u − u_h)|² + w (∂ₜ(u − u_h))²` at one time.
fn slice_energy(pts: &[SpacePoint], c: &[f64], dc: &[f64], exact: &dyn ExactSolution, t: f64, w: f64) -> f64 {
    let mut acc = 0.0;
    for sp in pts {
        let g = exact.gradient(&sp.x, t);
        let mut gh = vec![0.0; g.len()];
        let mut dth = 0.0;
        for (i, _, grad) in &sp.funcs {
            for (a, b) in gh.iter_mut().zip(grad) {
                *a += c[*i] * b;
            }
        }
        for (i, v, _) in &sp.funcs {
            dth += dc[*i] * v;
        }
        let eg: f64 = g.iter().zip(&gh).map(|(a, b)| (a - b) * (a - b)).sum();
        let et = exact.time_derivative(&sp.x, t) - dth;
        acc += sp.weight * (eg + w * et * et);
    }
    acc
}

fn same_operator(a: &SlabOperator, b: &SlabOperator) -> bool {
    Arc::ptr_eq(&a.kt, &b.kt) && Arc::ptr_eq(&a.mt, &b.mt) && Arc::ptr_eq(&a.mx, &b.mx) && Arc::ptr_eq(&a.kx, &b.kx)
}

/// Euclidean norm of a list of slab vectors.
pub fn global_norm(u: &[SlabVector]) -> f64 {
    u.iter().map(|v| norm2(v).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(n_slabs: usize) -> SpaceTimeSystem {
        let setup = UniformSetup {
            dim: 1,
            p_space: 2,
            nel_space: 3,
            p_time: 2,
            nel_time: 1,
            n_slabs,
            slab_length: 0.25,
            theta: 0.1,
            t0: 0.0,
        };
        SpaceTimeSystem::uniform(&setup, Some(&Manufactured::SineExp { dim: 1 })).unwrap()
    }

    fn random_like(sys: &SpaceTimeSystem, seed: u64) -> Vec<SlabVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sys.zeros()
            .into_iter()
            .map(|v| v.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn manufactured_source_matches_derivatives() {
        let m = Manufactured::SineExp { dim: 2 };
        let (x, t) = ([0.3, 0.7], 0.4);
        let pi = std::f64::consts::PI;
        let expected = (2.0 * pi * pi - 1.0) * m.value(&x, t);
        assert!((m.source(&x, t) - expected).abs() < 1e-12);
        let q = Manufactured::Quadratic { dim: 1 };
        assert!((q.source(&[0.2], 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_slab_matvec_is_slab_matvec() {
        let sys = tiny(1);
        let u = random_like(&sys, 1);
        let r = sys.global_matvec(&u).unwrap();
        assert_eq!(r[0], slab_matvec(&sys.slabs[0], &u[0]).unwrap());
    }

    #[test]
    fn matvec_matches_dense_assembly() {
        let sys = tiny(3);
        let u = random_like(&sys, 2);
        let r: Vec<f64> = sys.global_matvec(&u).unwrap().concat();
        let d = sys.to_dense().mul_vec(&u.concat());
        for (a, b) in r.iter().zip(&d) {
            assert!((a - b).abs() < 1e-12);
        }
        let nt = sys.couplings[0].nt();
        assert_eq!(nt.as_slice().iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(nt[(0, nt.cols() - 1)], 1.0);
    }

    #[test]
    fn continuous_in_time_function_has_cancelling_jumps() {
        // u_h equal to the same spatial vector on every time coefficient is
        // constant in time; the coupling then equals the initial trace term of A_n.
        let sys = tiny(2);
        let nx = sys.space.n_dofs();
        let c: Vec<f64> = (0..nx).map(|i| (i as f64 + 1.0).sqrt()).collect();
        let u: Vec<SlabVector> = sys.slabs.iter().map(|s| c.repeat(s.n_t())).collect();
        let mut b = vec![0.0; sys.slabs[1].size()];
        sys.couplings[0].apply_acc(1.0, &u[0], &mut b);
        let mc = sys.slabs[1].mx.matvec(&c);
        for k in 0..nx {
            assert!((b[k] - mc[k]).abs() < 1e-14);
        }
        assert!(b[nx..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sequential_solve_residual() {
        for n in [1, 3] {
            let sys = tiny(n);
            let u = sys.sequential_solve().unwrap();
            let r = sys.residual(&u, &sys.rhs).unwrap();
            assert!(global_norm(&r) <= 1e-10 * global_norm(&sys.rhs));
        }
        let setup = UniformSetup {
            dim: 1,
            n_slabs: 2,
            ..UniformSetup::default()
        };
        let sys = SpaceTimeSystem::uniform(&setup, None).unwrap();
        let u = sys.sequential_solve().unwrap();
        assert!(u.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn dg_error_of_discrete_function_vanishes() {
        let setup = UniformSetup {
            dim: 1,
            p_space: 2,
            nel_space: 4,
            p_time: 1,
            nel_time: 2,
            n_slabs: 2,
            slab_length: 0.5,
            theta: 0.1,
            t0: 0.0,
        };
        let q = Manufactured::Quadratic { dim: 1 };
        let sys = SpaceTimeSystem::uniform(&setup, Some(&q)).unwrap();
        let u = sys.l2_project(&|x: &[f64], t: f64| q.value(x, t)).unwrap();
        assert!(sys.dg_error(&u, &q).unwrap() < 1e-10);
        // the exact solution of this stationary problem is discrete, so the solver recovers it
        let uh = sys.sequential_solve().unwrap();
        assert!(sys.dg_error(&uh, &q).unwrap() < 1e-9);
    }

    #[test]
    fn dg_error_of_zero_is_norm_of_solution() {
        let setup = UniformSetup {
            dim: 1,
            p_space: 2,
            nel_space: 8,
            p_time: 2,
            nel_time: 2,
            n_slabs: 1,
            slab_length: 1.0,
            theta: 0.0,
            t0: 0.0,
        };
        let m = Manufactured::SineExp { dim: 1 };
        let sys = SpaceTimeSystem::uniform(&setup, Some(&m)).unwrap();
        let e = sys.dg_error(&sys.zeros(), &m).unwrap();
        // ∫₀¹∫₀¹ π² cos²(πx) e^{−2t} + ½∫ sin²(πx) (1 + e^{−2})
        let pi = std::f64::consts::PI;
        let exact = (pi * pi / 2.0 * (1.0 - (-2.0f64).exp()) / 2.0 + 0.25 * (1.0 + (-2.0f64).exp())).sqrt();
        assert!((e - exact).abs() < 1e-6 * exact, "{e} vs {exact}");
    }

    #[test]
    fn convergence_order_in_one_dimension() {
        let m = Manufactured::SineExp { dim: 1 };
        for p in [1usize, 2] {
            let errs: Vec<f64> = (2..5)
                .map(|r| {
                    let setup = UniformSetup {
                        dim: 1,
                        p_space: p,
                        nel_space: 1 << r,
                        p_time: p,
                        nel_time: 1 << (r - 2),
                        n_slabs: 4,
                        slab_length: 0.25,
                        theta: 0.1,
                        t0: 0.0,
                    };
                    let sys = SpaceTimeSystem::uniform(&setup, Some(&m)).unwrap();
                    sys.dg_error(&sys.sequential_solve().unwrap(), &m).unwrap()
                })
                .collect();
            let rate = (errs[1] / errs[2]).log2();
            assert!(
                rate > p as f64 - 0.25 && rate < p as f64 + 0.35,
                "p={p}: {errs:?} rate {rate}"
            );
        }
    }

    #[test]
    fn solution_round_trip() {
        let sys = tiny(2);
        let u = random_like(&sys, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        sys.write_solution(&path, &u).unwrap();
        let back = read_solution(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((nt, nx, v), (s, w)) in back.iter().zip(sys.slabs.iter().zip(&u)) {
            assert_eq!((*nt, *nx), (s.n_t(), s.n_x()));
            assert_eq!(v, w);
        }
        let meta = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(meta.contains("layout=time-major"));
    }
}
