//! Time-parallel space-time multigrid: damped block-Jacobi smoothing with
//! approximate slab inverses, slab-merging time transfers, knot-insertion
//! space transfers, V-cycles, and flexible GMRES preconditioned by a V-cycle.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::assembly::SlabVector;
use crate::denselin::{dot, DenseMatrix};
use crate::error::{Error, Result};
use crate::slab_inverse::{time_transform, InverseOptions, SlabInverse, Strategy};
use crate::spacetime::{global_norm, Problem, SpaceTimeSystem, UniformSetup};
use crate::sparse::SparseMatrix;
use crate::spatial_solvers::{SolveReport, SpdMethod};
use crate::splines::{knot_insertion_dense, KnotVector, SpaceBasis};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmootherConfig {
    pub omega: f64,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub strategy: Strategy,
    pub inner_tol: f64,
    pub spd_method: SpdMethod,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            omega: 0.5,
            pre_sweeps: 2,
            post_sweeps: 2,
            strategy: Strategy::RSchur,
            inner_tol: 1e-4,
            spd_method: SpdMethod::Cholesky,
        }
    }
}

/// Which directions are coarsened from one level to the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coarsening {
    Time,
    Space,
    Both,
}

/// Rule choosing the coarsening of each level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Time on even levels, space on odd levels; falls back to the other
    /// direction when the preferred one is exhausted.
    #[default]
    Alternating,
    TimeOnly,
    SpaceOnly,
    Simultaneous,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgConfig {
    pub smoother: SmootherConfig,
    /// Levels with at most this many unknowns are solved exactly.
    pub coarse_cap: usize,
    pub max_levels: usize,
    pub schedule: Schedule,
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for MgConfig {
    fn default() -> Self {
        MgConfig {
            smoother: SmootherConfig::default(),
            coarse_cap: 5000,
            max_levels: 20,
            schedule: Schedule::Alternating,
            tol: 1e-8,
            max_cycles: 50,
        }
    }
}

/// Embedding of one coarse slab into the broken space of two fine slabs:
/// `u_left = (E_L ⊗ I) c`, `u_right = (E_R ⊗ I) c`.
#[derive(Clone, Debug)]
pub struct TimeTransfer {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

impl TimeTransfer {
    /// Transfer for a coarse slab of degree `p` with `nel` uniform elements
    /// on `[a, b]`, split at the midpoint into two fine slabs with `nel`
    /// elements each.
    pub fn new(p: usize, nel: usize, a: f64, b: f64) -> Result<Self> {
        let coarse = KnotVector::uniform(p, nel, a, b)?;
        let mut knots = vec![a; p + 1];
        for i in 1..2 * nel {
            let t = a + (b - a) * i as f64 / (2 * nel) as f64;
            let reps = if i == nel { p + 1 } else { 1 };
            knots.extend(std::iter::repeat_n(t, reps));
        }
        knots.extend(std::iter::repeat_n(b, p + 1));
        let broken = KnotVector::from_knots(p, knots)?;
        let e = knot_insertion_dense(&coarse, &broken)?;
        let n_half = nel + p;
        let nc = e.cols();
        Ok(TimeTransfer {
            left: DenseMatrix::from_fn(n_half, nc, |i, j| e[(i, j)]),
            right: DenseMatrix::from_fn(n_half, nc, |i, j| e[(n_half + i, j)]),
        })
    }
}

/// One level of the hierarchy (level 0 is the finest).
#[derive(Clone, Debug)]
pub struct Level {
    pub setup: UniformSetup,
    pub system: SpaceTimeSystem,
    /// Approximate slab inverses (empty on the coarsest level).
    pub smoother: Vec<Arc<SlabInverse>>,
    /// Coarsening towards the next level.
    pub coarsening: Option<Coarsening>,
    pub time_transfer: Option<TimeTransfer>,
    /// Space prolongation (fine × coarse active functions).
    pub space_transfer: Option<SparseMatrix>,
}

#[derive(Clone, Debug)]
pub struct MgHierarchy {
    pub levels: Vec<Level>,
    pub config: MgConfig,
    coarse_inverses: Vec<Arc<SlabInverse>>,
    /// Seconds spent factorizing (assembly excluded).
    pub setup_seconds: f64,
}

/// Result of an iterative space-time solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MgReport {
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual after every cycle (entry 0 is 1).
    pub history: Vec<f64>,
    pub seconds: f64,
}

impl MgReport {
    pub fn relative_residual(&self) -> f64 {
        self.history.last().copied().unwrap_or(1.0)
    }

    /// Geometric mean of residual ratios from cycle `skip` on.
    pub fn convergence_factor(&self, skip: usize) -> f64 {
        let h = &self.history;
        if h.len() <= skip + 1 {
            return f64::NAN;
        }
        let n = (h.len() - 1 - skip) as f64;
        (h[h.len() - 1] / h[skip]).powf(1.0 / n)
    }
}

fn can_coarsen_time(s: &UniformSetup) -> bool {
    s.n_slabs >= 2 && s.n_slabs.is_multiple_of(2)
}

fn can_coarsen_space(s: &UniformSetup) -> bool {
    s.nel_space >= 2 && s.nel_space.is_multiple_of(2) && s.nel_space / 2 + s.p_space >= 3
}

fn coarsen(s: &UniformSetup, c: Coarsening) -> UniformSetup {
    let mut out = *s;
    if matches!(c, Coarsening::Time | Coarsening::Both) {
        out.n_slabs /= 2;
        out.slab_length *= 2.0;
    }
    if matches!(c, Coarsening::Space | Coarsening::Both) {
        out.nel_space /= 2;
    }
    out
}

fn choose(schedule: Schedule, level: usize, s: &UniformSetup) -> Option<Coarsening> {
    let (t, x) = (can_coarsen_time(s), can_coarsen_space(s));
    match schedule {
        Schedule::TimeOnly => t.then_some(Coarsening::Time),
        Schedule::SpaceOnly => x.then_some(Coarsening::Space),
        Schedule::Simultaneous => match (t, x) {
            (true, true) => Some(Coarsening::Both),
            (true, false) => Some(Coarsening::Time),
            (false, true) => Some(Coarsening::Space),
            _ => None,
        },
        Schedule::Alternating => {
            let prefer_time = level.is_multiple_of(2);
            match (prefer_time, t, x) {
                (true, true, _) | (false, true, false) => Some(Coarsening::Time),
                (false, _, true) | (true, false, true) => Some(Coarsening::Space),
                _ => None,
            }
        }
    }
}

fn smoother_inverses(sys: &SpaceTimeSystem, cfg: &SmootherConfig) -> Result<Vec<Arc<SlabInverse>>> {
    let opts = InverseOptions {
        inner_tol: cfg.inner_tol,
        spd_method: cfg.spd_method,
        ..InverseOptions::default()
    };
    let mut out: Vec<Arc<SlabInverse>> = Vec::with_capacity(sys.n_slabs());
    for (n, s) in sys.slabs.iter().enumerate() {
        let shared = out
            .iter()
            .find(|inv| {
                let o = inv.operator();
                Arc::ptr_eq(&o.kt, &s.kt)
                    && Arc::ptr_eq(&o.mt, &s.mt)
                    && Arc::ptr_eq(&o.kx, &s.kx)
                    && Arc::ptr_eq(&o.mx, &s.mx)
            })
            .cloned();
        out.push(match shared {
            Some(inv) => inv,
            None => Arc::new(SlabInverse::build_with(s, cfg.strategy, &opts).map_err(|e| e.in_slab(n))?),
        });
    }
    Ok(out)
}

impl MgHierarchy {
    /// Builds all levels by reassembling the coarse discretizations.
    pub fn new(setup: &UniformSetup, problem: Option<&dyn Problem>, config: MgConfig) -> Result<Self> {
        let sm = &config.smoother;
        if !(sm.omega > 0.0 && sm.omega <= 1.0) {
            return Err(Error::Parameter(format!("damping {} must lie in (0, 1]", sm.omega)));
        }
        let mut setups = vec![*setup];
        let mut coarsenings = Vec::new();
        loop {
            let s = *setups.last().unwrap();
            if s.n_dofs() <= config.coarse_cap || setups.len() >= config.max_levels {
                break;
            }
            match choose(config.schedule, setups.len() - 1, &s) {
                Some(c) => {
                    coarsenings.push(c);
                    setups.push(coarsen(&s, c));
                }
                None => break,
            }
        }
        let mut setup_seconds = 0.0;
        let mut levels = Vec::with_capacity(setups.len());
        let last = setups.len() - 1;
        for (l, s) in setups.iter().enumerate() {
            let system = SpaceTimeSystem::uniform(s, if l == 0 { problem } else { None })?;
            let clock = Instant::now();
            let smoother = if l < last {
                smoother_inverses(&system, sm)?
            } else {
                Vec::new()
            };
            setup_seconds += clock.elapsed().as_secs_f64();
            let coarsening = coarsenings.get(l).copied();
            let (mut time_transfer, mut space_transfer) = (None, None);
            if let Some(c) = coarsening {
                let cs = &setups[l + 1];
                if matches!(c, Coarsening::Time | Coarsening::Both) {
                    time_transfer = Some(TimeTransfer::new(s.p_time, s.nel_time, 0.0, cs.slab_length)?);
                }
                if matches!(c, Coarsening::Space | Coarsening::Both) {
                    let coarse = SpaceBasis::uniform_dirichlet(s.dim, s.p_space, cs.nel_space)?;
                    space_transfer = Some(coarse.prolongation(&system.space)?);
                }
            }
            levels.push(Level {
                setup: *s,
                system,
                smoother,
                coarsening,
                time_transfer,
                space_transfer,
            });
        }
        let clock = Instant::now();
        let coarse_inverses = levels[last].system.direct_inverses()?;
        setup_seconds += clock.elapsed().as_secs_f64();
        Ok(MgHierarchy {
            levels,
            config,
            coarse_inverses,
            setup_seconds,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &SpaceTimeSystem {
        &self.levels[0].system
    }

    /// One damped block-Jacobi sweep `u ← u + ω D⁻¹ (f − L u)`.
    pub fn smooth(&self, level: usize, u: &mut [SlabVector], f: &[SlabVector]) -> Result<()> {
        let lv = &self.levels[level];
        if lv.smoother.is_empty() {
            return Err(Error::Schedule(format!("level {level} has no smoother")));
        }
        smooth_sweep(&lv.system, &lv.smoother, self.config.smoother.omega, u, f)
    }

    /// Coarse-level residual `Rᵀ r`.
    pub fn restrict(&self, level: usize, r: &[SlabVector]) -> Result<Vec<SlabVector>> {
        let lv = &self.levels[level];
        let nx = lv.system.space.n_dofs();
        let mut out: Vec<SlabVector> = match &lv.time_transfer {
            Some(tt) => {
                if !r.len().is_multiple_of(2) {
                    return Err(Error::Schedule(format!("odd slab count {}", r.len())));
                }
                let (lt, rt) = (tt.left.transpose(), tt.right.transpose());
                r.par_chunks(2)
                    .map(|pair| {
                        let mut c = time_transform(&lt, &pair[0], nx);
                        for (a, b) in c.iter_mut().zip(time_transform(&rt, &pair[1], nx)) {
                            *a += b;
                        }
                        c
                    })
                    .collect()
            }
            None => r.to_vec(),
        };
        if let Some(p) = &lv.space_transfer {
            let pt = p.transpose();
            out = out.par_iter().map(|v| map_rows(&pt, v, nx)).collect();
        }
        Ok(out)
    }

    /// Fine-level correction `P e`.
    pub fn prolong(&self, level: usize, e: &[SlabVector]) -> Result<Vec<SlabVector>> {
        let lv = &self.levels[level];
        let mut cur: Vec<SlabVector> = match &lv.space_transfer {
            Some(p) => {
                let ncx = p.n_cols();
                e.par_iter().map(|v| map_rows(p, v, ncx)).collect()
            }
            None => e.to_vec(),
        };
        if let Some(tt) = &lv.time_transfer {
            let nx = lv.system.space.n_dofs();
            cur = cur
                .par_iter()
                .flat_map_iter(|c| [time_transform(&tt.left, c, nx), time_transform(&tt.right, c, nx)])
                .collect();
        }
        Ok(cur)
    }

    /// One V-cycle on `level` improving `u` in place.
    pub fn v_cycle(&self, level: usize, u: &mut Vec<SlabVector>, f: &[SlabVector]) -> Result<()> {
        let lv = &self.levels[level];
        if level + 1 == self.levels.len() {
            *u = lv.system.sequential_solve_with(&self.coarse_inverses, f)?;
            return Ok(());
        }
        for _ in 0..self.config.smoother.pre_sweeps {
            self.smooth(level, u, f)?;
        }
        let r = lv.system.residual(u, f)?;
        let rc = self.restrict(level, &r)?;
        let mut ec = self.levels[level + 1].system.zeros();
        self.v_cycle(level + 1, &mut ec, &rc)?;
        let e = self.prolong(level, &ec)?;
        for (ui, ei) in u.iter_mut().zip(&e) {
            for (a, b) in ui.iter_mut().zip(ei) {
                *a += b;
            }
        }
        for _ in 0..self.config.smoother.post_sweeps {
            self.smooth(level, u, f)?;
        }
        Ok(())
    }

    /// V-cycle iteration from a zero initial guess until the residual is
    /// reduced by `config.tol` or `config.max_cycles` is reached.
    pub fn solve(&self, f: &[SlabVector]) -> Result<(Vec<SlabVector>, MgReport)> {
        let clock = Instant::now();
        let sys = self.finest();
        let mut u = sys.zeros();
        let r0 = global_norm(f);
        let mut report = MgReport {
            history: vec![1.0],
            ..MgReport::default()
        };
        if r0 == 0.0 {
            report.converged = true;
            return Ok((u, report));
        }
        for it in 1..=self.config.max_cycles {
            self.v_cycle(0, &mut u, f)?;
            let rel = global_norm(&sys.residual(&u, f)?) / r0;
            report.history.push(rel);
            report.iterations = it;
            if rel <= self.config.tol {
                report.converged = true;
                break;
            }
            if !rel.is_finite() {
                break;
            }
        }
        report.seconds = clock.elapsed().as_secs_f64();
        Ok((u, report))
    }

    /// A single V-cycle from zero, used as a preconditioner.
    pub fn precondition(&self, r: &[SlabVector]) -> Result<Vec<SlabVector>> {
        let mut u = self.finest().zeros();
        self.v_cycle(0, &mut u, r)?;
        Ok(u)
    }
}

/// `u ← u + ω D⁻¹ (f − L u)` with all slab updates computed from the same `u`.
pub fn smooth_sweep(
    sys: &SpaceTimeSystem,
    inverses: &[Arc<SlabInverse>],
    omega: f64,
    u: &mut [SlabVector],
    f: &[SlabVector],
) -> Result<()> {
    let r = sys.residual(u, f)?;
    let corr: Vec<SlabVector> = r
        .par_iter()
        .enumerate()
        .map(|(n, rn)| inverses[n].apply(rn).map_err(|e| e.in_slab(n)))
        .collect::<Result<_>>()?;
    for (ui, ci) in u.iter_mut().zip(corr) {
        for (a, b) in ui.iter_mut().zip(ci) {
            *a += omega * b;
        }
    }
    Ok(())
}

/// Applies `P` to every time row of a time-major slab vector with `nx_in` columns.
fn map_rows(p: &SparseMatrix, v: &[f64], nx_in: usize) -> Vec<f64> {
    let nt = v.len() / nx_in;
    let nout = p.n_rows();
    let mut out = vec![0.0; nt * nout];
    for i in 0..nt {
        p.matvec_into(&v[i * nx_in..(i + 1) * nx_in], &mut out[i * nout..(i + 1) * nout]);
    }
    out
}

/// Preconditioner callback `z = M⁻¹ r` over slab vectors.
pub type Preconditioner<'a> = &'a dyn Fn(&[SlabVector]) -> Result<Vec<SlabVector>>;

/// Right-preconditioned restarted flexible GMRES for `L_h u = f` from a zero
/// initial guess; stops when the true residual is below `tol · ‖f‖`.
pub fn gmres_solve(
    sys: &SpaceTimeSystem,
    f: &[SlabVector],
    precond: Option<Preconditioner<'_>>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<SlabVector>, SolveReport)> {
    let sizes: Vec<usize> = sys.slabs.iter().map(|s| s.size()).collect();
    let split = |v: &[f64]| -> Vec<SlabVector> {
        let mut out = Vec::with_capacity(sizes.len());
        let mut o = 0;
        for &s in &sizes {
            out.push(v[o..o + s].to_vec());
            o += s;
        }
        out
    };
    let apply_a = |v: &[f64]| -> Result<Vec<f64>> { Ok(sys.global_matvec(&split(v))?.concat()) };
    let apply_m = |v: &[f64]| -> Result<Vec<f64>> {
        match precond {
            Some(p) => Ok(p(&split(v))?.concat()),
            None => Ok(v.to_vec()),
        }
    };
    let b: Vec<f64> = f.concat();
    let n = b.len();
    let bnorm = norm(&b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            split(&x),
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        ));
    }
    let m = restart.max(1);
    let mut total = 0;
    let mut r = b.clone();
    let mut rnorm = bnorm;
    while total < max_iter {
        let cycle_start = rnorm;
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / rnorm).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = rnorm;
        let mut k = 0;
        while k < m && total < max_iter {
            let zk = apply_m(&v[k])?;
            let mut w = apply_a(&zk)?;
            z.push(zk);
            for i in 0..=k {
                let hik = dot(&w, &v[i]);
                h[i][k] = hik;
                for (a, b) in w.iter_mut().zip(&v[i]) {
                    *a -= hik * b;
                }
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                return Err(Error::Breakdown {
                    method: "GMRES",
                    iteration: total + 1,
                });
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            if g[k].abs() <= tol * bnorm || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|a| a / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (a, b) in x.iter_mut().zip(&z[j]) {
                *a += yj * b;
            }
        }
        let ax = apply_a(&x)?;
        r = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        rnorm = norm(&r);
        if rnorm <= tol * bnorm {
            return Ok((
                split(&x),
                SolveReport {
                    iterations: total,
                    residual: rnorm / bnorm,
                    converged: true,
                },
            ));
        }
        if rnorm >= cycle_start * (1.0 - 1e-12) {
            return Err(Error::Stagnation {
                iterations: total,
                residual: rnorm / bnorm,
            });
        }
    }
    Err(Error::Convergence {
        method: "GMRES",
        iterations: total,
        residual: rnorm / bnorm,
    })
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denselin::real_schur;
    use crate::spacetime::Manufactured;
    use crate::splines::make_uniform_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_setup(n_slabs: usize) -> UniformSetup {
        UniformSetup {
            dim: 1,
            p_space: 2,
            nel_space: 8,
            p_time: 2,
            nel_time: 2,
            n_slabs,
            slab_length: 0.1,
            theta: 0.01,
            t0: 0.0,
        }
    }

    fn random_like(sys: &SpaceTimeSystem, seed: u64) -> Vec<SlabVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sys.zeros()
            .into_iter()
            .map(|v| v.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn exact_inverses(sys: &SpaceTimeSystem) -> Vec<Arc<SlabInverse>> {
        sys.direct_inverses().unwrap()
    }

    #[test]
    fn single_slab_undamped_sweep_is_exact() {
        let sys = SpaceTimeSystem::uniform(&small_setup(1), Some(&Manufactured::SineExp { dim: 1 })).unwrap();
        let mut u = sys.zeros();
        smooth_sweep(&sys, &exact_inverses(&sys), 1.0, &mut u, &sys.rhs).unwrap();
        let r = sys.residual(&u, &sys.rhs).unwrap();
        assert!(global_norm(&r) < 1e-12 * global_norm(&sys.rhs));
    }

    #[test]
    fn smoother_fixed_point() {
        let sys = SpaceTimeSystem::uniform(&small_setup(3), Some(&Manufactured::SineExp { dim: 1 })).unwrap();
        let exact = sys.sequential_solve().unwrap();
        for strategy in Strategy::ALL {
            let cfg = SmootherConfig {
                strategy,
                inner_tol: 1e-10,
                ..SmootherConfig::default()
            };
            let inv = smoother_inverses(&sys, &cfg).unwrap();
            let mut u = exact.clone();
            smooth_sweep(&sys, &inv, 0.5, &mut u, &sys.rhs).unwrap();
            let diff: f64 = u
                .iter()
                .zip(&exact)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            assert!(diff < 1e-9, "{strategy}: {diff}");
        }
    }

    #[test]
    fn damped_jacobi_contracts() {
        let setup = UniformSetup {
            dim: 1,
            p_space: 1,
            nel_space: 4,
            p_time: 1,
            nel_time: 2,
            n_slabs: 3,
            slab_length: 0.1,
            theta: 0.0,
            t0: 0.0,
        };
        let sys = SpaceTimeSystem::uniform(&setup, None).unwrap();
        let inv = exact_inverses(&sys);
        let n = sys.n_dofs();
        let mut e = DenseMatrix::zeros(n, n);
        let zero = sys.zeros();
        for j in 0..n {
            let mut flat = vec![0.0; n];
            flat[j] = 1.0;
            let mut u = Vec::new();
            let mut o = 0;
            for s in &sys.slabs {
                u.push(flat[o..o + s.size()].to_vec());
                o += s.size();
            }
            smooth_sweep(&sys, &inv, 0.5, &mut u, &zero).unwrap();
            e.set_column(j, &u.concat());
        }
        let rho = real_schur(&e)
            .unwrap()
            .eigenvalues()
            .iter()
            .map(|l| l.abs())
            .fold(0.0, f64::max);
        assert!(rho < 1.0, "spectral radius {rho}");
    }

    #[test]
    fn time_transfer_embeds_coarse_functions() {
        let (p, nel) = (3, 2);
        let tt = TimeTransfer::new(p, nel, 0.0, 0.2).unwrap();
        let coarse = make_uniform_basis(p, nel, (0.0, 0.2)).unwrap();
        let left = make_uniform_basis(p, nel, (0.0, 0.1)).unwrap();
        let right = make_uniform_basis(p, nel, (0.1, 0.2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c: Vec<f64> = (0..coarse.n_basis()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cl = tt.left.mul_vec(&c);
        let cr = tt.right.mul_vec(&c);
        for k in 0..100 {
            let t = 0.2 * k as f64 / 99.0;
            let want = coarse.eval_function(&c, t, 0).unwrap();
            let got = if t <= 0.1 {
                left.eval_function(&cl, t, 0).unwrap()
            } else {
                right.eval_function(&cr, t, 0).unwrap()
            };
            assert!((want - got).abs() < 1e-12);
        }
        let ones = vec![1.0; coarse.n_basis()];
        assert!(tt.left.mul_vec(&ones).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn transfers_are_adjoint() {
        let setup = UniformSetup {
            nel_space: 4,
            n_slabs: 4,
            ..small_setup(4)
        };
        let cfg = MgConfig {
            coarse_cap: 0,
            max_levels: 3,
            schedule: Schedule::Alternating,
            ..MgConfig::default()
        };
        let h = MgHierarchy::new(&setup, None, cfg).unwrap();
        assert_eq!(h.levels[0].coarsening, Some(Coarsening::Time));
        assert_eq!(h.levels[1].coarsening, Some(Coarsening::Space));
        for l in 0..2 {
            let c = random_like(&h.levels[l + 1].system, 1 + l as u64);
            let r = random_like(&h.levels[l].system, 5 + l as u64);
            let pc = h.prolong(l, &c).unwrap();
            let rr = h.restrict(l, &r).unwrap();
            let lhs: f64 = pc.iter().zip(&r).map(|(a, b)| dot(a, b)).sum();
            let rhs: f64 = c.iter().zip(&rr).map(|(a, b)| dot(a, b)).sum();
            assert!((lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn v_cycle_converges_for_every_strategy() {
        let setup = UniformSetup {
            dim: 1,
            p_space: 3,
            nel_space: 16,
            p_time: 3,
            nel_time: 2,
            n_slabs: 8,
            slab_length: 0.1,
            theta: 0.01,
            t0: 0.0,
        };
        for strategy in Strategy::ALL {
            let cfg = MgConfig {
                smoother: SmootherConfig {
                    strategy,
                    ..SmootherConfig::default()
                },
                coarse_cap: 60,
                ..MgConfig::default()
            };
            let h = MgHierarchy::new(&setup, Some(&Manufactured::SineExp { dim: 1 }), cfg).unwrap();
            assert!(h.n_levels() >= 3);
            let (u, rep) = h.solve(&h.finest().rhs).unwrap();
            assert!(rep.converged && rep.iterations <= 12, "{strategy}: {rep:?}");
            let exact = h.finest().sequential_solve().unwrap();
            let err: f64 = u
                .iter()
                .zip(&exact)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "{strategy}: {err}");
        }
    }

    #[test]
    fn gmres_with_exact_preconditioner_takes_one_step() {
        let sys = SpaceTimeSystem::uniform(&small_setup(3), Some(&Manufactured::SineExp { dim: 1 })).unwrap();
        let inv = exact_inverses(&sys);
        let pre = |r: &[SlabVector]| sys.sequential_solve_with(&inv, r);
        let (_, rep) = gmres_solve(&sys, &sys.rhs, Some(&pre), 1e-10, 30, 100).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn gmres_without_preconditioner_matches_dense_solve() {
        let setup = UniformSetup {
            nel_space: 4,
            ..small_setup(2)
        };
        let sys = SpaceTimeSystem::uniform(&setup, Some(&Manufactured::SineExp { dim: 1 })).unwrap();
        let (u, rep) = gmres_solve(&sys, &sys.rhs, None, 1e-12, 200, 2000).unwrap();
        assert!(rep.converged);
        let exact = crate::denselin::Lu::factor(&sys.to_dense())
            .unwrap()
            .solve(&sys.rhs.concat());
        for (a, b) in u.concat().iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9 * exact.iter().map(|v| v.abs()).fold(1.0, f64::max));
        }
    }

    #[test]
    fn gmres_with_v_cycle() {
        let setup = UniformSetup {
            nel_space: 16,
            n_slabs: 4,
            ..small_setup(4)
        };
        let cfg = MgConfig {
            coarse_cap: 60,
            ..MgConfig::default()
        };
        let h = MgHierarchy::new(&setup, Some(&Manufactured::SineExp { dim: 1 }), cfg).unwrap();
        let pre = |r: &[SlabVector]| h.precondition(r);
        let (_, rep) = gmres_solve(h.finest(), &h.finest().rhs, Some(&pre), 1e-8, 30, 100).unwrap();
        assert!(rep.converged && rep.iterations <= 10, "{rep:?}");
    }
}
