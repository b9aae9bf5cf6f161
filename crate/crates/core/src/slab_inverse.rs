//! Application of the slab inverse `A⁻¹`, `A = K_t ⊗ M_x + M_t ⊗ K_x`.
//!
//! With `M_t⁻¹K_t = X Z X⁻¹` the inverse factors as
//! `A⁻¹ = (X ⊗ I)(Z ⊗ M_x + I ⊗ K_x)⁻¹(Y ⊗ I)` where `Y = (M_t X)⁻¹` for the
//! eigen-decomposition and `Y = Qᵀ M_t⁻¹` (`Qᴴ M_t⁻¹`) for the real (complex)
//! Schur form. The middle factor is block diagonal or block triangular in
//! time, so only shifted spatial problems `K_x + λ M_x` are ever solved.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{SlabOperator, SlabVector};
use crate::complex::C64;
use crate::denselin::{
    complex_from_real, cond_2norm_complex, generalized_eig, real_schur, sym_eigenvalues, CMatrix, DenseMatrix, Lu,
    SchurBlock,
};
use crate::error::{Error, Result};
use crate::sparse::BandedLu;
use crate::spatial_solvers::{
    minres_block_solve, BlockDiagPreconditioner, BlockSaddleOperator, PreconditionerVariant, ShiftedOperator,
    SpdMethod, SpdSolver,
};

/// How `A⁻¹` is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Banded LU of the assembled slab matrix.
    Direct,
    /// Diagonalization of `M_t⁻¹K_t`.
    Diag,
    /// Complex Schur form with a staggered backward sweep.
    CSchur,
    /// Real Schur form; complex pairs handled as real 2×2 block systems.
    RSchur,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Direct, Strategy::Diag, Strategy::CSchur, Strategy::RSchur];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::Diag => "diag",
            Strategy::CSchur => "cschur",
            Strategy::RSchur => "rschur",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Strategy::Direct),
            "diag" => Ok(Strategy::Diag),
            "cschur" => Ok(Strategy::CSchur),
            "rschur" => Ok(Strategy::RSchur),
            other => Err(Error::Parameter(format!(
                "unknown strategy '{other}' (expected direct, diag, cschur or rschur)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InverseOptions {
    pub inner_tol: f64,
    pub spd_method: SpdMethod,
    /// Largest accepted `cond₂(X)` for [`Strategy::Diag`].
    pub cond_cap: f64,
}

impl Default for InverseOptions {
    fn default() -> Self {
        InverseOptions {
            inner_tol: 1e-12,
            spd_method: SpdMethod::Cholesky,
            cond_cap: 1e8,
        }
    }
}

/// Spectral data deciding whether the decomposition strategies apply.
#[derive(Clone, Debug)]
pub struct TimeSpectrum {
    /// Generalized eigenvalues of `(K_t, M_t)`.
    pub eigenvalues: Vec<C64>,
    /// `min Re λ(K_t, M_t)`.
    pub min_real: f64,
    /// `min Re λ(M_t)`.
    pub mt_min_real: f64,
    /// Smallest eigenvalue of the symmetric part of `M_t`.
    pub mt_sym_min: f64,
}

impl TimeSpectrum {
    pub fn compute(kt: &DenseMatrix, mt: &DenseMatrix) -> Result<Self> {
        let mt_min_real = real_schur(mt)?
            .eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::INFINITY, f64::min);
        let mt_sym_min = sym_eigenvalues(&mt.symmetric_part())[0];
        let ge = generalized_eig(kt, mt)?;
        Ok(TimeSpectrum {
            eigenvalues: ge.eigenvalues(),
            min_real: ge.min_real_part(),
            mt_min_real,
            mt_sym_min,
        })
    }

    pub fn is_admissible(&self) -> bool {
        self.mt_min_real > 0.0 && self.min_real > 0.0
    }

    pub fn check(&self) -> Result<()> {
        if !(self.mt_min_real > 0.0) {
            return Err(Error::Admissibility(format!(
                "M_t has an eigenvalue with real part {:e}; use a smaller theta",
                self.mt_min_real
            )));
        }
        if let Some(l) = self.eigenvalues.iter().find(|l| !(l.re > 0.0)) {
            return Err(Error::Admissibility(format!(
                "generalized eigenvalue {l} has non-positive real part; use a smaller theta"
            )));
        }
        Ok(())
    }
}

/// Work performed by one application.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ApplyStats {
    /// Sequential stages (1 for Direct and Diag; number of diagonal
    /// blocks for the Schur variants).
    pub stages: usize,
    /// Shifted spatial problems addressed, one per eigenvalue or Schur block.
    pub inner_solves: usize,
    /// Spatial problems actually solved (conjugate partners are obtained by
    /// conjugation in Diag).
    pub computed_solves: usize,
    pub max_iterations: usize,
    pub total_iterations: usize,
}

impl ApplyStats {
    fn record(&mut self, iterations: usize) {
        self.computed_solves += 1;
        self.max_iterations = self.max_iterations.max(iterations);
        self.total_iterations += iterations;
    }
}

/// Solver for `(K_x + λ M_x) z = h` with complex `z`, `h`.
#[derive(Clone, Debug)]
enum ShiftSolver {
    Real(Arc<SpdSolver>),
    Complex {
        op: BlockSaddleOperator,
        prec: BlockDiagPreconditioner,
    },
}

impl ShiftSolver {
    fn solve(&self, re: &[f64], im: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        match self {
            ShiftSolver::Real(s) => {
                let (x, r1) = s.solve(re)?;
                let (y, r2) = s.solve(im)?;
                Ok((x, y, r1.iterations.max(r2.iterations)))
            }
            ShiftSolver::Complex { op, prec } => {
                let (x, y, rep) = minres_block_solve(op, prec, None, re, im, tol)?;
                Ok((x, y, rep.iterations))
            }
        }
    }
}

/// Factorizations of `K_x + γ M_x` shared across eigenvalues with equal shift.
struct SolverCache<'a> {
    op: &'a SlabOperator,
    opts: &'a InverseOptions,
    solvers: HashMap<u64, Arc<SpdSolver>>,
}

impl<'a> SolverCache<'a> {
    fn new(op: &'a SlabOperator, opts: &'a InverseOptions) -> Self {
        SolverCache {
            op,
            opts,
            solvers: HashMap::new(),
        }
    }

    fn shifted(&mut self, gamma: f64) -> Result<Arc<SpdSolver>> {
        if let Some(s) = self.solvers.get(&gamma.to_bits()) {
            return Ok(s.clone());
        }
        let sop = ShiftedOperator::new(self.op.kx.clone(), self.op.mx.clone(), gamma)?;
        let s = Arc::new(SpdSolver::new(sop, self.opts.spd_method, self.opts.inner_tol)?);
        self.solvers.insert(gamma.to_bits(), s.clone());
        Ok(s)
    }

    /// Solver for the block `[[α, β₁], [β₂, α]] ⊗ M_x + I ⊗ K_x`.
    fn block(&mut self, alpha: f64, beta1: f64, beta2: f64, variant: PreconditionerVariant) -> Result<ShiftSolver> {
        if !(alpha > 0.0) {
            return Err(Error::Admissibility(format!("real part {alpha:e} must be positive")));
        }
        if beta1 == 0.0 && beta2 == 0.0 {
            return Ok(ShiftSolver::Real(self.shifted(alpha)?));
        }
        let op = BlockSaddleOperator {
            k: self.op.kx.clone(),
            m: self.op.mx.clone(),
            alpha,
            beta1,
            beta2,
        };
        let (shift, scales) = match variant {
            PreconditionerVariant::Balanced => (beta2.abs(), (1.0, 1.0)),
            PreconditionerVariant::Scaled => ((beta1 * beta2).abs().sqrt(), (beta2.abs(), beta1.abs())),
        };
        let solver = self.shifted(alpha + shift)?;
        Ok(ShiftSolver::Complex {
            op,
            prec: BlockDiagPreconditioner {
                solver,
                scales,
                variant,
            },
        })
    }

    fn complex(&mut self, lambda: C64) -> Result<ShiftSolver> {
        self.block(lambda.re, -lambda.im, lambda.im, PreconditionerVariant::Balanced)
    }

    fn count(&self) -> usize {
        self.solvers.len()
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Direct {
        lu: BandedLu,
        /// `perm[new] = old`.
        perm: Vec<usize>,
    },
    Diag {
        x: CMatrix,
        y: CMatrix,
        lambdas: Vec<C64>,
        solvers: Vec<ShiftSolver>,
        /// `partner[i] = Some(j)` if `λ_i = conj(λ_j)` and `j < i`.
        partner: Vec<Option<usize>>,
    },
    CSchur {
        q: CMatrix,
        y: CMatrix,
        t: CMatrix,
        solvers: Vec<ShiftSolver>,
    },
    RSchur {
        q: DenseMatrix,
        y: DenseMatrix,
        t: DenseMatrix,
        blocks: Vec<SchurBlock>,
        solvers: Vec<ShiftSolver>,
    },
}

/// Prepared inverse of one slab operator; immutable after construction.
#[derive(Clone, Debug)]
pub struct SlabInverse {
    op: SlabOperator,
    strategy: Strategy,
    options: InverseOptions,
    spectrum: Option<TimeSpectrum>,
    cond_x: Option<f64>,
    n_factorizations: usize,
    kind: Kind,
}

impl SlabInverse {
    pub fn build(op: &SlabOperator, strategy: Strategy, inner_tol: f64) -> Result<Self> {
        Self::build_with(
            op,
            strategy,
            &InverseOptions {
                inner_tol,
                ..InverseOptions::default()
            },
        )
    }

    pub fn build_with(op: &SlabOperator, strategy: Strategy, options: &InverseOptions) -> Result<Self> {
        if strategy == Strategy::Direct {
            return Self::build_direct(op, options);
        }
        let spectrum = TimeSpectrum::compute(&op.kt, &op.mt)?;
        spectrum.check()?;
        let mut cache = SolverCache::new(op, options);
        let mut cond_x = None;
        let kind = match strategy {
            Strategy::Diag => {
                let ge = generalized_eig(&op.kt, &op.mt)?;
                let cond = cond_2norm_complex(&ge.x);
                cond_x = Some(cond);
                if !(cond <= options.cond_cap) {
                    return Err(Error::Conditioning {
                        cond,
                        cap: options.cond_cap,
                    });
                }
                let mx = op.mt.to_complex().matmul(&ge.x);
                let mut y = Lu::factor(&mx)?.inverse();
                let lambdas = ge.eigenvalues();
                let n = lambdas.len();
                let mut partner = vec![None; n];
                let mut solvers = Vec::with_capacity(n);
                for i in 0..n {
                    if i > 0 && lambdas[i].im < 0.0 && partner[i - 1].is_none() && lambdas[i - 1].im > 0.0 {
                        partner[i] = Some(i - 1);
                        for j in 0..n {
                            y[(i, j)] = y[(i - 1, j)].conj();
                        }
                    }
                    solvers.push(cache.complex(lambdas[i]).map_err(|e| e.at_eigenvalue(i))?);
                }
                Kind::Diag {
                    x: ge.x,
                    y,
                    lambdas,
                    solvers,
                    partner,
                }
            }
            Strategy::CSchur => {
                let a = Lu::factor(&op.mt)?;
                let rs = real_schur(&a.solve_matrix(&op.kt))?;
                let cs = complex_from_real(&rs);
                let y = cs.q.adjoint().matmul(&a.inverse().to_complex());
                let mut solvers = Vec::with_capacity(cs.t.rows());
                for i in 0..cs.t.rows() {
                    solvers.push(cache.complex(cs.t[(i, i)]).map_err(|e| e.at_eigenvalue(i))?);
                }
                Kind::CSchur {
                    q: cs.q,
                    y,
                    t: cs.t,
                    solvers,
                }
            }
            Strategy::RSchur => {
                let a = Lu::factor(&op.mt)?;
                let rs = real_schur(&a.solve_matrix(&op.kt))?;
                let y = rs.q.transpose().matmul(&a.inverse());
                let mut solvers = Vec::with_capacity(rs.blocks.len());
                for b in &rs.blocks {
                    let s = match *b {
                        SchurBlock::Real(k) => cache.shifted(rs.t[(k, k)]).map(ShiftSolver::Real),
                        SchurBlock::Pair(k) => {
                            let (b1, b2) = (rs.t[(k, k + 1)], rs.t[(k + 1, k)]);
                            if !(b1 * b2 < 0.0) {
                                return Err(Error::DegenerateBlock(k));
                            }
                            cache.block(rs.t[(k, k)], b1, b2, PreconditionerVariant::Scaled)
                        }
                    };
                    solvers.push(s.map_err(|e| e.at_eigenvalue(b.start()))?);
                }
                Kind::RSchur {
                    q: rs.q,
                    y,
                    t: rs.t,
                    blocks: rs.blocks,
                    solvers,
                }
            }
            Strategy::Direct => unreachable!(),
        };
        Ok(SlabInverse {
            op: op.clone(),
            strategy,
            options: *options,
            spectrum: Some(spectrum),
            cond_x,
            n_factorizations: cache.count(),
            kind,
        })
    }

    fn build_direct(op: &SlabOperator, options: &InverseOptions) -> Result<Self> {
        let a = op.to_sparse();
        let (nt, nx) = (op.n_t(), op.n_x());
        // space-major ordering keeps the band narrow when N_t is small
        let space_major: Vec<usize> = (0..nx).flat_map(|ix| (0..nt).map(move |it| it * nx + ix)).collect();
        let b = a.permute_symmetric(&space_major);
        let (mat, perm) = if b.bandwidth() < a.bandwidth() {
            (b, space_major)
        } else {
            (a, (0..nt * nx).collect())
        };
        let lu = BandedLu::factor(&mat)?;
        Ok(SlabInverse {
            op: op.clone(),
            strategy: Strategy::Direct,
            options: *options,
            spectrum: None,
            cond_x: None,
            n_factorizations: 1,
            kind: Kind::Direct { lu, perm },
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn operator(&self) -> &SlabOperator {
        &self.op
    }

    pub fn options(&self) -> &InverseOptions {
        &self.options
    }

    /// Spectral diagnostics (not computed for Direct).
    pub fn spectrum(&self) -> Option<&TimeSpectrum> {
        self.spectrum.as_ref()
    }

    /// `cond₂(X)` for Diag.
    pub fn cond_x(&self) -> Option<f64> {
        self.cond_x
    }

    /// Number of distinct spatial factorizations prepared.
    pub fn n_factorizations(&self) -> usize {
        self.n_factorizations
    }

    /// Number of 2×2 blocks in the real Schur form (RSchur only).
    pub fn n_pair_blocks(&self) -> usize {
        match &self.kind {
            Kind::RSchur { blocks, .. } => blocks.iter().filter(|b| matches!(b, SchurBlock::Pair(_))).count(),
            _ => 0,
        }
    }

    pub fn apply(&self, f: &[f64]) -> Result<SlabVector> {
        Ok(self.apply_with_stats(f)?.0)
    }

    pub fn apply_with_stats(&self, f: &[f64]) -> Result<(SlabVector, ApplyStats)> {
        let n = self.op.size();
        if f.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: f.len(),
            });
        }
        if f.iter().all(|v| *v == 0.0) {
            return Ok((vec![0.0; n], ApplyStats::default()));
        }
        match &self.kind {
            Kind::Direct { lu, perm } => {
                let mut b: Vec<f64> = perm.iter().map(|&o| f[o]).collect();
                lu.solve_in_place(&mut b);
                let mut u = vec![0.0; n];
                for (new, &old) in perm.iter().enumerate() {
                    u[old] = b[new];
                }
                Ok((
                    u,
                    ApplyStats {
                        stages: 1,
                        inner_solves: 1,
                        computed_solves: 1,
                        max_iterations: 1,
                        total_iterations: 1,
                    },
                ))
            }
            Kind::Diag {
                x,
                y,
                lambdas,
                solvers,
                partner,
            } => self.run_diag(f, x, y, lambdas, solvers, partner),
            Kind::CSchur { q, y, t, solvers } => self.run_cschur(f, q, y, t, solvers),
            Kind::RSchur {
                q,
                y,
                t,
                blocks,
                solvers,
            } => self.run_rschur(f, q, y, t, blocks, solvers),
        }
    }

    fn expect(&self, s: Strategy, f: &[f64]) -> Result<SlabVector> {
        if self.strategy != s {
            return Err(Error::Parameter(format!(
                "inverse was built for {}, not {s}",
                self.strategy
            )));
        }
        self.apply(f)
    }

    pub fn apply_direct(&self, f: &[f64]) -> Result<SlabVector> {
        self.expect(Strategy::Direct, f)
    }

    pub fn apply_diag(&self, f: &[f64]) -> Result<SlabVector> {
        self.expect(Strategy::Diag, f)
    }

    pub fn apply_cschur(&self, f: &[f64]) -> Result<SlabVector> {
        self.expect(Strategy::CSchur, f)
    }

    pub fn apply_rschur(&self, f: &[f64]) -> Result<SlabVector> {
        self.expect(Strategy::RSchur, f)
    }

    /// Solves `(K_x + λ_i M_x) z = h` for the `i`-th eigenvalue of a Diag
    /// inverse, returning `(Re z, Im z)`.
    pub fn eigen_solve(&self, i: usize, re: &[f64], im: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            Kind::Diag { solvers, .. } if i < solvers.len() => {
                let (x, y, _) = solvers[i]
                    .solve(re, im, self.options.inner_tol)
                    .map_err(|e| e.at_eigenvalue(i))?;
                Ok((x, y))
            }
            _ => Err(Error::Parameter(format!("no eigenvalue system {i}"))),
        }
    }

    /// Eigenvalues (Diag) or diagonal of `T` (CSchur) in solve order.
    pub fn shifts(&self) -> Vec<C64> {
        match &self.kind {
            Kind::Diag { lambdas, .. } => lambdas.clone(),
            Kind::CSchur { t, .. } => (0..t.rows()).map(|i| t[(i, i)]).collect(),
            Kind::RSchur { .. } | Kind::Direct { .. } => self
                .spectrum
                .as_ref()
                .map(|s| s.eigenvalues.clone())
                .unwrap_or_default(),
        }
    }

    /// Allowed imaginary residue: rounding level for exact inner solves,
    /// proportional to the inner tolerance otherwise.
    fn residue_tol(&self) -> f64 {
        1e-9_f64.max(10.0 * self.options.inner_tol)
    }

    fn run_diag(
        &self,
        f: &[f64],
        x: &CMatrix,
        y: &CMatrix,
        lambdas: &[C64],
        solvers: &[ShiftSolver],
        partner: &[Option<usize>],
    ) -> Result<(SlabVector, ApplyStats)> {
        let nx = self.op.n_x();
        let (gre, gim) = time_transform_real(y, f, nx);
        let tol = self.options.inner_tol;
        let own: Vec<usize> = (0..lambdas.len()).filter(|&i| partner[i].is_none()).collect();
        let solved: Vec<(usize, Vec<f64>, Vec<f64>, usize)> = own
            .par_iter()
            .map(|&i| {
                let s = i * nx..(i + 1) * nx;
                solvers[i]
                    .solve(&gre[s.clone()], &gim[s], tol)
                    .map(|(a, b, it)| (i, a, b, it))
                    .map_err(|e| e.at_eigenvalue(i))
            })
            .collect::<Result<_>>()?;
        let nt = lambdas.len();
        let mut wre = vec![0.0; nt * nx];
        let mut wim = vec![0.0; nt * nx];
        let mut stats = ApplyStats {
            stages: 1,
            inner_solves: nt,
            ..ApplyStats::default()
        };
        for (i, a, b, it) in solved {
            stats.record(it);
            wre[i * nx..(i + 1) * nx].copy_from_slice(&a);
            wim[i * nx..(i + 1) * nx].copy_from_slice(&b);
        }
        for i in 0..nt {
            if let Some(j) = partner[i] {
                for k in 0..nx {
                    wre[i * nx + k] = wre[j * nx + k];
                    wim[i * nx + k] = -wim[j * nx + k];
                }
            }
        }
        Ok((real_result(x, &wre, &wim, nx, self.residue_tol())?, stats))
    }

    fn run_cschur(
        &self,
        f: &[f64],
        q: &CMatrix,
        y: &CMatrix,
        t: &CMatrix,
        solvers: &[ShiftSolver],
    ) -> Result<(SlabVector, ApplyStats)> {
        let nx = self.op.n_x();
        let nt = t.rows();
        let (mut gre, mut gim) = time_transform_real(y, f, nx);
        let mut wre = vec![0.0; nt * nx];
        let mut wim = vec![0.0; nt * nx];
        let mut stats = ApplyStats {
            stages: nt,
            inner_solves: nt,
            ..ApplyStats::default()
        };
        for i in (0..nt).rev() {
            let s = i * nx..(i + 1) * nx;
            let (a, b, it) = solvers[i]
                .solve(&gre[s.clone()], &gim[s.clone()], self.options.inner_tol)
                .map_err(|e| e.at_eigenvalue(i))?;
            stats.record(it);
            let ma = self.op.mx.matvec(&a);
            let mb = self.op.mx.matvec(&b);
            // g_r -= T_ri M w_i for r < i
            for r in 0..i {
                let c = t[(r, i)];
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                for k in 0..nx {
                    gre[r * nx + k] -= c.re * ma[k] - c.im * mb[k];
                    gim[r * nx + k] -= c.re * mb[k] + c.im * ma[k];
                }
            }
            wre[s.clone()].copy_from_slice(&a);
            wim[s].copy_from_slice(&b);
        }
        Ok((real_result(q, &wre, &wim, nx, self.residue_tol())?, stats))
    }

    fn run_rschur(
        &self,
        f: &[f64],
        q: &DenseMatrix,
        y: &DenseMatrix,
        t: &DenseMatrix,
        blocks: &[SchurBlock],
        solvers: &[ShiftSolver],
    ) -> Result<(SlabVector, ApplyStats)> {
        let nx = self.op.n_x();
        let nt = t.rows();
        let mut g = time_transform(y, f, nx);
        let mut w = vec![0.0; nt * nx];
        let mut stats = ApplyStats {
            stages: blocks.len(),
            inner_solves: blocks.len(),
            ..ApplyStats::default()
        };
        let zeros = vec![0.0; nx];
        for (b, solver) in blocks.iter().zip(solvers).rev() {
            let k = b.start();
            let size = b.size();
            let (parts, it) = match solver {
                ShiftSolver::Real(s) => {
                    let (u, rep) = s.solve(&g[k * nx..(k + 1) * nx]).map_err(|e| e.at_eigenvalue(k))?;
                    (vec![u], rep.iterations)
                }
                ShiftSolver::Complex { op, prec } => {
                    let (u1, u2, rep) = minres_block_solve(
                        op,
                        prec,
                        None,
                        &g[k * nx..(k + 1) * nx],
                        &g[(k + 1) * nx..(k + 2) * nx],
                        self.options.inner_tol,
                    )
                    .map_err(|e| e.at_eigenvalue(k))?;
                    (vec![u1, u2], rep.iterations)
                }
            };
            debug_assert_eq!(parts.len(), size);
            stats.record(it);
            for (off, u) in parts.iter().enumerate() {
                let col = k + off;
                let mu = if u.iter().all(|v| *v == 0.0) {
                    zeros.clone()
                } else {
                    self.op.mx.matvec(u)
                };
                for r in 0..k {
                    let c = t[(r, col)];
                    if c != 0.0 {
                        for j in 0..nx {
                            g[r * nx + j] -= c * mu[j];
                        }
                    }
                }
                w[col * nx..(col + 1) * nx].copy_from_slice(u);
            }
        }
        Ok((time_transform(q, &w, nx), stats))
    }
}

/// `(Y ⊗ I) f` for real `Y`.
pub(crate) fn time_transform(y: &DenseMatrix, f: &[f64], nx: usize) -> Vec<f64> {
    let nt = y.rows();
    let mut out = vec![0.0; nt * nx];
    for i in 0..nt {
        let o = &mut out[i * nx..(i + 1) * nx];
        for j in 0..y.cols() {
            let c = y[(i, j)];
            if c != 0.0 {
                for (a, b) in o.iter_mut().zip(&f[j * nx..(j + 1) * nx]) {
                    *a += c * b;
                }
            }
        }
    }
    out
}

/// `(Y ⊗ I) f` for complex `Y` and real `f`, as `(Re, Im)`.
fn time_transform_real(y: &CMatrix, f: &[f64], nx: usize) -> (Vec<f64>, Vec<f64>) {
    (
        time_transform(&y.real_part(), f, nx),
        time_transform(&y.imag_part(), f, nx),
    )
}

/// Real part of `(X ⊗ I) w`, after checking the imaginary part is below `tol`
/// relative to the magnitude of the summands.
fn real_result(x: &CMatrix, wre: &[f64], wim: &[f64], nx: usize, tol: f64) -> Result<Vec<f64>> {
    let nt = x.rows();
    let mut re = vec![0.0; nt * nx];
    let mut im = vec![0.0; nt * nx];
    let mut scale = vec![0.0; nt * nx];
    for i in 0..nt {
        for j in 0..nt {
            let c = x[(i, j)];
            let (cr, ci, ca) = (c.re, c.im, c.abs());
            for k in 0..nx {
                let (a, b) = (wre[j * nx + k], wim[j * nx + k]);
                re[i * nx + k] += cr * a - ci * b;
                im[i * nx + k] += cr * b + ci * a;
                scale[i * nx + k] += ca * a.hypot(b);
            }
        }
    }
    let imn = im.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sn = scale.iter().map(|v| v * v).sum::<f64>().sqrt();
    if imn > tol * sn {
        return Err(Error::ComplexResidue(imn / sn));
    }
    Ok(re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_space, assemble_time, slab_matvec, AffineMap};
    use crate::splines::{make_uniform_basis, SpaceBasis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slab(p: usize, nel_t: usize, theta: f64, d: usize, ps: usize, nel_x: usize) -> SlabOperator {
        let bt = make_uniform_basis(p, nel_t, (0.0, 0.1)).unwrap();
        let (kt, mt) = assemble_time(&bt, theta).unwrap();
        let s = SpaceBasis::uniform_dirichlet(d, ps, nel_x).unwrap();
        let (mx, kx) = assemble_space(&s, &AffineMap::identity(d)).unwrap();
        SlabOperator::new(kt, mt, Arc::new(mx), Arc::new(kx), theta, 0.1 / nel_t as f64).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn strategy_parsing() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("lu".parse::<Strategy>().is_err());
    }

    #[test]
    fn scalar_time_reduces_to_one_spd_solve() {
        let s = SpaceBasis::uniform_dirichlet(1, 1, 2).unwrap();
        let (mx, kx) = assemble_space(&s, &AffineMap::identity(1)).unwrap();
        let op = SlabOperator::new(
            DenseMatrix::from_rows(&[vec![2.0]]),
            DenseMatrix::from_rows(&[vec![0.5]]),
            Arc::new(mx),
            Arc::new(kx),
            0.0,
            1.0,
        )
        .unwrap();
        // 2·(1/3) + 0.5·4 = 8/3
        for st in Strategy::ALL {
            let inv = SlabInverse::build(&op, st, 1e-12).unwrap();
            let u = inv.apply(&[1.0]).unwrap();
            assert!((u[0] - 3.0 / 8.0).abs() < 1e-12, "{st}: {}", u[0]);
        }
    }

    #[test]
    fn all_strategies_invert_slab() {
        for &(p, nel, theta) in &[(1, 2, 0.0), (2, 4, 0.1), (3, 8, 0.01), (4, 4, 0.1)] {
            let op = slab(p, nel, theta, 1, 2, 12);
            let v = random_vec(op.size(), p as u64);
            let f = slab_matvec(&op, &v).unwrap();
            let direct = SlabInverse::build(&op, Strategy::Direct, 1e-12).unwrap();
            let ud = direct.apply_direct(&f).unwrap();
            assert!(rel_err(&ud, &v) < 1e-12);
            for st in [Strategy::Diag, Strategy::CSchur, Strategy::RSchur] {
                let inv = SlabInverse::build(&op, st, 1e-12).unwrap();
                let u = inv.apply(&f).unwrap();
                assert!(rel_err(&u, &ud) < 1e-8, "{st} p={p} nel={nel}: {}", rel_err(&u, &ud));
            }
        }
    }

    #[test]
    fn stage_and_solve_counts() {
        let op = slab(3, 4, 0.1, 1, 2, 10);
        let nt = op.n_t();
        let f = random_vec(op.size(), 9);
        let diag = SlabInverse::build(&op, Strategy::Diag, 1e-12).unwrap();
        let (_, s) = diag.apply_with_stats(&f).unwrap();
        assert_eq!((s.stages, s.inner_solves), (1, nt));
        let n_pairs = diag.shifts().iter().filter(|l| l.im > 0.0).count();
        assert_eq!(s.computed_solves, nt - n_pairs);
        let cs = SlabInverse::build(&op, Strategy::CSchur, 1e-12).unwrap();
        let (_, s) = cs.apply_with_stats(&f).unwrap();
        assert_eq!((s.stages, s.inner_solves), (nt, nt));
        let rs = SlabInverse::build(&op, Strategy::RSchur, 1e-12).unwrap();
        let (_, s) = rs.apply_with_stats(&f).unwrap();
        assert_eq!(s.stages, nt - rs.n_pair_blocks());
        assert_eq!(rs.n_pair_blocks(), n_pairs);
        let (u, s) = cs.apply_with_stats(&vec![0.0; op.size()]).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
        assert_eq!(s.total_iterations, 0);
    }

    #[test]
    fn conjugate_solves_are_conjugate() {
        let op = slab(3, 4, 0.1, 1, 2, 10);
        let inv = SlabInverse::build(&op, Strategy::Diag, 1e-12).unwrap();
        let lam = inv.shifts();
        let i = lam.iter().position(|l| l.im > 0.0).expect("complex pair");
        assert!((lam[i + 1].conj() - lam[i]).abs() < 1e-12);
        let re = random_vec(op.n_x(), 1);
        let im = random_vec(op.n_x(), 2);
        let nim: Vec<f64> = im.iter().map(|v| -v).collect();
        let (a, b) = inv.eigen_solve(i, &re, &im).unwrap();
        let (c, d) = inv.eigen_solve(i + 1, &re, &nim).unwrap();
        for k in 0..op.n_x() {
            assert!((a[k] - c[k]).abs() < 1e-12 && (b[k] + d[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_time_matrices() {
        let s = SpaceBasis::uniform_dirichlet(1, 2, 6).unwrap();
        let (mx, kx) = assemble_space(&s, &AffineMap::identity(1)).unwrap();
        let op = SlabOperator::new(
            DenseMatrix::identity(3),
            DenseMatrix::identity(3),
            Arc::new(mx),
            Arc::new(kx),
            0.0,
            1.0,
        )
        .unwrap();
        let inv = SlabInverse::build(&op, Strategy::Diag, 1e-12).unwrap();
        assert!(inv.shifts().iter().all(|l| (l.re - 1.0).abs() < 1e-14 && l.im == 0.0));
        assert_eq!(inv.n_factorizations(), 1);
        assert!((inv.cond_x().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_time_matrix_cschur_matches_diag() {
        let s = SpaceBasis::uniform_dirichlet(1, 2, 8).unwrap();
        let (mx, kx) = assemble_space(&s, &AffineMap::identity(1)).unwrap();
        let kt = DenseMatrix::from_rows(&[
            vec![2.0, 1.0, 0.0, 0.0],
            vec![-1.0, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 3.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.5],
        ]);
        let op = SlabOperator::new(kt, DenseMatrix::identity(4), Arc::new(mx), Arc::new(kx), 0.0, 1.0).unwrap();
        let f = random_vec(op.size(), 4);
        let a = SlabInverse::build(&op, Strategy::Diag, 1e-13)
            .unwrap()
            .apply(&f)
            .unwrap();
        let b = SlabInverse::build(&op, Strategy::CSchur, 1e-13)
            .unwrap()
            .apply(&f)
            .unwrap();
        assert!(rel_err(&b, &a) < 1e-11);
    }

    #[test]
    fn real_spectrum_has_no_pair_blocks() {
        let op = slab(1, 4, 0.01, 1, 1, 8);
        let inv = SlabInverse::build(&op, Strategy::RSchur, 1e-12).unwrap();
        if inv.spectrum().unwrap().eigenvalues.iter().all(|l| l.im == 0.0) {
            assert_eq!(inv.n_pair_blocks(), 0);
        }
        let f = random_vec(op.size(), 5);
        let d = SlabInverse::build(&op, Strategy::Direct, 1e-12)
            .unwrap()
            .apply(&f)
            .unwrap();
        assert!(rel_err(&inv.apply(&f).unwrap(), &d) < 1e-9);
    }

    #[test]
    fn inadmissible_theta_is_rejected() {
        let op = slab(4, 4, 1.0, 1, 1, 4);
        for st in [Strategy::Diag, Strategy::CSchur, Strategy::RSchur] {
            assert!(matches!(
                SlabInverse::build(&op, st, 1e-12),
                Err(Error::Admissibility(_))
            ));
        }
        assert!(SlabInverse::build(&op, Strategy::Direct, 1e-12).is_ok());
    }

    #[test]
    fn diag_rejected_for_ill_conditioned_eigenvectors() {
        let op = slab(3, 128, 0.1, 1, 1, 2);
        match SlabInverse::build(&op, Strategy::Diag, 1e-12) {
            Err(Error::Conditioning { cond, cap }) => assert!(cond > cap),
            other => panic!("expected conditioning error, got {other:?}"),
        }
        for st in [Strategy::CSchur, Strategy::RSchur] {
            let inv = SlabInverse::build(&op, st, 1e-12).unwrap();
            let v = random_vec(op.size(), 6);
            let f = slab_matvec(&op, &v).unwrap();
            assert!(rel_err(&inv.apply(&f).unwrap(), &v) < 1e-6, "{st}");
        }
    }

    #[test]
    fn wrong_strategy_call_is_an_error() {
        let op = slab(2, 2, 0.1, 1, 1, 4);
        let inv = SlabInverse::build(&op, Strategy::RSchur, 1e-12).unwrap();
        assert!(inv.apply_diag(&vec![1.0; op.size()]).is_err());
    }
}
