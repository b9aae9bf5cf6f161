//! End-to-end acceptance checks. Each test prints exactly one
//! `criterion N ...: PASS|FAIL` line before asserting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmg::assembly::{assemble_space, assemble_time, time_element_size, AffineMap, SlabOperator};
use stmg::denselin::{
    complex_schur, dot, generalized_eig, real_schur, sym_generalized_eigenvalues, AlphaForms, DenseMatrix, Lu,
};
use stmg::experiments::{condx_violations, run, ExperimentConfig, ResultTable, Study};
use stmg::multigrid::{MgConfig, MgHierarchy, Schedule, SmootherConfig};
use stmg::slab_inverse::SlabInverse;
use stmg::slab_inverse::Strategy;
use stmg::spacetime::{Manufactured, UniformSetup};
use stmg::spatial_solvers::{make_preconditioner, BlockSaddleOperator, PreconditionerVariant, SpdMethod};
use stmg::splines::{make_uniform_basis, SpaceBasis};

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} | {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn slab_op(p_t: usize, nel_t: usize, theta: f64, dim: usize, p_x: usize, nel_x: usize) -> SlabOperator {
    let bt = make_uniform_basis(p_t, nel_t, (0.0, 0.1)).unwrap();
    let (kt, mt) = assemble_time(&bt, theta).unwrap();
    let s = SpaceBasis::uniform_dirichlet(dim, p_x, nel_x).unwrap();
    let (mx, kx) = assemble_space(&s, &AffineMap::identity(dim)).unwrap();
    SlabOperator::new(kt, mt, Arc::new(mx), Arc::new(kx), theta, 0.1 / nel_t as f64).unwrap()
}

#[test]
fn criterion_1_slab_inverses_match_direct() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut cases = 0;
    for p in 1..=4 {
        for theta in [0.01, 0.1] {
            for nel_t in [2, 4, 8] {
                for &(dim, p_x, nel_x) in &[(1usize, 2usize, 9usize), (2, 2, 5), (2, 3, 4)] {
                    let op = slab_op(p, nel_t, theta, dim, p_x, nel_x);
                    assert!(op.n_x() <= 50);
                    let f: Vec<f64> = (0..op.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let direct = SlabInverse::build(&op, Strategy::Direct, 1e-12)
                        .unwrap()
                        .apply(&f)
                        .unwrap();
                    for s in [Strategy::Diag, Strategy::CSchur, Strategy::RSchur] {
                        cases += 1;
                        let r = SlabInverse::build(&op, s, 1e-12).and_then(|inv| inv.apply(&f));
                        match r {
                            Ok(u) => {
                                let e = rel_err(&u, &direct);
                                worst = worst.max(e);
                                if !(e <= 1e-7) {
                                    failures.push(format!("p={p} theta={theta} nel_t={nel_t} {s}: {e:e}"));
                                }
                            }
                            Err(e) => failures.push(format!("p={p} theta={theta} nel_t={nel_t} {s}: {e}")),
                        }
                    }
                }
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        1,
        "slab inverse oracle equivalence",
        failures.is_empty() && secs <= 120.0,
        &format!("{cases} cases, worst relative error {worst:.2e}, {secs:.1}s, failures {failures:?}"),
    );
}

#[test]
fn criterion_2_preconditioned_spectrum_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lo = 0.5f64.sqrt() - 1e-8;
    let hi = 1.0 + 1e-8;
    let (mut min_mod, mut max_mod) = (f64::INFINITY, 0.0f64);
    for _ in 0..50 {
        let dim = rng.gen_range(1..=2);
        let p = rng.gen_range(1..=3);
        let nel = if dim == 1 {
            rng.gen_range(2..=12)
        } else {
            rng.gen_range(2..=5)
        };
        let s = SpaceBasis::uniform_dirichlet(dim, p, nel).unwrap();
        let (m, k) = assemble_space(&s, &AffineMap::identity(dim)).unwrap();
        let alpha = 10f64.powf(rng.gen_range(-2.0..2.0));
        let a = 10f64.powf(rng.gen_range(-2.0..2.0));
        let b = -10f64.powf(rng.gen_range(-2.0..2.0));
        let (beta1, beta2) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let op = BlockSaddleOperator {
            k: Arc::new(k),
            m: Arc::new(m),
            alpha,
            beta1,
            beta2,
        };
        let prec = make_preconditioner(&op, PreconditionerVariant::Scaled, SpdMethod::Cholesky, 1e-12).unwrap();
        let ev =
            sym_generalized_eigenvalues(&op.symmetric_dense(PreconditionerVariant::Scaled), &prec.dense()).unwrap();
        for l in ev {
            min_mod = min_mod.min(l.abs());
            max_mod = max_mod.max(l.abs());
        }
    }
    report(
        2,
        "preconditioned spectrum window",
        min_mod >= lo && max_mod <= hi,
        &format!("|mu| in [{min_mod:.6}, {max_mod:.6}], required [{lo:.6}, {hi:.6}]"),
    );
}

fn num(t: &ResultTable, row: &[stmg::experiments::Cell], col: &str) -> f64 {
    row[t.column(col).unwrap()].as_f64().unwrap_or(f64::NAN)
}

#[test]
fn criterion_3_minres_robustness() {
    let clock = Instant::now();
    let cfg = ExperimentConfig::defaults(Study::Minres);
    let t = run(&cfg).unwrap();
    let mut problems = Vec::new();
    let mut max_it = 0.0f64;
    for r in &cfg.refinements {
        for p in &cfg.p_values {
            let get = |s: &str| {
                t.rows
                    .iter()
                    .find(|row| {
                        num(&t, row, "refinement") == *r as f64
                            && num(&t, row, "p") == *p as f64
                            && row[t.column("strategy").unwrap()].as_text() == Some(s)
                    })
                    .map(|row| num(&t, row, "max_iterations"))
                    .unwrap_or(f64::NAN)
            };
            let (c, rs) = (get("cschur"), get("rschur"));
            max_it = max_it.max(c).max(rs);
            if !(c <= 30.0 && rs <= 30.0) {
                problems.push(format!("ref {r} p {p}: cschur {c} rschur {rs} exceed 30"));
            }
            if !(rs <= c + 2.0) {
                problems.push(format!("ref {r} p {p}: rschur {rs} > cschur {c} + 2"));
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    println!("{t}");
    report(
        3,
        "MinRes robustness",
        problems.is_empty() && secs <= 300.0,
        &format!("max iterations {max_it}, {secs:.1}s, problems {problems:?}"),
    );
}

/// Smallest real parts of the generalized time eigenvalues as published,
/// indexed `[refinement][theta][p - 1]`; `None` marks `*`.
const REFS: [usize; 4] = [2, 4, 6, 8];
const THETAS: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];
#[rustfmt::skip]
const PUBLISHED: [[[Option<f64>; 7]; 5]; 4] = {
    const S: Option<f64> = None;
    [
        [
            [Some(1.5), Some(2.4), Some(3.2), Some(3.8), Some(4.3), Some(4.7), Some(5.0)],
            [Some(1.6), Some(2.5), Some(3.2), Some(3.6), Some(4.0), Some(4.4), Some(4.9)],
            [Some(2.5), Some(2.9), Some(3.2), Some(3.6), Some(4.0), Some(4.5), Some(5.2)],
            [Some(4.1), Some(4.5), Some(4.7), S, S, S, S],
            [Some(4.6), Some(5.2), Some(5.2), S, S, S, S],
        ],
        [
            [Some(0.2), Some(0.5), Some(0.9), Some(1.5), Some(2.1), Some(2.7), Some(3.4)],
            [Some(0.7), Some(0.7), Some(1.1), Some(1.6), Some(2.2), Some(2.8), Some(3.3)],
            [Some(4.8), Some(2.9), Some(2.7), Some(3.0), Some(3.4), Some(3.6), Some(4.1)],
            [Some(12.4), Some(12.0), Some(9.2), S, S, S, S],
            [Some(6.7), Some(11.8), S, S, S, S, S],
        ],
        [
            [Some(0.01), Some(0.03), Some(0.06), Some(0.1), Some(0.1), Some(0.2), Some(0.2)],
            [Some(1.9), Some(1.0), Some(0.8), Some(0.7), Some(0.6), Some(0.6), Some(0.6)],
            [Some(18.6), Some(9.9), Some(7.4), Some(6.0), Some(5.1), Some(4.5), Some(4.0)],
            [Some(34.2), Some(35.1), Some(33.8), S, S, S, S],
            [Some(11.4), Some(17.4), S, S, S, S, S],
        ],
        [
            [Some(0.0008), Some(0.002), Some(0.004), Some(0.006), Some(0.009), Some(0.01), Some(0.02)],
            [Some(7.7), Some(4.0), Some(3.0), Some(2.5), Some(2.0), Some(1.8), Some(1.6)],
            [Some(34.8), Some(33.8), Some(29.5), Some(23.8), Some(20.0), Some(17.2), Some(15.1)],
            [Some(34.8), Some(34.4), Some(34.5), S, S, S, S],
            [Some(29.0), Some(32.2), S, S, S, S, S],
        ],
    ]
};

#[test]
fn criterion_4_smallest_real_parts() {
    let clock = Instant::now();
    let cfg = ExperimentConfig::defaults(Study::Mineig);
    let t = run(&cfg).unwrap();
    let col = t.column("min_re_lambda").unwrap();
    let cell = |r: usize, th: f64, p: usize| {
        t.find(&[("refinement", r as f64), ("theta", th), ("p", p as f64)])
            .map(|row| row[col].clone())
            .expect("cell present")
    };
    let mut sign = Vec::new();
    let mut pattern = Vec::new();
    let mut numeric = Vec::new();
    let mut compared = 0;
    for (ri, &r) in REFS.iter().enumerate() {
        for (ti, &th) in THETAS.iter().enumerate() {
            for p in 1..=7 {
                let ours = cell(r, th, p);
                if th == 0.01 && !ours.as_f64().is_some_and(|v| v > 0.0) {
                    sign.push(format!("ref {r} p {p}: {ours}"));
                }
                let star = ours.as_text() == Some("*");
                if r >= 4 && (th == 1.0 || th == 10.0) {
                    let expect_star = if th == 1.0 { p >= 4 } else { p >= 3 };
                    if star != expect_star {
                        pattern.push(format!("ref {r} theta {th} p {p}: {ours}"));
                    }
                }
                if let (Some(v), Some(published)) = (ours.as_f64(), PUBLISHED[ri][ti][p - 1]) {
                    compared += 1;
                    let dev = (v - published).abs() / published;
                    if dev > 0.15 {
                        numeric.push(format!(
                            "ref {r} theta {th} p {p}: {v:.4} vs {published} ({:.0}%)",
                            100.0 * dev
                        ));
                    }
                }
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        4,
        "smallest real parts",
        sign.is_empty() && pattern.is_empty() && numeric.is_empty() && secs <= 120.0,
        &format!(
            "{compared} numeric cells compared, {secs:.1}s; sign {sign:?}; star pattern {pattern:?}; outside 15% {numeric:?}"
        ),
    );
}

#[test]
fn criterion_5_eigenvector_conditioning_trend() {
    let clock = Instant::now();
    let cfg = ExperimentConfig::defaults(Study::Condx);
    let t = run(&cfg).unwrap();
    let get = |p: f64, n: f64| t.find(&[("p", p), ("nel", n)]).and_then(|r| r[3].as_f64()).unwrap();
    let base = get(2.0, 2.0);
    let big = get(3.0, 64.0);
    let violations = condx_violations(&t);
    let secs = clock.elapsed().as_secs_f64();
    println!("{t}");
    report(
        5,
        "eigenvector conditioning trend",
        (6.4..=640.0).contains(&base) && big > 1e6 && violations.is_empty() && secs <= 120.0,
        &format!("cond(p=2,nel=2) = {base:.1}, cond(p=3,nel=64) = {big:.2e}, {secs:.1}s, monotonicity violations {violations:?}"),
    );
}

#[test]
fn criterion_6_multigrid_iterations() {
    let clock = Instant::now();
    let cfg = ExperimentConfig::defaults(Study::Mg);
    let t = run(&cfg).unwrap();
    println!("{t}");
    let mut problems = Vec::new();
    let it_col = t.column("mg_iterations").unwrap();
    let strategy_of =
        |row: &[stmg::experiments::Cell]| row[t.column("strategy").unwrap()].as_text().unwrap().to_string();
    for s in &cfg.strategies {
        let its: Vec<f64> = t
            .rows
            .iter()
            .filter(|r| strategy_of(r) == s.name())
            .map(|r| r[it_col].as_f64().unwrap_or(f64::NAN))
            .collect();
        let conv = t
            .rows
            .iter()
            .filter(|r| strategy_of(r) == s.name())
            .all(|r| r[t.column("converged").unwrap()].as_text() == Some("true") && num(&t, r, "residual") <= 1e-8);
        let (lo, hi) = its
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        if !conv || !(hi <= 12.0) || !(hi - lo <= 2.0) {
            problems.push(format!("{s}: iterations {its:?}, converged {conv}"));
        }
    }
    let last_dofs = t.rows.iter().map(|r| num(&t, r, "dofs")).fold(0.0, f64::max);
    let at_largest = |s: &str, col: &str| {
        t.rows
            .iter()
            .find(|r| num(&t, r, "dofs") == last_dofs && strategy_of(r) == s)
            .map(|r| num(&t, r, col))
            .unwrap_or(f64::NAN)
    };
    let (rs, cs) = (at_largest("rschur", "solve_s"), at_largest("cschur", "solve_s"));
    if !(rs <= cs) {
        problems.push(format!("rschur solve {rs:.3}s slower than cschur {cs:.3}s"));
    }
    let direct_setup = at_largest("direct", "setup_s");
    let decomp_setup = ["diag", "cschur", "rschur"]
        .iter()
        .map(|s| at_largest(s, "setup_s"))
        .fold(0.0, f64::max);
    if !(decomp_setup <= 0.5 * direct_setup) {
        problems.push(format!(
            "decomposition setup {decomp_setup:.3}s vs direct {direct_setup:.3}s"
        ));
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        6,
        "multigrid iterations",
        problems.is_empty() && secs <= 600.0,
        &format!(
            "{secs:.1}s, setup ratio {:.3}, problems {problems:?}",
            decomp_setup / direct_setup
        ),
    );
}

#[test]
fn criterion_7_convergence_order() {
    let clock = Instant::now();
    let cfg = ExperimentConfig::defaults(Study::Convergence);
    let t = run(&cfg).unwrap();
    println!("{t}");
    let mut problems = Vec::new();
    let mut orders = Vec::new();
    for &p in &cfg.p_values {
        let rows: Vec<_> = t.rows.iter().filter(|r| num(&t, r, "p") == p as f64).collect();
        let errs: Vec<f64> = rows.iter().map(|r| num(&t, r, "dg_error")).collect();
        if !errs.windows(2).all(|w| w[1] < w[0]) {
            problems.push(format!("p={p}: errors not decreasing {errs:?}"));
        }
        let order = num(&t, rows.last().unwrap(), "order");
        orders.push((p, order));
        let pf = p as f64;
        if !(order >= pf - 0.25 && order <= pf + 0.35) {
            problems.push(format!("p={p}: order {order:.3}"));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        7,
        "dG convergence order",
        problems.is_empty() && secs <= 300.0,
        &format!("orders {orders:?}, {secs:.2}s, problems {problems:?}"),
    );
}

fn time_matrix_positivity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for p in 1..=5 {
        let c2 = stmg::assembly::inverse_trace_constant_sq(p).map_err(|e| e.to_string())?;
        for nel in [1, 2, 4, 8] {
            let b = make_uniform_basis(p, nel, (0.0, 0.1)).unwrap();
            let n = b.n_basis();
            let bound = 2.0 / c2;
            for theta in [0.0, 0.01, 0.1, 0.5 * bound, 0.99 * bound]
                .into_iter()
                .filter(|&t| t < bound)
            {
                let (k, m) = assemble_time(&b, theta).unwrap();
                for _ in 0..1000 {
                    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let nv = dot(&v, &v).sqrt();
                    let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
                    let (kv, mv) = (k.bilinear(&v, &v), m.bilinear(&v, &v));
                    if theta == 0.0 {
                        let trace = 0.5 * (v[0] * v[0] + v[n - 1] * v[n - 1]);
                        if (kv - trace).abs() > 1e-12 {
                            return Err(format!("p={p} nel={nel}: vKv {kv} vs trace form {trace}"));
                        }
                    } else if !(kv > 0.0 && mv > 0.0) {
                        return Err(format!("p={p} nel={nel} theta={theta}: vKv {kv}, vMv {mv}"));
                    }
                }
            }
        }
    }
    Ok(())
}

fn partition_of_unity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for p in 1..=6 {
        for nel in [1, 3, 8] {
            let b = make_uniform_basis(p, nel, (-0.5, 2.0)).unwrap();
            for _ in 0..200 {
                let x = rng.gen_range(-0.5..=2.0);
                let (_, vals) = b.eval_nonzero(x, 0).map_err(|e| e.to_string())?;
                let s: f64 = vals.iter().sum();
                if (s - 1.0).abs() > 1e-13 || vals.iter().any(|v| *v < -1e-14) {
                    return Err(format!("p={p} nel={nel} x={x}: sum {s}"));
                }
            }
        }
    }
    Ok(())
}

fn decompositions_and_alpha() -> Result<(), String> {
    for p in 1..=4 {
        for theta in [0.0, 0.01, 0.1] {
            for nel in [2, 4, 8] {
                let b = make_uniform_basis(p, nel, (0.0, 0.1)).unwrap();
                let (k, m) = assemble_time(&b, theta).unwrap();
                let a = Lu::factor(&m).map_err(|e| e.to_string())?.solve_matrix(&k);
                let scale = a.frobenius_norm();
                let rs = real_schur(&a).map_err(|e| e.to_string())?;
                let r1 = rs.reconstruct().sub(&a).frobenius_norm() / scale;
                let cs = complex_schur(&a).map_err(|e| e.to_string())?;
                let r2 = cs.reconstruct().sub(&a.to_complex()).frobenius_norm() / scale;
                let q_orth =
                    rs.q.transpose()
                        .matmul(&rs.q)
                        .sub(&DenseMatrix::identity(a.rows()))
                        .frobenius_norm();
                if r1 > 1e-12 || r2 > 1e-12 || q_orth > 1e-12 {
                    return Err(format!(
                        "p={p} theta={theta} nel={nel}: reconstruction {r1:e} {r2:e}, orthogonality {q_orth:e}"
                    ));
                }
                let ge = generalized_eig(&k, &m).map_err(|e| e.to_string())?;
                let h = time_element_size(&b);
                for pair in &ge.pairs {
                    let tol = 1e-9 * (k.frobenius_norm() + pair.lambda.abs() * m.frobenius_norm());
                    if pair.residual(&k, &m) > tol {
                        return Err(format!("eigen residual {:e}", pair.residual(&k, &m)));
                    }
                    let f = AlphaForms::compute(&k, &m, &pair.real_part(), &pair.imag_part());
                    if (f.alpha() - pair.alpha()).abs() > 1e-9 * (1.0 + pair.alpha().abs()) {
                        return Err(format!("alpha formula {} vs {}", f.alpha(), pair.alpha()));
                    }
                    if (f.c + theta * h * f.d).abs() > 1e-10 {
                        return Err(format!("c = {:e}, -theta h d = {:e}", f.c, -theta * h * f.d));
                    }
                }
            }
        }
    }
    Ok(())
}

fn smoother_and_transfers(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let setup = UniformSetup {
        dim: 1,
        p_space: 2,
        nel_space: 8,
        p_time: 2,
        nel_time: 4,
        n_slabs: 4,
        slab_length: 0.1,
        theta: 0.01,
        t0: 0.0,
    };
    let problem = Manufactured::SineExp { dim: 1 };
    for strategy in Strategy::ALL {
        let config = MgConfig {
            smoother: SmootherConfig {
                strategy,
                inner_tol: 1e-11,
                ..SmootherConfig::default()
            },
            coarse_cap: 0,
            max_levels: 3,
            schedule: Schedule::Alternating,
            ..MgConfig::default()
        };
        let h = MgHierarchy::new(&setup, Some(&problem), config).map_err(|e| e.to_string())?;
        let sys = h.finest();
        let exact = sys.sequential_solve().map_err(|e| e.to_string())?;
        let mut u = exact.clone();
        h.smooth(0, &mut u, &sys.rhs).map_err(|e| e.to_string())?;
        let diff = u
            .iter()
            .zip(&exact)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        if diff > 1e-9 {
            return Err(format!("{strategy}: smoother moved the exact solution by {diff:e}"));
        }
        for l in 0..h.n_levels() - 1 {
            let rand_like = |sys: &stmg::spacetime::SpaceTimeSystem, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                sys.zeros()
                    .iter()
                    .map(|v| v.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            };
            let c = rand_like(&h.levels[l + 1].system, rng);
            let r = rand_like(&h.levels[l].system, rng);
            let pc = h.prolong(l, &c).map_err(|e| e.to_string())?;
            let rr = h.restrict(l, &r).map_err(|e| e.to_string())?;
            let lhs: f64 = pc.iter().zip(&r).map(|(a, b)| dot(a, b)).sum();
            let rhs: f64 = c.iter().zip(&rr).map(|(a, b)| dot(a, b)).sum();
            if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(1.0) {
                return Err(format!("level {l}: <Pc, r> = {lhs}, <c, Rr> = {rhs}"));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_8_structural_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let checks: Vec<(&str, Result<(), String>)> = vec![
        ("time matrix positivity", time_matrix_positivity(&mut rng)),
        ("partition of unity", partition_of_unity(&mut rng)),
        ("decompositions and alpha formula", decompositions_and_alpha()),
        (
            "smoother fixed point and transfer adjointness",
            smoother_and_transfers(&mut rng),
        ),
    ];
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let names: Vec<&str> = checks.iter().map(|(n, _)| *n).collect();
    report(
        8,
        "structural properties",
        failed.is_empty(),
        &format!("checked {names:?}; failures {failed:?}"),
    );
}
