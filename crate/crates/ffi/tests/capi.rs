use std::ffi::{c_char, CStr};
use std::path::Path;
use std::process::Command;
use std::ptr;

use stmg_ffi::*;

fn setup_1d() -> StmgSetup {
    StmgSetup {
        dim: 1,
        p_space: 2,
        nel_space: 8,
        p_time: 2,
        nel_time: 2,
        n_slabs: 4,
        slab_length: 0.25,
        theta: 0.1,
        t0: 0.0,
        problem: StmgProblem::SineExp,
    }
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { stmg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n >= 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(stmg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn sequential_solve_round_trip() {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { stmg_system_new(&setup_1d(), &mut sys) }, StmgStatus::Ok);
    let n = unsafe { stmg_system_n_dofs(sys) };
    assert_eq!(n, 8 * 4 * 4);
    let mut f = vec![0.0; n];
    let mut u = vec![0.0; n];
    unsafe {
        assert_eq!(stmg_system_rhs(sys, f.as_mut_ptr(), n), StmgStatus::Ok);
        assert_eq!(
            stmg_system_solve_sequential(sys, f.as_ptr(), u.as_mut_ptr(), n),
            StmgStatus::Ok
        );
        let mut res = f64::NAN;
        assert_eq!(
            stmg_system_residual_norm(sys, u.as_ptr(), f.as_ptr(), n, &mut res),
            StmgStatus::Ok
        );
        let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(res <= 1e-10 * fnorm, "residual {res}");
        let mut err = f64::NAN;
        assert_eq!(stmg_system_dg_error(sys, u.as_ptr(), n, &mut err), StmgStatus::Ok);
        assert!(err > 0.0 && err < 0.05, "dG error {err}");
        stmg_system_free(sys);
    }
}

#[test]
fn multigrid_solve_matches_sequential() {
    let setup = StmgSetup {
        nel_space: 16,
        n_slabs: 8,
        ..setup_1d()
    };
    let mut opts = stmg_mg_options_default();
    opts.coarse_cap = 60;
    opts.strategy = StmgStrategy::CSchur;
    let mut mg = ptr::null_mut();
    let mut sys = ptr::null_mut();
    unsafe {
        assert_eq!(stmg_mg_new(&setup, &opts, &mut mg), StmgStatus::Ok);
        assert_eq!(stmg_system_new(&setup, &mut sys), StmgStatus::Ok);
        assert!(stmg_mg_n_levels(mg) >= 2);
        let n = stmg_mg_n_dofs(mg);
        assert_eq!(n, stmg_system_n_dofs(sys));
        let mut f = vec![0.0; n];
        assert_eq!(stmg_mg_rhs(mg, f.as_mut_ptr(), n), StmgStatus::Ok);
        let mut u = vec![0.0; n];
        let mut info = StmgSolveInfo::default();
        assert_eq!(
            stmg_mg_solve(mg, f.as_ptr(), u.as_mut_ptr(), n, &mut info),
            StmgStatus::Ok
        );
        assert!(info.converged && info.iterations <= 15 && info.relative_residual <= 1e-8);
        let mut v = vec![0.0; n];
        assert_eq!(
            stmg_system_solve_sequential(sys, f.as_ptr(), v.as_mut_ptr(), n),
            StmgStatus::Ok
        );
        let diff = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = v.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * norm, "{diff} vs {norm}");
        stmg_mg_free(mg);
        stmg_system_free(sys);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(stmg_system_new(ptr::null(), &mut sys), StmgStatus::NullPointer);
        assert!(last_error().contains("setup"));
        assert!(stmg_last_error_length() > 0);

        let bad = StmgSetup { dim: 3, ..setup_1d() };
        assert_eq!(stmg_system_new(&bad, &mut sys), StmgStatus::InvalidArgument);
        assert!(sys.is_null());
        assert!(!last_error().is_empty());

        let inadmissible = StmgSetup {
            p_time: 4,
            nel_time: 4,
            theta: 1.0,
            ..setup_1d()
        };
        let opts = StmgMgOptions {
            strategy: StmgStrategy::RSchur,
            coarse_cap: 10,
            ..stmg_mg_options_default()
        };
        let mut mg = ptr::null_mut();
        assert_eq!(stmg_mg_new(&inadmissible, &opts, &mut mg), StmgStatus::Inadmissible);
        assert!(last_error().contains("theta"));

        assert_eq!(stmg_system_new(&setup_1d(), &mut sys), StmgStatus::Ok);
        assert_eq!(stmg_last_error_length(), 0);
        let n = stmg_system_n_dofs(sys);
        let mut u = vec![0.0; n];
        let f = vec![0.0; n - 1];
        assert_eq!(
            stmg_system_solve_sequential(sys, f.as_ptr(), u.as_mut_ptr(), n - 1),
            StmgStatus::InvalidArgument
        );
        assert!(last_error().contains("length"));
        assert_eq!(stmg_system_rhs(sys, ptr::null_mut(), n), StmgStatus::NullPointer);
        stmg_system_free(sys);

        assert_eq!(stmg_system_n_dofs(ptr::null()), 0);
        assert_eq!(stmg_mg_n_levels(ptr::null()), 0);
        stmg_system_free(ptr::null_mut());
        stmg_mg_free(ptr::null_mut());
        assert_eq!(stmg_last_error_message(ptr::null_mut(), 4), -1);
    }
}

#[test]
fn error_message_truncates() {
    unsafe {
        let mut sys = ptr::null_mut();
        stmg_system_new(ptr::null(), &mut sys);
        let mut buf = [1 as c_char; 4];
        assert_eq!(stmg_last_error_message(buf.as_mut_ptr(), buf.len()), 3);
        assert_eq!(buf[3], 0);
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/stmg.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "stmg_system_new",
        "stmg_system_solve_sequential",
        "stmg_mg_solve",
        "stmg_last_error_message",
        "typedef struct StmgSystem StmgSystem",
        "STMG_STATUS_NOT_CONVERGED",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(status.success());
}
