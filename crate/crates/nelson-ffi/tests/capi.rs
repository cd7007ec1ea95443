//! Exercises the C ABI end to end: handle lifecycle, status codes, the
//! numeric getters against their closed forms, and a smoke test that
//! compiles and runs a real C program against the generated header and
//! the static library.

use std::env;
use std::ffi::{CStr, CString};
use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use nelson::modes::{binding_integral_closed, c_ii_closed, Cutoff};
use nelson::spectral::atom_energy;
use nelson_ffi::*;

/// Builds a lab or panics with the library's own error message.
fn lab(e: f64, z: f64, lambda: f64) -> *mut NelsonLab {
    let mut handle: *mut NelsonLab = ptr::null_mut();
    let status = unsafe { nelson_lab_new(e, z, lambda, &mut handle) };
    assert_eq!(status, NelsonStatus::Ok, "lab creation failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nelson_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

#[test]
fn abi_version_is_one() {
    assert_eq!(nelson_abi_version(), 1);
}

#[test]
fn binding_energy_matches_the_closed_form() {
    let lab = lab(0.1, 1.0, f64::INFINITY);
    let mut integral = 0.0;
    let mut e_bin = 0.0;
    let mut e_at = 0.0;
    unsafe {
        assert_eq!(nelson_binding_integral(lab, &mut integral), NelsonStatus::Ok);
        assert_eq!(nelson_binding_energy(lab, &mut e_bin), NelsonStatus::Ok);
        assert_eq!(nelson_atom_energy(lab, &mut e_at), NelsonStatus::Ok);
        nelson_lab_free(lab);
    }
    let pi = std::f64::consts::PI;
    assert!((integral - 1.0 / (6.0 * pi * pi)).abs() <= 1e-18);
    assert_eq!(e_at, atom_energy(0.1, 1.0));
    let expected = -e_at * (1.0 + 0.01 * binding_integral_closed(&Cutoff::Infinite));
    assert!((e_bin - expected).abs() <= 1e-15 * expected.abs());
    assert!(e_bin > 0.0);
}

#[test]
fn coupling_constants_match_their_closed_forms() {
    let lab = lab(0.3, 1.0, 1.0);
    let mut c_ii = 0.0;
    unsafe {
        assert_eq!(
            nelson_coupling_constant(lab, c"c_II".as_ptr(), &mut c_ii),
            NelsonStatus::Ok,
            "{}",
            last_error()
        );
        nelson_lab_free(lab);
    }
    let closed = c_ii_closed(&Cutoff::Finite(1.0));
    assert!((c_ii - closed).abs() <= 1e-10, "c_II {c_ii} vs closed {closed}");
}

#[test]
fn invalid_parameters_and_null_pointers_report_their_status() {
    // Coupling outside [0, 1).
    let mut handle: *mut NelsonLab = ptr::null_mut();
    let status = unsafe { nelson_lab_new(2.0, 1.0, 1.0, &mut handle) };
    assert_eq!(status, NelsonStatus::InvalidInput);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    // Null out pointers.
    assert_eq!(
        unsafe { nelson_lab_new(0.1, 1.0, 1.0, ptr::null_mut()) },
        NelsonStatus::NullArgument
    );
    let mut value = 0.0;
    assert_eq!(
        unsafe { nelson_atom_energy(ptr::null(), &mut value) },
        NelsonStatus::NullArgument
    );

    let lab = lab(0.1, 1.0, 1.0);
    unsafe {
        assert_eq!(
            nelson_coupling_constant(lab, ptr::null(), &mut value),
            NelsonStatus::NullArgument
        );
        assert_eq!(
            nelson_coupling_constant(lab, c"nope".as_ptr(), &mut value),
            NelsonStatus::InvalidInput
        );
        assert!(last_error().contains("nope"));
        assert_eq!(
            nelson_coefficient(lab, c"a9".as_ptr(), &mut value),
            NelsonStatus::InvalidInput
        );
        assert_eq!(nelson_lab_set_basis(lab, 0, 2, 2), NelsonStatus::InvalidInput);
        assert_eq!(nelson_lab_set_ir_shift(lab, -1.0), NelsonStatus::InvalidInput);
        // The rejected shift must not have been stored: c_eps still works.
        assert_eq!(
            nelson_coupling_constant(lab, c"c_eps".as_ptr(), &mut value),
            NelsonStatus::Ok,
            "{}",
            last_error()
        );
        assert!(value > 0.0);
        nelson_lab_free(lab);
    }

    // Freeing null handles and strings is a no-op.
    unsafe {
        nelson_lab_free(ptr::null_mut());
        nelson_string_free(ptr::null_mut());
    }
}

#[test]
fn infinite_cutoff_gates_the_matrix_path() {
    let lab = lab(0.1, 1.0, f64::INFINITY);
    let mut value = 0.0;
    unsafe {
        // The norm of the form factor diverges without a cutoff.
        assert_eq!(
            nelson_coupling_constant(lab, c"phi_norm_sq".as_ptr(), &mut value),
            NelsonStatus::InvalidInput
        );
        // Mode grids need a finite cutoff, so the matrix path is closed.
        assert_eq!(
            nelson_coefficient(lab, c"a4".as_ptr(), &mut value),
            NelsonStatus::InvalidInput
        );
        assert_eq!(nelson_ground_energy(lab, 1, &mut value), NelsonStatus::InvalidInput);
        // Closed forms keep working.
        assert_eq!(
            nelson_coupling_constant(lab, c"c_II".as_ptr(), &mut value),
            NelsonStatus::Ok
        );
        nelson_lab_free(lab);
    }
}

#[test]
fn zero_ir_shift_makes_c_eps_divergent() {
    let lab = lab(0.1, 1.0, 1.0);
    let mut value = 0.0;
    unsafe {
        assert_eq!(nelson_lab_set_ir_shift(lab, 0.0), NelsonStatus::Ok);
        assert_eq!(
            nelson_coupling_constant(lab, c"c_eps".as_ptr(), &mut value),
            NelsonStatus::InvalidInput
        );
        assert!(last_error().contains("c_eps"));
        assert_eq!(nelson_lab_set_ir_shift(lab, 1e-3), NelsonStatus::Ok);
        assert_eq!(
            nelson_coupling_constant(lab, c"c_eps".as_ptr(), &mut value),
            NelsonStatus::Ok
        );
        assert!(value > 0.0);
        nelson_lab_free(lab);
    }
}

#[test]
fn coefficients_and_ground_energy_are_deterministic() {
    let lab = lab(0.1, 1.0, 1.0);
    let mut a4_first = 0.0;
    let mut a4_second = 0.0;
    let mut ground_first = 0.0;
    let mut ground_second = 0.0;
    unsafe {
        assert_eq!(nelson_lab_set_basis(lab, 2, 2, 3), NelsonStatus::Ok);
        assert_eq!(
            nelson_coefficient(lab, c"a4".as_ptr(), &mut a4_first),
            NelsonStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(nelson_coefficient(lab, c"a4".as_ptr(), &mut a4_second), NelsonStatus::Ok);
        assert_eq!(nelson_ground_energy(lab, 3, &mut ground_first), NelsonStatus::Ok);
        assert_eq!(nelson_ground_energy(lab, 3, &mut ground_second), NelsonStatus::Ok);
        nelson_lab_free(lab);
    }
    assert!(a4_first > 0.0);
    assert_eq!(a4_first.to_bits(), a4_second.to_bits());
    assert!(ground_first < 0.0, "truncated self-energy ground {ground_first}");
    assert_eq!(ground_first.to_bits(), ground_second.to_bits());
}

#[test]
fn lemma_suite_reports_eight_bounds_and_passes_the_gate() {
    let lab = lab(0.1, 1.0, 1.0);
    let mut min_margin = f64::NEG_INFINITY;
    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    unsafe {
        assert_eq!(nelson_lab_set_basis(lab, 2, 2, 3), NelsonStatus::Ok);
        let status = nelson_lemma_suite(lab, 1, &mut min_margin, &mut json);
        assert_eq!(status, NelsonStatus::Ok, "{}", last_error());
        assert!(min_margin >= -1e-8, "worst margin {min_margin}");
        assert!(!json.is_null());
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        nelson_string_free(json);

        let reports: serde_json::Value = serde_json::from_str(&text).unwrap();
        let reports = reports.as_array().expect("JSON array of reports");
        assert_eq!(reports.len(), 8);
        for report in reports {
            assert!(report["lemma_id"].is_string());
            assert!(report["margin"].is_number());
            assert!(report["c_star"].is_number());
            assert!(report["alpha"].is_number());
        }

        // A shallow photon cap is rejected before any work happens.
        assert_eq!(nelson_lab_set_basis(lab, 2, 2, 2), NelsonStatus::Ok);
        assert_eq!(
            nelson_lemma_suite(lab, 1, &mut min_margin, ptr::null_mut()),
            NelsonStatus::InvalidInput
        );
        nelson_lab_free(lab);
    }
}

#[test]
fn header_declares_the_full_surface() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/nelson.h");
    let text = fs::read_to_string(&header).expect("generated header");
    for needle in [
        "typedef struct NelsonLab NelsonLab;",
        "NELSON_STATUS_OK = 0",
        "NELSON_STATUS_INVALID_INPUT = 2",
        "NELSON_STATUS_NO_CONVERGENCE = 3",
        "NELSON_STATUS_LEMMA_MARGIN = 4",
        "NELSON_STATUS_NULL_ARGUMENT = 5",
        "NELSON_STATUS_PANIC = 6",
        "nelson_abi_version",
        "nelson_last_error",
        "nelson_string_free",
        "nelson_lab_new",
        "nelson_lab_free",
        "nelson_lab_set_basis",
        "nelson_lab_set_ir_shift",
        "nelson_atom_energy",
        "nelson_binding_integral",
        "nelson_binding_energy",
        "nelson_coupling_constant",
        "nelson_coefficient",
        "nelson_ground_energy",
        "nelson_lemma_suite",
    ] {
        assert!(text.contains(needle), "header is missing {needle:?}");
    }
}

const SMOKE_C: &str = r#"
#include <math.h>
#include <stdio.h>
#include "nelson.h"

int main(void) {
    NelsonLab *lab = NULL;
    if (nelson_lab_new(0.1, 1.0, 1.0, &lab) != NELSON_STATUS_OK) return 1;
    double e_bin = 0.0;
    if (nelson_binding_energy(lab, &e_bin) != NELSON_STATUS_OK) return 2;
    double c_ii = 0.0;
    if (nelson_coupling_constant(lab, "c_II", &c_ii) != NELSON_STATUS_OK) return 3;
    double bogus = 0.0;
    if (nelson_coupling_constant(lab, "bogus", &bogus) != NELSON_STATUS_INVALID_INPUT) return 4;
    if (nelson_last_error()[0] == '\0') return 5;
    nelson_lab_free(lab);
    printf("%.17g %.17g\n", e_bin, c_ii);
    return 0;
}
"#;

/// Finds the freshest build of the static library: the uplifted copy in
/// target/debug when present, otherwise the newest hashed artifact in
/// deps/.
fn static_lib() -> PathBuf {
    let deps_dir = env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let target_dir = deps_dir.parent().unwrap().to_path_buf();
    let mut candidates = vec![target_dir.join("libnelson_ffi.a")];
    for entry in fs::read_dir(&deps_dir).unwrap().flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("libnelson_ffi") && name.ends_with(".a") {
            candidates.push(entry.path());
        }
    }
    candidates
        .into_iter()
        .filter(|p| p.exists())
        .max_by_key(|p| fs::metadata(p).and_then(|m| m.modified()).ok())
        .expect("a libnelson_ffi.a artifact next to the test binary")
}

#[test]
fn c_program_compiles_links_and_runs() {
    let include_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let work = tempfile::tempdir().unwrap();
    let source = work.path().join("smoke.c");
    let binary = work.path().join("smoke");
    fs::write(&source, SMOKE_C).unwrap();

    let compile = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include_dir)
        .arg(&source)
        .arg(static_lib())
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&binary)
        .output()
        .expect("cc is available in this environment");
    assert!(
        compile.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&binary).output().unwrap();
    assert!(
        run.status.success(),
        "smoke binary exited with {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    let mut fields = stdout.split_whitespace();
    let e_bin: f64 = fields.next().unwrap().parse().unwrap();
    let c_ii: f64 = fields.next().unwrap().parse().unwrap();

    let e_at = atom_energy(0.1, 1.0);
    let expected = -e_at * (1.0 + 0.01 * binding_integral_closed(&Cutoff::Finite(1.0)));
    assert!((e_bin - expected).abs() <= 1e-12 * expected.abs());
    assert!((c_ii - c_ii_closed(&Cutoff::Finite(1.0))).abs() <= 1e-10);
}

// Binding generators build name strings at runtime rather than using C
// literals; make sure that path behaves identically.
#[test]
fn runtime_names_work_like_literals() {
    let lab = lab(0.1, 1.0, 1.0);
    let name = CString::new("c_II").unwrap();
    let mut value = 0.0;
    unsafe {
        assert_eq!(
            nelson_coupling_constant(lab, name.as_ptr(), &mut value),
            NelsonStatus::Ok
        );
        nelson_lab_free(lab);
    }
    assert!(value > 0.0);
}
