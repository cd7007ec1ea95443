//! C ABI over the nelson laboratory: an opaque handle carrying model
//! parameters plus a basis resolution, and out-parameter getters for the
//! headline quantities (atom energy, binding energy, coupling constants,
//! expansion coefficients, truncated ground energies, lemma margins).
//!
//! The header `include/nelson.h` is generated by cbindgen at build time.
//! Conventions, repeated there:
//!
//! * every entry point returns a [`NelsonStatus`]; out parameters are
//!   written only where the documentation says so (on success, or for the
//!   lemma suite also on a margin failure)
//! * pointer arguments are borrowed for the duration of the call unless a
//!   function is documented to take or hand over ownership
//! * panics never cross the boundary; they are caught and reported as
//!   `Panic`
//! * after any failing call, [`nelson_last_error`] returns a thread-local
//!   NUL-terminated description of what went wrong

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nelson::cli::{exit_code, MARGIN_GATE};
use nelson::fock::{assemble_t, matrix_path_vev, FockSpace};
use nelson::jsonio::to_json_string;
use nelson::lemma_lab::lemma_suite;
use nelson::modes::{
    binding_integral_closed, build_mode_grid, coupling_constants, Cutoff, ModelParams,
    ScalarEstimate,
};
use nelson::spectral::{atom_energy, lanczos_ground, refine_ground_dd};
use nelson::wick::builtin_vevs;
use nelson::{Error, Result};

/// Status code returned by every entry point. The numeric values agree
/// with the CLI exit codes where one exists, so scripts and C callers can
/// share a classification table.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NelsonStatus {
    /// The call succeeded and its out parameters are valid.
    Ok = 0,
    /// Invalid parameters, an unknown name, or an unusable state.
    InvalidInput = 2,
    /// An iterative method exhausted its budget or met a non-finite sample.
    NoConvergence = 3,
    /// The lemma suite ran, but a margin fell below the acceptance gate.
    LemmaMargin = 4,
    /// A required pointer argument was null.
    NullArgument = 5,
    /// A panic was caught at the boundary; treat the handle as poisoned.
    Panic = 6,
}

/// Opaque laboratory handle: model parameters plus the basis resolution
/// used by the matrix-path getters. Create with [`nelson_lab_new`], free
/// with [`nelson_lab_free`]. Handles are not thread-safe; share one across
/// threads only behind external synchronization.
pub struct NelsonLab {
    params: ModelParams,
    n_radial: usize,
    n_angular: usize,
    n_max: u32,
}

impl NelsonLab {
    /// Builds the truncated Fock space for the current basis resolution.
    fn space(&self) -> Result<FockSpace> {
        let grid = build_mode_grid(self.n_radial, self.n_angular, &self.params)?;
        FockSpace::new(grid, self.n_max, &self.params)
    }
}

// ---------------------------------------------------------------------------
// Error reporting

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    // CString::new rejects interior NULs, which cannot occur in our own
    // messages; truncate defensively anyway.
    let clean = message.split('\0').next().unwrap_or("");
    let stored = CString::new(clean).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = stored);
}

fn status_of(err: &Error) -> NelsonStatus {
    match exit_code(err) {
        3 => NelsonStatus::NoConvergence,
        4 => NelsonStatus::LemmaMargin,
        _ => NelsonStatus::InvalidInput,
    }
}

/// Runs a fallible body, translating errors and panics into status codes
/// and recording their message for [`nelson_last_error`].
fn guarded(body: impl FnOnce() -> Result<()>) -> NelsonStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => NelsonStatus::Ok,
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            status_of(&err)
        }
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with a non-string payload".into());
            set_last_error(&format!("panic: {text}"));
            NelsonStatus::Panic
        }
    }
}

macro_rules! nonnull {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_last_error(concat!(stringify!($ptr), " must not be null"));
            return NelsonStatus::NullArgument;
        }
    };
}

/// Borrows a C string argument as UTF-8.
unsafe fn name_arg<'a>(ptr: *const c_char) -> Result<&'a str> {
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Error::InvalidParams("name is not valid UTF-8".into()))
}

fn finite_value(name: &str, est: ScalarEstimate) -> Result<f64> {
    if est.divergent {
        return Err(Error::InvalidParams(format!(
            "{name} diverges for these parameters"
        )));
    }
    est.value.ok_or_else(|| {
        Error::InvalidParams(format!("{name} has no value for these parameters"))
    })
}

// ---------------------------------------------------------------------------
// Library metadata and memory management

/// ABI revision of this header and library. Bump on any breaking change.
#[no_mangle]
pub extern "C" fn nelson_abi_version() -> u32 {
    1
}

/// Message describing this thread's most recent failure, NUL-terminated.
/// The pointer stays valid until the next failing call on the same thread;
/// never free it. Before any failure it is the empty string.
#[no_mangle]
pub extern "C" fn nelson_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string handed out by this library (currently only the JSON
/// report of [`nelson_lemma_suite`]). Passing null is a no-op.
///
/// # Safety
///
/// `s` must be a pointer previously returned by this library and not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn nelson_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Handle lifecycle

/// Creates a laboratory for coupling `e` in [0, 1), nuclear charge `z >= 0`
/// and ultraviolet cutoff `lambda` (positive; pass C `INFINITY` to remove
/// the cutoff, which leaves only the closed-form getters usable). The
/// infrared shift starts at its default `e^7`; override it with
/// [`nelson_lab_set_ir_shift`]. The basis resolution starts at
/// `n_radial = 3`, `n_angular = 4`, `n_max = 3`.
///
/// On success `*out` owns the handle; release it with [`nelson_lab_free`].
///
/// # Safety
///
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nelson_lab_new(
    e: f64,
    z: f64,
    lambda: f64,
    out: *mut *mut NelsonLab,
) -> NelsonStatus {
    nonnull!(out);
    guarded(|| {
        let cutoff = if lambda.is_infinite() && lambda > 0.0 {
            Cutoff::Infinite
        } else {
            Cutoff::Finite(lambda)
        };
        let params = ModelParams::new(e, z, cutoff)?;
        let lab = Box::new(NelsonLab { params, n_radial: 3, n_angular: 4, n_max: 3 });
        *out = Box::into_raw(lab);
        Ok(())
    })
}

/// Frees a laboratory handle. Passing null is a no-op.
///
/// # Safety
///
/// `lab` must be a handle from [`nelson_lab_new`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn nelson_lab_free(lab: *mut NelsonLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Sets the basis resolution used by the matrix-path getters: `n_radial`
/// radial shells, `n_angular` angular directions (half as many polar
/// nodes, at least one), photon cap `n_max`. Sizes must be positive; the
/// basis dimension limit is enforced when a basis is actually built.
///
/// # Safety
///
/// `lab` must be a live handle from [`nelson_lab_new`].
#[no_mangle]
pub unsafe extern "C" fn nelson_lab_set_basis(
    lab: *mut NelsonLab,
    n_radial: usize,
    n_angular: usize,
    n_max: u32,
) -> NelsonStatus {
    nonnull!(lab);
    guarded(|| {
        if n_radial == 0 || n_angular == 0 {
            return Err(Error::InvalidParams(format!(
                "grid sizes must be positive, got n_radial={n_radial}, n_angular={n_angular}"
            )));
        }
        let lab = &mut *lab;
        lab.n_radial = n_radial;
        lab.n_angular = n_angular;
        lab.n_max = n_max;
        Ok(())
    })
}

/// Replaces the infrared shift (`>= 0`), revalidating the parameter set.
///
/// # Safety
///
/// `lab` must be a live handle from [`nelson_lab_new`].
#[no_mangle]
pub unsafe extern "C" fn nelson_lab_set_ir_shift(
    lab: *mut NelsonLab,
    ir_shift: f64,
) -> NelsonStatus {
    nonnull!(lab);
    guarded(|| {
        let lab = &mut *lab;
        lab.params =
            ModelParams::with_ir_shift(lab.params.e, lab.params.z, lab.params.lambda, ir_shift)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Closed-form getters

/// Ground energy of the bare atom, `E_at = -(Z e^2 / 4 pi)^2 / 4`.
///
/// # Safety
///
/// `lab` must be a live handle; `out` must point to writable storage for
/// one double.
#[no_mangle]
pub unsafe extern "C" fn nelson_atom_energy(
    lab: *const NelsonLab,
    out: *mut f64,
) -> NelsonStatus {
    nonnull!(lab);
    nonnull!(out);
    guarded(|| {
        let lab = &*lab;
        *out = atom_energy(lab.params.e, lab.params.z);
        Ok(())
    })
}

/// Closed form of the radiative-correction integral
/// `I(lambda) = (1 - (1 + lambda)^{-2}) / (6 pi^2)`, which tends to
/// `1/(6 pi^2)` as the cutoff is removed.
///
/// # Safety
///
/// `lab` must be a live handle; `out` must point to writable storage for
/// one double.
#[no_mangle]
pub unsafe extern "C" fn nelson_binding_integral(
    lab: *const NelsonLab,
    out: *mut f64,
) -> NelsonStatus {
    nonnull!(lab);
    nonnull!(out);
    guarded(|| {
        let lab = &*lab;
        *out = binding_integral_closed(&lab.params.lambda);
        Ok(())
    })
}

/// Binding energy through the leading radiative correction,
/// `E_bin = -E_at (1 + e^2 I(lambda))`. Nonnegative for every valid
/// parameter set: the field correction strengthens the binding.
///
/// # Safety
///
/// `lab` must be a live handle; `out` must point to writable storage for
/// one double.
#[no_mangle]
pub unsafe extern "C" fn nelson_binding_energy(
    lab: *const NelsonLab,
    out: *mut f64,
) -> NelsonStatus {
    nonnull!(lab);
    nonnull!(out);
    guarded(|| {
        let lab = &*lab;
        let e_at = atom_energy(lab.params.e, lab.params.z);
        let correction = lab.params.e * lab.params.e * binding_integral_closed(&lab.params.lambda);
        *out = -e_at * (1.0 + correction);
        Ok(())
    })
}

/// Coupling-constant integral by name: `"c_I"`, `"c_II"`, `"c_A"`,
/// `"c_eps"`, or `"phi_norm_sq"`. Divergent combinations (for example
/// `phi_norm_sq` without a cutoff, or `c_eps` with a zero shift) report
/// `InvalidInput` instead of writing a value.
///
/// # Safety
///
/// `lab` must be a live handle; `name` must be a NUL-terminated string;
/// `out` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn nelson_coupling_constant(
    lab: *const NelsonLab,
    name: *const c_char,
    out: *mut f64,
) -> NelsonStatus {
    nonnull!(lab);
    nonnull!(name);
    nonnull!(out);
    guarded(|| {
        let lab = &*lab;
        let name = name_arg(name)?;
        let report = coupling_constants(&lab.params)?;
        let est = match name {
            "c_I" => report.c_i,
            "c_II" => report.c_ii,
            "c_A" => report.c_a,
            "c_eps" => report.c_eps,
            "phi_norm_sq" => report.phi_norm_sq,
            other => {
                return Err(Error::InvalidParams(format!(
                    "unknown constant {other:?}; expected c_I, c_II, c_A, c_eps, or phi_norm_sq"
                )))
            }
        };
        *out = finite_value(name, est)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Matrix-path getters

/// Self-energy expansion coefficient by name (`"a4"`, `"b1"`, `"b2"`,
/// `"b3"`), evaluated as a vacuum expectation value on the laboratory's
/// basis. Needs a finite cutoff and a photon cap deep enough for the
/// coefficient (the built-in table enforces this).
///
/// # Safety
///
/// `lab` must be a live handle; `name` must be a NUL-terminated string;
/// `out` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn nelson_coefficient(
    lab: *const NelsonLab,
    name: *const c_char,
    out: *mut f64,
) -> NelsonStatus {
    nonnull!(lab);
    nonnull!(name);
    nonnull!(out);
    guarded(|| {
        let lab = &*lab;
        let name = name_arg(name)?;
        let vevs = builtin_vevs();
        let op = vevs.get(name).ok_or_else(|| {
            let known: Vec<&str> = vevs.keys().map(String::as_str).collect();
            Error::InvalidParams(format!(
                "unknown coefficient {name:?}; expected one of {}",
                known.join(", ")
            ))
        })?;
        *out = matrix_path_vev(&lab.space()?, op)?;
        Ok(())
    })
}

/// Ground energy of the truncated self-energy operator on the laboratory's
/// basis: Lanczos to tolerance 1e-11 (at most 600 iterations) followed by
/// a double-double Rayleigh-quotient refinement. Deterministic for a fixed
/// seed and basis.
///
/// # Safety
///
/// `lab` must be a live handle; `out` must point to writable storage for
/// one double.
#[no_mangle]
pub unsafe extern "C" fn nelson_ground_energy(
    lab: *const NelsonLab,
    seed: u64,
    out: *mut f64,
) -> NelsonStatus {
    nonnull!(lab);
    nonnull!(out);
    guarded(|| {
        let lab = &*lab;
        let space = lab.space()?;
        let op = assemble_t(&space, lab.params.e);
        let (_, vector) = lanczos_ground(&op, 1e-11, 600, seed)?;
        *out = refine_ground_dd(&op, &vector).to_f64();
        Ok(())
    })
}

/// Runs the operator-inequality suite on the laboratory's basis (photon
/// cap at least 3). Writes the smallest margin to `*min_margin` and the
/// full report array, JSON-encoded, to `*json` (free it with
/// [`nelson_string_free`]); either out pointer may be null to skip that
/// output. Returns `LemmaMargin` when a margin falls below the acceptance
/// gate of -1e-8; the outputs are still written in that case so the caller
/// can inspect the offending bound.
///
/// # Safety
///
/// `lab` must be a live handle; `min_margin` and `json`, when non-null,
/// must point to writable storage for one double and one pointer.
#[no_mangle]
pub unsafe extern "C" fn nelson_lemma_suite(
    lab: *const NelsonLab,
    seed: u64,
    min_margin: *mut f64,
    json: *mut *mut c_char,
) -> NelsonStatus {
    nonnull!(lab);
    guarded(|| {
        let lab = &*lab;
        let reports = lemma_suite(&lab.space()?, seed)?;
        let mut worst = &reports[0];
        for report in &reports {
            if report.margin < worst.margin {
                worst = report;
            }
        }
        if !min_margin.is_null() {
            *min_margin = worst.margin;
        }
        if !json.is_null() {
            let text = to_json_string(&reports)?;
            let owned = CString::new(text)
                .map_err(|_| Error::InvalidParams("JSON contained a NUL byte".into()))?;
            *json = owned.into_raw();
        }
        if worst.margin < MARGIN_GATE {
            return Err(Error::LemmaMargin {
                lemma: worst.lemma_id.clone(),
                margin: worst.margin,
            });
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_values_match_the_cli_exit_codes() {
        assert_eq!(NelsonStatus::Ok as i32, 0);
        assert_eq!(NelsonStatus::InvalidInput as i32, 2);
        assert_eq!(NelsonStatus::NoConvergence as i32, 3);
        assert_eq!(NelsonStatus::LemmaMargin as i32, 4);
        assert_eq!(NelsonStatus::NullArgument as i32, 5);
        assert_eq!(NelsonStatus::Panic as i32, 6);
    }

    #[test]
    fn errors_map_onto_their_status_class() {
        let invalid = Error::InvalidParams("x".into());
        let stuck = Error::NoConvergence { what: "x".into(), value: 0.0, err: 1.0 };
        let margin = Error::LemmaMargin { lemma: "she1".into(), margin: -1.0 };
        assert_eq!(status_of(&invalid), NelsonStatus::InvalidInput);
        assert_eq!(status_of(&stuck), NelsonStatus::NoConvergence);
        assert_eq!(status_of(&margin), NelsonStatus::LemmaMargin);
    }

    #[test]
    fn last_error_round_trips_and_truncates_at_nul() {
        set_last_error("plain message");
        let ptr = nelson_last_error();
        let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
        assert_eq!(text, "plain message");

        set_last_error("head\0tail");
        let text = unsafe { CStr::from_ptr(nelson_last_error()) }.to_str().unwrap();
        assert_eq!(text, "head");
    }

    #[test]
    fn guarded_catches_panics() {
        let status = guarded(|| panic!("deliberate test panic"));
        assert_eq!(status, NelsonStatus::Panic);
        let text = unsafe { CStr::from_ptr(nelson_last_error()) }.to_str().unwrap();
        assert!(text.contains("deliberate test panic"));
    }
}
