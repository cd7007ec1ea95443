#ifndef NELSON_H
#define NELSON_H

/* Generated by cbindgen from the nelson-ffi crate. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every entry point. The numeric values agree
// with the CLI exit codes where one exists, so scripts and C callers can
// share a classification table.
typedef enum NelsonStatus {
  // The call succeeded and its out parameters are valid.
  NELSON_STATUS_OK = 0,
  // Invalid parameters, an unknown name, or an unusable state.
  NELSON_STATUS_INVALID_INPUT = 2,
  // An iterative method exhausted its budget or met a non-finite sample.
  NELSON_STATUS_NO_CONVERGENCE = 3,
  // The lemma suite ran, but a margin fell below the acceptance gate.
  NELSON_STATUS_LEMMA_MARGIN = 4,
  // A required pointer argument was null.
  NELSON_STATUS_NULL_ARGUMENT = 5,
  // A panic was caught at the boundary; treat the handle as poisoned.
  NELSON_STATUS_PANIC = 6,
} NelsonStatus;

// Opaque laboratory handle: model parameters plus the basis resolution
// used by the matrix-path getters. Create with [`nelson_lab_new`], free
// with [`nelson_lab_free`]. Handles are not thread-safe; share one across
// threads only behind external synchronization.
typedef struct NelsonLab NelsonLab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// ABI revision of this header and library. Bump on any breaking change.
uint32_t nelson_abi_version(void);

// Message describing this thread's most recent failure, NUL-terminated.
// The pointer stays valid until the next failing call on the same thread;
// never free it. Before any failure it is the empty string.
const char *nelson_last_error(void);

// Frees a string handed out by this library (currently only the JSON
// report of [`nelson_lemma_suite`]). Passing null is a no-op.
//
// # Safety
//
// `s` must be a pointer previously returned by this library and not yet
// freed.
void nelson_string_free(char *s);

// Creates a laboratory for coupling `e` in [0, 1), nuclear charge `z >= 0`
// and ultraviolet cutoff `lambda` (positive; pass C `INFINITY` to remove
// the cutoff, which leaves only the closed-form getters usable). The
// infrared shift starts at its default `e^7`; override it with
// [`nelson_lab_set_ir_shift`]. The basis resolution starts at
// `n_radial = 3`, `n_angular = 4`, `n_max = 3`.
//
// On success `*out` owns the handle; release it with [`nelson_lab_free`].
//
// # Safety
//
// `out` must point to writable storage for one pointer.
enum NelsonStatus nelson_lab_new(double e, double z, double lambda, struct NelsonLab **out);

// Frees a laboratory handle. Passing null is a no-op.
//
// # Safety
//
// `lab` must be a handle from [`nelson_lab_new`] that has not been freed.
void nelson_lab_free(struct NelsonLab *lab);

// Sets the basis resolution used by the matrix-path getters: `n_radial`
// radial shells, `n_angular` angular directions (half as many polar
// nodes, at least one), photon cap `n_max`. Sizes must be positive; the
// basis dimension limit is enforced when a basis is actually built.
//
// # Safety
//
// `lab` must be a live handle from [`nelson_lab_new`].
enum NelsonStatus nelson_lab_set_basis(struct NelsonLab *lab,
                                       size_t n_radial,
                                       size_t n_angular,
                                       uint32_t n_max);

// Replaces the infrared shift (`>= 0`), revalidating the parameter set.
//
// # Safety
//
// `lab` must be a live handle from [`nelson_lab_new`].
enum NelsonStatus nelson_lab_set_ir_shift(struct NelsonLab *lab, double ir_shift);

// Ground energy of the bare atom, `E_at = -(Z e^2 / 4 pi)^2 / 4`.
//
// # Safety
//
// `lab` must be a live handle; `out` must point to writable storage for
// one double.
enum NelsonStatus nelson_atom_energy(const struct NelsonLab *lab, double *out);

// Closed form of the radiative-correction integral
// `I(lambda) = (1 - (1 + lambda)^{-2}) / (6 pi^2)`, which tends to
// `1/(6 pi^2)` as the cutoff is removed.
//
// # Safety
//
// `lab` must be a live handle; `out` must point to writable storage for
// one double.
enum NelsonStatus nelson_binding_integral(const struct NelsonLab *lab, double *out);

// Binding energy through the leading radiative correction,
// `E_bin = -E_at (1 + e^2 I(lambda))`. Nonnegative for every valid
// parameter set: the field correction strengthens the binding.
//
// # Safety
//
// `lab` must be a live handle; `out` must point to writable storage for
// one double.
enum NelsonStatus nelson_binding_energy(const struct NelsonLab *lab, double *out);

// Coupling-constant integral by name: `"c_I"`, `"c_II"`, `"c_A"`,
// `"c_eps"`, or `"phi_norm_sq"`. Divergent combinations (for example
// `phi_norm_sq` without a cutoff, or `c_eps` with a zero shift) report
// `InvalidInput` instead of writing a value.
//
// # Safety
//
// `lab` must be a live handle; `name` must be a NUL-terminated string;
// `out` must point to writable storage for one double.
enum NelsonStatus nelson_coupling_constant(const struct NelsonLab *lab,
                                           const char *name,
                                           double *out);

// Self-energy expansion coefficient by name (`"a4"`, `"b1"`, `"b2"`,
// `"b3"`), evaluated as a vacuum expectation value on the laboratory's
// basis. Needs a finite cutoff and a photon cap deep enough for the
// coefficient (the built-in table enforces this).
//
// # Safety
//
// `lab` must be a live handle; `name` must be a NUL-terminated string;
// `out` must point to writable storage for one double.
enum NelsonStatus nelson_coefficient(const struct NelsonLab *lab, const char *name, double *out);

// Ground energy of the truncated self-energy operator on the laboratory's
// basis: Lanczos to tolerance 1e-11 (at most 600 iterations) followed by
// a double-double Rayleigh-quotient refinement. Deterministic for a fixed
// seed and basis.
//
// # Safety
//
// `lab` must be a live handle; `out` must point to writable storage for
// one double.
enum NelsonStatus nelson_ground_energy(const struct NelsonLab *lab, uint64_t seed, double *out);

// Runs the operator-inequality suite on the laboratory's basis (photon
// cap at least 3). Writes the smallest margin to `*min_margin` and the
// full report array, JSON-encoded, to `*json` (free it with
// [`nelson_string_free`]); either out pointer may be null to skip that
// output. Returns `LemmaMargin` when a margin falls below the acceptance
// gate of -1e-8; the outputs are still written in that case so the caller
// can inspect the offending bound.
//
// # Safety
//
// `lab` must be a live handle; `min_margin` and `json`, when non-null,
// must point to writable storage for one double and one pointer.
enum NelsonStatus nelson_lemma_suite(const struct NelsonLab *lab,
                                     uint64_t seed,
                                     double *min_margin,
                                     char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NELSON_H */
