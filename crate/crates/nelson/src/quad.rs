//! Quadrature engines: Gauss rule construction, adaptive 1d integration,
//! the exact two-photon angular reduction, and importance-sampled Monte
//! Carlo for the three-photon coefficients.

use std::cmp::Ordering;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{Cutoff, ModelParams};
use crate::wick::IntegrandExpr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adaptive1d,
    Grid3d,
    Mc,
}

/// One scalar integral with its error estimate and provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub stderr: f64,
    pub n_evals: u64,
    pub method: Method,
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Gauss rules

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Deterministic for a given n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pair(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre_pair(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_pair(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// Legendre P_n(x) and its derivative.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss rule on [0, 1] with weight function u^5, via Golub-Welsch on the
/// Jacobi(alpha = 0, beta = 5) recurrence. Returns (u_nodes, weights) with
/// sum_i w_i f(u_i) = int_0^1 u^5 f(u) du exactly for polynomial f of
/// degree <= 2n - 1. The u^5 weight is the k^2 dk Jacobian under the
/// substitution k = lambda u^2, so a constant integrand over the momentum
/// ball is integrated exactly by every grid size.
pub fn gauss_jacobi_u5(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_jacobi_u5 needs at least one node");
    let (alpha, beta) = (0.0_f64, 5.0_f64);
    // mu0 = int_{-1}^{1} (1+x)^5 dx = 2^6 / 6
    let mu0 = 64.0 / 6.0;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    diag[0] = (beta - alpha) / (alpha + beta + 2.0);
    for k in 1..n {
        let kf = k as f64;
        let s = 2.0 * kf + alpha + beta;
        diag[k] = (beta * beta - alpha * alpha) / (s * (s + 2.0));
        let b = 4.0 * kf * (kf + alpha) * (kf + beta) * (kf + alpha + beta)
            / (s * s * (s + 1.0) * (s - 1.0));
        off[k - 1] = b.sqrt();
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
        if i + 1 < n {
            jac[(i, i + 1)] = off[i];
            jac[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (x, mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // map x in [-1,1] to u in [0,1]; the weight picks up the 1/64 from
    // (1+x)^5 dx = 64 u^5 du with dx = 2 du
    let nodes = pairs.iter().map(|p| 0.5 * (1.0 + p.0)).collect();
    let weights = pairs.iter().map(|p| p.1 / 64.0).collect();
    (nodes, weights)
}

// ---------------------------------------------------------------------------
// Adaptive 1d integration

fn g7_k15_rules() -> &'static ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>)) {
    static RULES: OnceLock<((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>))> = OnceLock::new();
    RULES.get_or_init(|| (gauss_legendre(7), gauss_legendre(15)))
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl Panel {
    fn eval(f: &impl Fn(f64) -> f64, a: f64, b: f64, evals: &mut u64) -> Panel {
        let ((n7, w7), (n15, w15)) = g7_k15_rules();
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut v7 = 0.0;
        for (x, w) in n7.iter().zip(w7) {
            v7 += w * f(c + h * x);
        }
        let mut v15 = 0.0;
        for (x, w) in n15.iter().zip(w15) {
            v15 += w * f(c + h * x);
        }
        *evals += 22;
        let value = v15 * h;
        let mut err = (v15 - v7).abs() * h;
        if !value.is_finite() {
            err = f64::INFINITY;
        }
        Panel { a, b, value, err }
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on the error estimate; NaN sorts low so it is never split
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Less)
    }
}

const PANEL_BUDGET: usize = 4000;

/// Adaptive Gauss integration of f over [a, b]. Panels are bisected worst
/// error first until the summed error estimate falls below `tol`
/// (absolute). Fails with the partial value once the panel budget is spent.
pub fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(Error::InvalidParams(format!(
            "integration interval [{a}, {b}] is not finite and ordered"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance {tol} must be positive")));
    }
    let mut evals = 0u64;
    let mut heap = std::collections::BinaryHeap::new();
    heap.push(Panel::eval(&f, a, b, &mut evals));
    let mut n_panels = 1usize;
    loop {
        let err_sum: f64 = heap.iter().map(|p| p.err).sum();
        let value: f64 = heap.iter().map(|p| p.value).sum();
        if err_sum <= tol {
            return Ok(QuadResult {
                value,
                stderr: err_sum,
                n_evals: evals,
                method: Method::Adaptive1d,
                seed: None,
            });
        }
        if n_panels >= PANEL_BUDGET {
            return Err(Error::NoConvergence {
                what: format!("adaptive quadrature on [{a}, {b}]"),
                value,
                err: err_sum,
            });
        }
        let worst = heap.pop().expect("heap cannot be empty here");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval is at f64 resolution; keep its estimate and move on
            let mut done = worst;
            done.err = 0.0;
            heap.push(done);
            continue;
        }
        heap.push(Panel::eval(&f, worst.a, mid, &mut evals));
        heap.push(Panel::eval(&f, mid, worst.b, &mut evals));
        n_panels += 1;
    }
}

/// Integral of f over [a, infinity), mapped onto [0, 1) by
/// k = a + t/(1-t), dk = dt/(1-t)^2.
pub fn integrate_1d_to_inf(f: impl Fn(f64) -> f64, a: f64, tol: f64) -> Result<QuadResult> {
    // substitute k = a + (t/(1-t))^2: the squared map turns tails and
    // origins behaving like half-integer powers of k into polynomial
    // endpoint behavior, which plain k = t/(1-t) leaves integrably
    // singular at t = 1
    integrate_1d(
        |t| {
            let om = 1.0 - t;
            let q = t / om;
            let k = a + q * q;
            if !k.is_finite() {
                return 0.0;
            }
            let g = f(k) * (2.0 * q / (om * om));
            // the far tail underflows to an exact zero contribution for
            // every integrable integrand; never let an overflow artifact
            // poison the sum
            if g.is_finite() {
                g
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Radial integral int_0^lambda g(k) dk for the coupling-constant family,
/// dispatching on a finite or infinite cutoff.
pub fn integrate_radial(g: impl Fn(f64) -> f64, lambda: &Cutoff, tol: f64) -> Result<QuadResult> {
    match lambda {
        Cutoff::Finite(l) => integrate_1d(g, 0.0, *l, tol),
        Cutoff::Infinite => integrate_1d_to_inf(g, 0.0, tol),
    }
}

// ---------------------------------------------------------------------------
// Two-photon angular reduction

/// Exact angular reduction of a rotation-invariant two-photon integrand.
///
/// Aligning k1 with the z axis and writing u for the cosine of the angle
/// between k1 and k2, the full six-dimensional integral collapses to
///   int dk1 dk2 F = 8 pi^2 int_0^L dk1 int_0^L dk2 int_{-1}^{1} du
///                   k1^2 k2^2 F(k1 zhat, k2 (sqrt(1-u^2), 0, u)).
/// The returned closure evaluates the reduced integrand including the
/// 8 pi^2 k1^2 k2^2 measure and the diagram multiplicity.
pub fn reduce_two_photon(expr: &IntegrandExpr) -> Result<impl Fn(f64, f64, f64) -> f64 + '_> {
    if expr.n_vars() != 2 {
        return Err(Error::InvalidParams(format!(
            "two-photon reduction applies to 2 momentum variables, got {}",
            expr.n_vars()
        )));
    }
    Ok(move |k1: f64, k2: f64, u: f64| {
        let s = (1.0 - u * u).max(0.0).sqrt();
        let p1 = [0.0, 0.0, k1];
        let p2 = [k2 * s, 0.0, k2 * u];
        8.0 * std::f64::consts::PI.powi(2) * k1 * k1 * k2 * k2 * expr.eval(&[p1, p2])
    })
}

/// Tensor-product Gauss evaluation of a reduced two-photon integrand on
/// (0, lambda)^2 x (-1, 1), with the radial substitution k = lambda u^2
/// folded into a u^5-weighted Gauss rule. The error estimate is the
/// difference against the next coarser level.
pub fn integrate_reduced_grid(
    expr: &IntegrandExpr,
    lambda: f64,
    n_radial: usize,
    n_angular: usize,
) -> Result<QuadResult> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParams(format!(
            "grid integration needs a finite positive cutoff, got {lambda}"
        )));
    }
    let reduced = reduce_two_photon(expr)?;
    let coarse_r = (n_radial / 2).max(1);
    let coarse_a = (n_angular / 2).max(1);
    let (fine, evals_f) = reduced_grid_pass(&reduced, lambda, n_radial, n_angular);
    let (coarse, evals_c) = reduced_grid_pass(&reduced, lambda, coarse_r, coarse_a);
    Ok(QuadResult {
        value: fine,
        stderr: (fine - coarse).abs(),
        n_evals: evals_f + evals_c,
        method: Method::Grid3d,
        seed: None,
    })
}

fn reduced_grid_pass(
    reduced: &impl Fn(f64, f64, f64) -> f64,
    lambda: f64,
    n_radial: usize,
    n_angular: usize,
) -> (f64, u64) {
    let (un, uw) = gauss_jacobi_u5(n_radial);
    let (an, aw) = gauss_legendre(n_angular);
    // int_0^L g(k) k^2 dk = 2 L^3 int_0^1 u^5 g(L u^2) du, and the k^2
    // factors already live in the reduced integrand, so divide them out
    // of the node weight: weight = 2 L^3 u^5-rule-weight / k^2.
    let radial: Vec<(f64, f64)> = un
        .iter()
        .zip(&uw)
        .map(|(u, w)| {
            let k = lambda * u * u;
            (k, 2.0 * lambda.powi(3) * w / (k * k))
        })
        .collect();
    let mut total = 0.0;
    let mut evals = 0u64;
    for (k1, w1) in &radial {
        for (k2, w2) in &radial {
            let mut inner = 0.0;
            for (x, wx) in an.iter().zip(&aw) {
                inner += wx * reduced(*k1, *k2, *x);
                evals += 1;
            }
            total += w1 * w2 * inner;
        }
    }
    (total, evals)
}

// ---------------------------------------------------------------------------
// Importance-sampled Monte Carlo

/// Number of samples folded into one deterministic substream. Chunks are
/// combined in index order, so the result is independent of how many
/// worker threads processed them.
const MC_CHUNK: u64 = 16384;

/// Importance sampler for photon momenta: radii are drawn with density
/// proportional to k^2 |phi(k)|^2 (inverse transform on the closed-form
/// antiderivative log(1+k) - k/(1+k)), directions isotropically.
pub struct PhotonSampler {
    lambda: f64,
    norm: f64,
    /// per-momentum density normalization: the continuum |phi|^2 mass
    phi_mass: f64,
}

impl PhotonSampler {
    pub fn new(params: &ModelParams) -> Result<PhotonSampler> {
        let lambda = match params.lambda {
            Cutoff::Finite(l) => l,
            Cutoff::Infinite => {
                return Err(Error::InvalidParams(
                    "Monte Carlo sampling needs a finite cutoff".into(),
                ))
            }
        };
        let norm = (1.0 + lambda).ln() - lambda / (1.0 + lambda);
        if !(norm > 0.0) {
            return Err(Error::InvalidParams(format!(
                "cutoff {lambda} leaves no sampling mass"
            )));
        }
        let phi_mass = norm / (4.0 * std::f64::consts::PI.powi(2));
        Ok(PhotonSampler { lambda, norm, phi_mass })
    }

    /// Inverse CDF of the radial density by bisection plus Newton polish.
    fn sample_radius(&self, xi: f64) -> f64 {
        let target = xi * self.norm;
        let cdf = |k: f64| (1.0 + k).ln() - k / (1.0 + k);
        let mut lo = 0.0;
        let mut hi = self.lambda;
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut k = 0.5 * (lo + hi);
        for _ in 0..3 {
            let g = cdf(k) - target;
            let dg = k / ((1.0 + k) * (1.0 + k));
            if dg > 0.0 {
                k = (k - g / dg).clamp(lo.max(1e-300), hi);
            }
        }
        k
    }

    fn sample_momentum(&self, rng: &mut impl Rng) -> [f64; 3] {
        let k = self.sample_radius(rng.gen::<f64>());
        let u = 2.0 * rng.gen::<f64>() - 1.0;
        let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let s = (1.0 - u * u).max(0.0).sqrt();
        [k * s * phi.cos(), k * s * phi.sin(), k * u]
    }

    /// Three-dimensional density of `sample_momentum` at momentum k.
    fn density(&self, k: [f64; 3]) -> f64 {
        let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        let rho = crate::modes::phi_radial(kn, &Cutoff::Finite(self.lambda));
        rho * rho / self.phi_mass
    }
}

/// Importance-sampled Monte Carlo estimate of a contraction-diagram
/// integral. Deterministic for fixed (budget, seed) regardless of worker
/// count: samples are generated in fixed-size substreams seeded by
/// (seed, chunk index) and reduced in chunk order.
pub fn integrate_mc(
    expr: &IntegrandExpr,
    params: &ModelParams,
    budget: u64,
    seed: u64,
) -> Result<QuadResult> {
    if budget < 10_000 {
        return Err(Error::InvalidParams(format!(
            "Monte Carlo budget {budget} is below the minimum of 10000"
        )));
    }
    let sampler = PhotonSampler::new(params)?;
    let n_vars = expr.n_vars();
    let n_chunks = budget.div_ceil(MC_CHUNK);

    let chunk_stats = |chunk: u64| -> std::result::Result<(f64, f64, u64), Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk + 1);
        let lo = chunk * MC_CHUNK;
        let hi = ((chunk + 1) * MC_CHUNK).min(budget);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut pts = vec![[0.0f64; 3]; n_vars];
        for _ in lo..hi {
            let mut inv_density = 1.0;
            for p in pts.iter_mut() {
                *p = sampler.sample_momentum(&mut rng);
                inv_density /= sampler.density(*p);
            }
            let w = expr.eval(&pts) * inv_density;
            if !w.is_finite() {
                return Err(Error::NonFiniteSample { point: pts.clone() });
            }
            sum += w;
            sum_sq += w * w;
        }
        Ok((sum, sum_sq, hi - lo))
    };

    let per_chunk: Vec<std::result::Result<(f64, f64, u64), Error>> = {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(chunk_stats).collect()
    };

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0u64;
    for r in per_chunk {
        let (s, s2, c) = r?;
        sum += s;
        sum_sq += s2;
        count += c;
    }
    let n = count as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(QuadResult {
        value: mean,
        stderr: (var / n).sqrt(),
        n_evals: count,
        method: Method::Mc,
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::ModelParams;
    use crate::wick::{builtin_vevs, expand_vev};

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (n, w) = gauss_legendre(5);
        // degree 9 is the highest exact degree for 5 nodes
        let val: f64 = n.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!(
            (val - 2.0 / 9.0).abs() < 1e-14,
            "int x^8 over [-1,1]: got {val}, want {}",
            2.0 / 9.0
        );
        let odd: f64 = n.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!(odd.abs() < 1e-14, "odd moment should vanish, got {odd}");
    }

    #[test]
    fn jacobi_rule_reproduces_u5_moments() {
        for n in 1..=8 {
            let (u, w) = gauss_jacobi_u5(n);
            for p in 0..(2 * n) {
                let val: f64 = u.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = 1.0 / (p as f64 + 6.0);
                assert!(
                    (val - exact).abs() < 1e-13,
                    "n={n}, moment u^{p}: got {val}, want {exact}"
                );
            }
        }
    }

    #[test]
    fn adaptive_handles_smooth_and_mapped_integrands() {
        let r = integrate_1d(|k| k * k, 0.0, 1.0, 1e-12).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-14, "int k^2 = {}", r.value);

        let r = integrate_1d_to_inf(|k| (1.0 + k).powi(-3), 0.0, 1e-12).unwrap();
        assert!((r.value - 0.5).abs() < 1e-11, "int (1+k)^-3 = {}", r.value);
    }

    #[test]
    fn adaptive_reports_budget_exhaustion() {
        // k^{-0.999} is integrable but needs more panels than the budget
        // allows at this tolerance
        let err = integrate_1d(|k| k.powf(-0.999), 1e-300, 1.0, 1e-13);
        match err {
            Err(Error::NoConvergence { value, .. }) => {
                assert!(value.is_finite(), "partial value should be finite")
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn mc_integrates_a_constant_to_the_ball_volume() {
        // With the |phi|^2 weights divided out, a unit integrand estimates
        // the volume of the cutoff ball.
        let params = ModelParams::new(0.1, 1.0, Cutoff::Finite(1.0)).unwrap();
        let expr = IntegrandExpr::constant_one(1);
        let r = integrate_mc(&expr, &params, 200_000, 7).unwrap();
        let vol = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(
            (r.value - vol).abs() < 3.0 * r.stderr,
            "ball volume {} vs estimate {} +- {}",
            vol,
            r.value,
            r.stderr
        );
    }

    #[test]
    fn mc_is_deterministic_in_the_seed() {
        let params = ModelParams::new(0.1, 1.0, Cutoff::Finite(1.0)).unwrap();
        let vevs = builtin_vevs();
        let s = &vevs["a4"];
        let diagrams = expand_vev(s).unwrap();
        let expr = IntegrandExpr::from_diagrams_of(s, &diagrams, &params).unwrap();
        let r1 = integrate_mc(&expr, &params, 50_000, 42).unwrap();
        let r2 = integrate_mc(&expr, &params, 50_000, 42).unwrap();
        assert_eq!(r1.value.to_bits(), r2.value.to_bits(), "same seed, same bits");
        let r3 = integrate_mc(&expr, &params, 50_000, 43).unwrap();
        assert_ne!(r1.value.to_bits(), r3.value.to_bits(), "different seed should differ");
    }
}
