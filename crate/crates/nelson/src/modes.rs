//! Model parameters, the photon form factor, coupling constants, and the
//! discrete momentum grids every truncated-Fock computation is built on.
//!
//! Units: m = 1/2, hbar = c = 1. The single physical parameter is the
//! charge e >= 0; the ultraviolet cutoff lambda and the infrared shift
//! applied to the field energy are regularization knobs.

use num_complex::Complex64;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quad::{integrate_radial, QuadResult};

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Ultraviolet cutoff on photon momenta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cutoff {
    Finite(f64),
    Infinite,
}

impl Cutoff {
    pub fn is_finite(&self) -> bool {
        matches!(self, Cutoff::Finite(_))
    }

    /// The finite value, or an error for computations that need one.
    pub fn finite(&self) -> Result<f64> {
        match self {
            Cutoff::Finite(l) => Ok(*l),
            Cutoff::Infinite => Err(Error::InvalidParams(
                "this computation needs a finite cutoff".into(),
            )),
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cutoff::Finite(l) => ser.serialize_f64(*l),
            Cutoff::Infinite => ser.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct CutoffVisitor;
        impl Visitor<'_> for CutoffVisitor {
            type Value = Cutoff;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "a positive number or the string \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Cutoff, E> {
                Ok(Cutoff::Finite(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Cutoff, E> {
                Ok(Cutoff::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Cutoff, E> {
                Ok(Cutoff::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Cutoff, E> {
                if v == "inf" {
                    Ok(Cutoff::Infinite)
                } else {
                    Err(E::custom(format!("unknown cutoff string {v:?}")))
                }
            }
        }
        de.deserialize_any(CutoffVisitor)
    }
}

/// Full parameter set of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// coupling charge, the only physical parameter
    pub e: f64,
    /// nuclear charge multiplying the external Coulomb potential
    pub z: f64,
    /// ultraviolet cutoff on photon momenta
    pub lambda: Cutoff,
    /// infrared shift added to every photon frequency in the field energy
    pub ir_shift: f64,
}

/// The default infrared shift e^7. Evaluated through one shared opaque
/// code path: the optimizer const-folds `powi` at literal call sites to
/// different bits than the runtime expansion produces, and a stored shift
/// is recognized as derived (rather than pinned) by exact bit equality.
pub fn default_ir_shift(e: f64) -> f64 {
    std::hint::black_box(e).powi(7)
}

impl ModelParams {
    /// Parameters with the default infrared shift e^7, which vanishes fast
    /// enough to stay below every expansion order carried here.
    pub fn new(e: f64, z: f64, lambda: Cutoff) -> Result<ModelParams> {
        Self::with_ir_shift(e, z, lambda, default_ir_shift(e))
    }

    pub fn with_ir_shift(e: f64, z: f64, lambda: Cutoff, ir_shift: f64) -> Result<ModelParams> {
        if !e.is_finite() || !(0.0..1.0).contains(&e) {
            return Err(Error::InvalidParams(format!(
                "coupling e must lie in [0, 1), got {e}"
            )));
        }
        if !z.is_finite() || z < 0.0 {
            return Err(Error::InvalidParams(format!(
                "nuclear charge z must be finite and >= 0, got {z}"
            )));
        }
        if let Cutoff::Finite(l) = lambda {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "cutoff must be positive and finite, got {l}"
                )));
            }
        }
        if !ir_shift.is_finite() || ir_shift < 0.0 {
            return Err(Error::InvalidParams(format!(
                "infrared shift must be finite and >= 0, got {ir_shift}"
            )));
        }
        Ok(ModelParams { e, z, lambda, ir_shift })
    }
}

/// Radial magnitude of the vector form factor: |phi(k)| for |k| = k.
/// Vanishes beyond the cutoff.
pub fn phi_radial(k: f64, lambda: &Cutoff) -> f64 {
    if k <= 0.0 {
        return f64::INFINITY;
    }
    if let Cutoff::Finite(l) = lambda {
        if k >= *l {
            return 0.0;
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    two_pi.powf(-1.5) / ((2.0 * k).sqrt() * (1.0 + k))
}

/// Vector form factor phi(k) = (2 pi)^{-3/2} (2|k|)^{-1/2} k / (|k| + |k|^2)
/// for |k| below the cutoff, zero above it. The origin is a genuine
/// singularity and is rejected.
pub fn form_factor(k: [f64; 3], params: &ModelParams) -> Result<[f64; 3]> {
    let kn = norm3(k);
    if kn == 0.0 {
        return Err(Error::SingularInput);
    }
    let mag = phi_radial(kn, &params.lambda);
    Ok([mag * k[0] / kn, mag * k[1] / kn, mag * k[2] / kn])
}

/// A scalar that may carry an error bar or be flagged divergent instead of
/// holding a value at all.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub divergent: bool,
}

impl ScalarEstimate {
    pub fn exact(value: f64) -> ScalarEstimate {
        ScalarEstimate { value: Some(value), stderr: Some(0.0), divergent: false }
    }

    pub fn divergent() -> ScalarEstimate {
        ScalarEstimate { value: None, stderr: None, divergent: true }
    }

    fn from_quad(q: QuadResult) -> ScalarEstimate {
        ScalarEstimate { value: Some(q.value), stderr: Some(q.stderr), divergent: false }
    }
}

/// The form-factor moments controlling every operator bound: moments of
/// |phi|^2 against inverse powers of |k|, plus the plain norm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstantsReport {
    /// int |phi|^2 / |k|^{1/2} dk, the half-power infrared moment
    #[serde(rename = "c_I")]
    pub c_i: ScalarEstimate,
    /// int |phi|^2 / |k| dk, the inverse-frequency moment
    #[serde(rename = "c_II")]
    pub c_ii: ScalarEstimate,
    /// alias of c_II in this model; kept separate because it plays a
    /// different role (annihilation-operator relative bound)
    #[serde(rename = "c_A")]
    pub c_a: ScalarEstimate,
    /// int |phi|^2 / (|k| (|k| + ir_shift)) dk; diverges when the shift is 0
    pub c_eps: ScalarEstimate,
    /// int |phi|^2 dk; diverges logarithmically as the cutoff grows
    pub phi_norm_sq: ScalarEstimate,
}

const FOUR_PI_SQ: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// c_II = int |phi(k)|^2 / |k| dk in closed form: lambda/(4 pi^2 (1+lambda)).
pub fn c_ii_closed(lambda: &Cutoff) -> f64 {
    match lambda {
        Cutoff::Finite(l) => l / (FOUR_PI_SQ * (1.0 + l)),
        Cutoff::Infinite => 1.0 / FOUR_PI_SQ,
    }
}

/// c_I = int |phi(k)|^2 / |k|^{1/2} dk in closed form:
/// (atan(sqrt(lambda)) - sqrt(lambda)/(1+lambda)) / (4 pi^2), approaching
/// 1/(8 pi) as the cutoff grows.
pub fn c_i_closed(lambda: &Cutoff) -> f64 {
    match lambda {
        Cutoff::Finite(l) => {
            let s = l.sqrt();
            (s.atan() - s / (1.0 + l)) / FOUR_PI_SQ
        }
        Cutoff::Infinite => 1.0 / (8.0 * std::f64::consts::PI),
    }
}

/// ||phi||^2 = (log(1+lambda) - lambda/(1+lambda)) / (4 pi^2); None at
/// infinite cutoff where the integral diverges logarithmically.
pub fn phi_norm_sq_closed(lambda: &Cutoff) -> Option<f64> {
    match lambda {
        Cutoff::Finite(l) => Some(((1.0 + l).ln() - l / (1.0 + l)) / FOUR_PI_SQ),
        Cutoff::Infinite => None,
    }
}

/// The radiative correction integral multiplying e^2 in the binding
/// energy: (1 - (1+lambda)^{-2}) / (6 pi^2), approaching 1/(6 pi^2).
pub fn binding_integral_closed(lambda: &Cutoff) -> f64 {
    let six_pi_sq = 6.0 * std::f64::consts::PI * std::f64::consts::PI;
    match lambda {
        Cutoff::Finite(l) => (1.0 - (1.0 + l).powi(-2)) / six_pi_sq,
        Cutoff::Infinite => 1.0 / six_pi_sq,
    }
}

/// The shifted inverse moment at infinite cutoff in closed form:
/// (log(1/eps)/(1-eps)^2 - 1/(1-eps)) / (4 pi^2), valid for 0 < eps < 1.
pub fn c_eps_closed_infinite(eps: f64) -> Option<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return None;
    }
    let om = 1.0 - eps;
    Some(((1.0 / eps).ln() / (om * om) - 1.0 / om) / FOUR_PI_SQ)
}

/// All form-factor moments for one parameter set, by adaptive quadrature
/// with divergent cases flagged analytically instead of failing.
pub fn coupling_constants(params: &ModelParams) -> Result<ConstantsReport> {
    let tol = 1e-12;
    let lambda = &params.lambda;
    // |phi(k)|^2 integrated over angles leaves the radial density
    // k / (4 pi^2 (1+k)^2) dk; each moment reweights it.
    let radial = |k: f64| k / (FOUR_PI_SQ * (1.0 + k) * (1.0 + k));

    let c_i = ScalarEstimate::from_quad(integrate_radial(|k| radial(k) / k.sqrt(), lambda, tol)?);
    let c_ii = ScalarEstimate::from_quad(integrate_radial(|k| radial(k) / k, lambda, tol)?);
    let phi_norm_sq = match lambda {
        Cutoff::Finite(_) => ScalarEstimate::from_quad(integrate_radial(radial, lambda, tol)?),
        Cutoff::Infinite => ScalarEstimate::divergent(),
    };
    let eps = params.ir_shift;
    let c_eps = if eps > 0.0 {
        ScalarEstimate::from_quad(integrate_radial(
            |k| radial(k) / (k * (k + eps)),
            lambda,
            tol,
        )?)
    } else {
        // at zero shift the integrand carries a non-integrable 1/k^2 at
        // the origin for every cutoff
        ScalarEstimate::divergent()
    };
    Ok(ConstantsReport { c_i, c_ii, c_a: c_ii, c_eps, phi_norm_sq })
}

/// One quadrature node of a momentum-space discretization.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModeNode {
    pub k: [f64; 3],
    pub k_norm: f64,
    /// cubature weight: sum_i w_i f(k_i) approximates int f(k) dk
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMeta {
    pub n_radial: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
}

/// A product cubature over the momentum ball |k| < lambda: a u^5-weighted
/// Gauss rule in the radius under k = lambda u^2, Gauss-Legendre in the
/// polar cosine, and a uniform trapezoid in the azimuth.
#[derive(Clone, Debug)]
pub struct ModeGrid {
    nodes: Vec<ModeNode>,
    meta: GridMeta,
    lambda: f64,
}

impl ModeGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ModeNode] {
        &self.nodes
    }

    pub fn meta(&self) -> GridMeta {
        self.meta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Build the mode grid for a finite cutoff. `n_angular` buys n_angular/2
/// polar nodes and n_angular azimuthal nodes, so the total mode count is
/// n_radial * n_angular^2 / 2.
pub fn build_mode_grid(n_radial: usize, n_angular: usize, params: &ModelParams) -> Result<ModeGrid> {
    let lambda = params.lambda.finite()?;
    if n_radial == 0 || n_angular == 0 {
        return Err(Error::InvalidParams(format!(
            "grid sizes must be positive, got n_radial={n_radial}, n_angular={n_angular}"
        )));
    }
    let n_polar = (n_angular / 2).max(1);
    let n_azimuth = n_angular;

    let (un, uw) = crate::quad::gauss_jacobi_u5(n_radial);
    let (pn, pw) = crate::quad::gauss_legendre(n_polar);
    let w_az = 2.0 * std::f64::consts::PI / n_azimuth as f64;

    let mut nodes = Vec::with_capacity(n_radial * n_polar * n_azimuth);
    for (u, wu) in un.iter().zip(&uw) {
        let k = lambda * u * u;
        if k <= 0.0 {
            return Err(Error::DegenerateGrid { index: nodes.len(), value: k, tol: 0.0 });
        }
        // int_0^lambda k^2 g dk = 2 lambda^3 int_0^1 u^5 g(lambda u^2) du
        let w_rad = 2.0 * lambda.powi(3) * wu;
        for (cos_t, wp) in pn.iter().zip(&pw) {
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            for l in 0..n_azimuth {
                let phi = 2.0 * std::f64::consts::PI * l as f64 / n_azimuth as f64;
                nodes.push(ModeNode {
                    k: [k * sin_t * phi.cos(), k * sin_t * phi.sin(), k * cos_t],
                    k_norm: k,
                    weight: w_rad * wp * w_az,
                });
            }
        }
    }
    Ok(ModeGrid {
        nodes,
        meta: GridMeta { n_radial, n_polar, n_azimuth },
        lambda,
    })
}

/// Weighted inner product sum_i w_i conj(f_i) g_i of two mode-space
/// vectors, the discrete stand-in for int conj(f)(k) g(k) dk.
pub fn weighted_overlap(f: &[Complex64], g: &[Complex64], grid: &ModeGrid) -> Result<Complex64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "overlap of lengths {} and {} on a grid of {} modes",
            f.len(),
            g.len(),
            grid.len()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for ((fi, gi), node) in f.iter().zip(g).zip(grid.nodes()) {
        acc += node.weight * fi.conj() * gi;
    }
    Ok(acc)
}
