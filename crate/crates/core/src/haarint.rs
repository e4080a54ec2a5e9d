//! Large-`M` limits of Haar integrals over a pair of independent orthogonal
//! matrices.
//!
//! For fixed `x1, x2` with `‖x_i‖² = M r_i`, the vectors `O_i x_i` are uniform
//! on spheres of radius `sqrt(M r_i)`, and
//!
//! ```text
//! F(r1, r2; c) = lim M⁻¹ log E exp(c (O1 x1)ᵀ(O2 x2))
//!              = sqrt(1 + 4c²r1r2)/2 - log((1 + sqrt(1 + 4c²r1r2))/2)/2 - 1/2.
//! ```
//!
//! [`i_m_quadrature`] evaluates the same expectation at finite `M` through the
//! one-dimensional law of the angle between two uniform directions, and is
//! used to check the closed form.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::gauss_legendre;

/// `F` as a function of `x = c² r1 r2 ≥ 0`.
fn f_of_product(x: f64) -> f64 {
    // With s = sqrt(1 + 4x) and d = (s - 1)/2, F = d - log(1 + d)/2.
    let s = (1.0 + 4.0 * x).sqrt();
    let d = 2.0 * x / (1.0 + s);
    d - 0.5 * d.ln_1p()
}

fn check_radii(r1: f64, r2: f64) -> Result<()> {
    if !(r1 > 0.0 && r2 > 0.0) {
        return Err(Error::domain(format!(
            "radii must be positive, got r1={r1}, r2={r2}"
        )));
    }
    Ok(())
}

/// Closed-form large-`M` limit `F(r1, r2; c)`. Even in `c`, symmetric in the
/// radii, nonnegative, and zero only at `c = 0`.
pub fn f_haar(r1: f64, r2: f64, c: f64) -> Result<f64> {
    check_radii(r1, r2)?;
    if !c.is_finite() {
        return Err(Error::domain("c must be finite"));
    }
    Ok(f_of_product(c * c * r1 * r2))
}

/// `sqrt(c²r1r2) - log(c²r1r2)/4`, the form of `F` for `c²r1r2 ≫ 1`.
///
/// It drops the constant `-1/2` and lower-order terms, so only the relative
/// gap to [`f_haar`] vanishes.
pub fn f_haar_asymptotic(r1: f64, r2: f64, c: f64) -> Result<f64> {
    let x = c * c * r1 * r2;
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("c² r1 r2 must be positive, got {x}")));
    }
    Ok(x.sqrt() - 0.25 * x.ln())
}

/// Relative accuracy target and panel budget of the adaptive rule.
const QUAD_REL_TOL: f64 = 1e-12;
const QUAD_MAX_PANELS: usize = 2000;

/// Finite-`M` value of `M⁻¹ log E exp(c u1ᵀu2)` for `u_i` uniform on spheres
/// of radius `sqrt(M r_i)`.
///
/// With `t = sin θ` the cosine of the angle between `u1` and `u2`, whose
/// density is proportional to `(1 - t²)^{(M-3)/2}`, the expectation is
///
/// ```text
/// ∫ exp(k M sin θ) cos^{M-2} θ dθ / ∫ cos^{M-2} θ dθ,  θ ∈ [-π/2, π/2],  k = c sqrt(r1 r2)
/// ```
///
/// Both integrals are shifted by the maximum of their log-integrand before
/// integration, so large `k M` does not overflow.
pub fn i_m_quadrature(m: usize, r1: f64, r2: f64, c: f64) -> Result<f64> {
    if m < 3 {
        return Err(Error::domain(format!(
            "i_m_quadrature needs M >= 3, got {m}"
        )));
    }
    check_radii(r1, r2)?;
    let mf = m as f64;
    let k = c * (r1 * r2).sqrt();
    let log_num = log_angle_integral(k * mf, mf - 2.0)?;
    let log_den = log_angle_integral(0.0, mf - 2.0)?;
    Ok((log_num - log_den) / mf)
}

/// `log ∫ exp(a sin θ + p log cos θ) dθ` over `(-π/2, π/2)`, with `p ≥ 1`.
fn log_angle_integral(a: f64, p: f64) -> Result<f64> {
    let log_f = |theta: f64| {
        let cos = theta.cos();
        if cos <= 0.0 {
            f64::NEG_INFINITY
        } else {
            a * theta.sin() + p * cos.ln()
        }
    };
    // The exponent is concave; its maximizer solves a cos²θ = p sin θ.
    let sin_star = if a == 0.0 {
        0.0
    } else {
        (-p + (p * p + 4.0 * a * a).sqrt()) / (2.0 * a)
    };
    let theta_star = sin_star.clamp(-1.0, 1.0).asin();
    let shift = log_f(theta_star);
    let f = |theta: f64| (log_f(theta) - shift).exp();

    // Splitting at the peak lets the adaptive rule resolve both flanks.
    let total = adaptive_integral(&f, &[-FRAC_PI_2, theta_star, FRAC_PI_2])?;
    Ok(shift + total.ln())
}

struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Legendre: the panel with the largest
/// `|G20 - G10|` is bisected until the summed error meets the target.
fn adaptive_integral<F: Fn(f64) -> f64>(f: &F, breaks: &[f64]) -> Result<f64> {
    let (x10, w10) = gauss_legendre(10);
    let (x20, w20) = gauss_legendre(20);
    let panel = |lo: f64, hi: f64| {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let rule = |x: &[f64], w: &[f64]| {
            half * x
                .iter()
                .zip(w)
                .map(|(&t, &wt)| wt * f(mid + half * t))
                .sum::<f64>()
        };
        let value = rule(&x20, &w20);
        let error = (value - rule(&x10, &w10)).abs();
        Panel {
            lo,
            hi,
            value,
            error,
        }
    };

    let mut heap = std::collections::BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(panel(w[0], w[1]));
        }
    }
    loop {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        // Errors below a few ulps of the total are roundoff, not truncation.
        if error <= QUAD_REL_TOL * total.abs() || error <= 64.0 * f64::EPSILON * total.abs() {
            return Ok(total);
        }
        if heap.len() >= QUAD_MAX_PANELS {
            return Err(Error::Convergence {
                iterations: heap.len(),
                residual: error / total.abs().max(f64::MIN_POSITIVE),
                context: "adaptive quadrature of the sphere-angle integral".into(),
            });
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.lo + worst.hi);
        heap.push(panel(worst.lo, mid));
        heap.push(panel(mid, worst.hi));
    }
}

/// Replica-symmetric overlaps of one block: `s11` is the self-overlap of a
/// replica's difference vector, `s12` the overlap between two replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub s11: f64,
    pub s12: f64,
}

impl OverlapPair {
    pub fn new(s11: f64, s12: f64) -> Self {
        Self { s11, s12 }
    }

    /// Radius of the replica-symmetric direction, `s11 - s12 + u s12`.
    pub fn symmetric_radius(&self, u: usize) -> f64 {
        self.s11 - self.s12 + u as f64 * self.s12
    }

    /// Radius of each of the `u - 1` orthogonal directions, `s11 - s12`.
    pub fn orthogonal_radius(&self) -> f64 {
        self.s11 - self.s12
    }

    pub fn check_admissible(&self, u: usize) -> Result<()> {
        let ok = self.s11.is_finite()
            && self.s12.is_finite()
            && self.s12 >= 0.0
            && self.s11 >= self.s12
            && self.symmetric_radius(u) >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "overlaps (s11={}, s12={}) are not replica-symmetric admissible for u={u}",
                self.s11, self.s12
            )))
        }
    }
}

/// `F(symmetric radii; c) + (u - 1) F(orthogonal radii; c)`.
///
/// Zero radii are allowed here; `F` then vanishes.
pub fn lemma2_value(block1: &OverlapPair, block2: &OverlapPair, c: f64, u: usize) -> Result<f64> {
    if u == 0 {
        return Err(Error::domain("replica count u must be at least 1"));
    }
    block1.check_admissible(u)?;
    block2.check_admissible(u)?;
    if !c.is_finite() {
        return Err(Error::domain("c must be finite"));
    }
    let c2 = c * c;
    let head = f_of_product(c2 * block1.symmetric_radius(u) * block2.symmetric_radius(u));
    let tail = f_of_product(c2 * block1.orthogonal_radius() * block2.orthogonal_radius());
    Ok(head + (u as f64 - 1.0) * tail)
}
