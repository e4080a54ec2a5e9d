//! Scalar special functions behind the threshold equations: the Gaussian
//! tail `Q`, its inverse, the rate function `r(h)`, the scalar soft-threshold
//! minimization `phi(h; q_hat)`, and quadrature against the standard Gaussian
//! measure `Dz`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Default node count for [`QuadratureRule::gauss_hermite`].
pub const DEFAULT_HERMITE_NODES: usize = 96;

/// Standard normal density.
#[inline]
pub fn gaussian_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Upper tail of the standard normal, `Q(x) = P(Z > x)`.
///
/// `erfc` keeps full relative precision in the right tail, so no
/// cancellation occurs for large positive `x`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Functional inverse of [`q_function`] on `(0, 1)`.
///
/// Starts from the Abramowitz–Stegun rational approximation and polishes with
/// Newton steps kept inside a shrinking bracket; a step that would leave the
/// bracket is replaced by bisection.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "q_inverse needs p in (0,1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }

    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut x = initial_q_inverse(p);
    for _ in 0..100 {
        let fx = q_function(x) - p;
        if fx == 0.0 {
            return Ok(x);
        }
        // Q is decreasing: a positive defect means the root lies to the right.
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = gaussian_pdf(x);
        let mut next = x + fx / pdf;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-13 * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    Ok(x)
}

fn initial_q_inverse(p: f64) -> f64 {
    let tail = if p < 0.5 { p } else { 1.0 - p };
    let t = (-2.0 * tail.ln()).sqrt();
    let x = t
        - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
            / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    if p < 0.5 {
        x
    } else {
        -x
    }
}

/// `r(h) = sqrt(h / 2pi) exp(-1/(2h)) - (1 + h) Q(1/sqrt(h))`.
///
/// Equals `∫ phi(z sqrt(h); 1) Dz`, hence is never positive. Below `h = 1e-8`
/// both terms are smaller than `exp(-5e7)` and the limit value 0 is returned.
pub fn r_func(h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::domain(format!("r_func needs h >= 0, got {h}")));
    }
    if h < 1e-8 {
        return Ok(0.0);
    }
    let s = h.sqrt();
    Ok((h / (2.0 * PI)).sqrt() * (-0.5 / h).exp() - (1.0 + h) * q_function(1.0 / s))
}

/// Value and minimizer of `q_hat x²/2 - h x + |x|` over the reals.
///
/// The minimizer is the soft threshold `sign(h) max(|h| - 1, 0) / q_hat`.
pub fn phi(h: f64, q_hat: f64) -> Result<(f64, f64)> {
    if !(q_hat > 0.0) {
        return Err(Error::domain(format!(
            "phi needs q_hat > 0 (objective unbounded below), got {q_hat}"
        )));
    }
    let excess = h.abs() - 1.0;
    if excess <= 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((
        -excess * excess / (2.0 * q_hat),
        h.signum() * excess / q_hat,
    ))
}

/// Nodes and weights for `∫ f(z) Dz`, with weights normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds a rule from explicit nodes and weights.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::domain("nodes and weights differ in length"));
        }
        Ok(Self { nodes, weights })
    }

    /// Gauss–Hermite rule for the probabilists' weight `exp(-z²/2)`.
    ///
    /// Exact for polynomials of degree below `2n`.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("Gauss-Hermite rule needs at least one node"));
        }
        let (x, w) = hermite_physicists(n);
        let nodes = x.iter().map(|&xi| SQRT_2 * xi).collect();
        let weights = w.iter().map(|&wi| wi / PI.sqrt()).collect();
        Ok(Self { nodes, weights })
    }

    /// Composite Gauss–Legendre rule on `[-12, 12]` whose panel edges include
    /// `breakpoints`.
    ///
    /// Integrands that are smooth between the breakpoints (such as
    /// `z ↦ phi(a z; q)`, which has kinks at `|z| = 1/a`) are integrated to
    /// near machine precision. The truncated tail mass is `2 Q(12) ≈ 4e-33`.
    pub fn piecewise(breakpoints: &[f64]) -> Self {
        const HALF_WIDTH: f64 = 12.0;
        const MAX_PANEL: f64 = 0.5;
        const PANEL_NODES: usize = 16;

        let mut edges: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|b| b.is_finite() && b.abs() < HALF_WIDTH)
            .chain([-HALF_WIDTH, HALF_WIDTH])
            .collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let (gx, gw) = gauss_legendre(PANEL_NODES);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in edges.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let panels = ((b - a) / MAX_PANEL).ceil().max(1.0) as usize;
            let h = (b - a) / panels as f64;
            for k in 0..panels {
                let mid = a + (k as f64 + 0.5) * h;
                for (xi, wi) in gx.iter().zip(&gw) {
                    let z = mid + 0.5 * h * xi;
                    nodes.push(z);
                    weights.push(0.5 * h * wi * gaussian_pdf(z));
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_HERMITE_NODES).expect("nonzero node count")
    }
}

/// `Σ wᵢ f(zᵢ)`, the rule's approximation of `∫ f(z) Dz`.
pub fn integrate_gaussian<F>(f: F, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if rule.is_empty() {
        return Err(Error::domain("empty quadrature rule"));
    }
    Ok(rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&z, &w)| w * f(z))
        .sum())
}

/// Gauss–Hermite nodes/weights for `exp(-x²)` by Newton iteration on the
/// orthonormal Hermite recurrence.
fn hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre nodes/weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense grid search over x in [-10, 10]; independent of the closed form.
    fn grid_min(h: f64, q_hat: f64) -> (f64, f64) {
        let steps = 2_000_000;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=steps {
            let x = -10.0 + 20.0 * k as f64 / steps as f64;
            let v = 0.5 * q_hat * x * x - h * x + x.abs();
            if v < best.0 {
                best = (v, x);
            }
        }
        best
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        // Frozen from 40-digit arithmetic.
        let cases = [
            (1.0, 0.15865525393145705142),
            (3.0, 0.0013498980316300945267),
            (6.0, 9.8658764503769814e-10),
            (8.0, 6.2209605742717841e-16),
            (-2.0, 0.97724986805182079282),
        ];
        for (x, want) in cases {
            let got = q_function(x);
            assert!(
                ((got - want) / want).abs() <= 1e-14,
                "Q({x}) = {got}, want {want}"
            );
        }
        assert!((q_function(1.6448536269514722) - 0.05).abs() <= 1e-10);
    }

    #[test]
    fn q_function_tail_symmetry() {
        for k in -80..=80 {
            let x = k as f64 * 0.1;
            assert!((q_function(x) + q_function(-x) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn q_inverse_values() {
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
        assert!((q_inverse(q_function(1.0)).unwrap() - 1.0).abs() <= 1e-12);

        // Bisection on Q as the oracle.
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_function(mid) > 0.25 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - 0.6744897501960817).abs() <= 1e-12);
        assert!((q_inverse(0.25).unwrap() - 0.6744897501960817).abs() <= 1e-9);
    }

    #[test]
    fn q_inverse_rejects_outside_unit_interval() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inverse(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn q_inverse_extreme_tails() {
        for p in [1e-300, 1e-100, 1e-20, 1e-10, 1.0 - 1e-12] {
            let x = q_inverse(p).unwrap();
            let back = q_function(x);
            assert!(((back - p) / p).abs() < 1e-10, "p={p} x={x} back={back}");
        }
    }

    #[test]
    fn r_func_limits_and_sign() {
        assert_eq!(r_func(0.0).unwrap(), 0.0);
        assert_eq!(r_func(1e-9).unwrap(), 0.0);
        assert!(matches!(r_func(-1.0), Err(Error::Domain(_))));
        for k in 1..500 {
            let h = k as f64 * 0.2;
            assert!(r_func(h).unwrap() <= 0.0);
        }
        // 40-digit reference values.
        assert!((r_func(1.0).unwrap() + 0.075339783343770753032).abs() < 1e-15);
        assert!((r_func(4.0).unwrap() + 0.83855704010133552626).abs() < 1e-14);
    }

    #[test]
    fn r_func_matches_quadrature() {
        for h in [1.0_f64, 4.0] {
            let s = h.sqrt();
            let rule = QuadratureRule::piecewise(&[-1.0 / s, 1.0 / s]);
            let quad = integrate_gaussian(|z| phi(z * s, 1.0).unwrap().0, &rule).unwrap();
            assert!((quad - r_func(h).unwrap()).abs() <= 1e-8, "h={h}");
        }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0, 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(phi(0.5, 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(phi(2.0, 1.0).unwrap(), (-0.5, 1.0));
        assert_eq!(phi(-2.0, 1.0).unwrap(), (-0.5, -1.0));
        assert!(matches!(phi(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(phi(1.0, -2.0), Err(Error::Domain(_))));

        for (h, q) in [(0.5, 1.0), (2.0, 1.0), (-3.5, 0.7), (1.2, 4.0)] {
            let (gv, gx) = grid_min(h, q);
            let (v, x) = phi(h, q).unwrap();
            assert!((v - gv).abs() <= 1e-9, "h={h} q={q}: {v} vs {gv}");
            assert!((x - gx).abs() <= 1e-4);
        }
    }

    #[test]
    fn hermite_rule_moments() {
        let rule = QuadratureRule::default();
        assert_eq!(rule.len(), 96);
        let total: f64 = rule.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(rule.weights().iter().all(|&w| w > 0.0));
        assert!((integrate_gaussian(|_| 1.0, &rule).unwrap() - 1.0).abs() <= 1e-12);
        assert!((integrate_gaussian(|z| z * z, &rule).unwrap() - 1.0).abs() <= 1e-10);
        assert!((integrate_gaussian(|z| z.powi(4), &rule).unwrap() - 3.0).abs() <= 1e-8);
        // 15!! = 2027025
        let z16 = integrate_gaussian(|z| z.powi(16), &rule).unwrap();
        assert!((z16 / 2_027_025.0 - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn small_hermite_rules_are_exact() {
        for n in 1..12 {
            let rule = QuadratureRule::gauss_hermite(n).unwrap();
            let mut double_fact = 1.0;
            for k in 0..n {
                let moment = integrate_gaussian(|z| z.powi(2 * k as i32), &rule).unwrap();
                assert!((moment / double_fact - 1.0).abs() < 1e-11, "n={n} k={k}");
                double_fact *= (2 * k + 1) as f64;
            }
        }
    }

    #[test]
    fn piecewise_rule_moments() {
        let rule = QuadratureRule::piecewise(&[-0.3, 1.7]);
        assert!((integrate_gaussian(|_| 1.0, &rule).unwrap() - 1.0).abs() <= 1e-12);
        assert!((integrate_gaussian(|z| z * z, &rule).unwrap() - 1.0).abs() <= 1e-12);
        assert!((integrate_gaussian(|z| z.powi(4), &rule).unwrap() - 3.0).abs() <= 1e-11);
    }

    #[test]
    fn empty_rule_is_rejected() {
        let rule = QuadratureRule::new(vec![], vec![]).unwrap();
        assert!(matches!(
            integrate_gaussian(|_| 1.0, &rule),
            Err(Error::Domain(_))
        ));
        assert!(QuadratureRule::gauss_hermite(0).is_err());
    }
}
