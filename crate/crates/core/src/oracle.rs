//! Slow, independent reference computations used to cross-check the main
//! solvers: nested scalar bisection for the threshold equations, direct
//! Gaussian quadrature of the free-energy term, brute-force vertex
//! enumeration for small LPs, and exhaustive sparse-support search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::StandardFormLp;
use crate::replica::BlockParameters;
use crate::specfun::{integrate_gaussian, phi, q_function, r_func, QuadratureRule};

const BISECTION_STEPS: usize = 200;

/// Bisection for a sign change of `f` on `[lo, hi]`. Stops when the bracket
/// no longer shrinks in floating point.
fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::domain(format!(
            "no sign change on [{lo}, {hi}]: f = {f_lo}, {f_hi}"
        )));
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `chi_hat` with `Q(1/sqrt(chi_hat)) = target`, found by bisection on `t = 1/sqrt(chi_hat)`.
fn chi_hat_for_tail(target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::domain(format!(
            "tail target {target} outside (0, 1/2)"
        )));
    }
    let t = bisect(|t| Ok(q_function(t) - target), 0.0, 40.0)?;
    Ok(1.0 / (t * t))
}

/// Threshold and conjugate parameters from the nested-bisection oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionThreshold {
    pub mu: f64,
    pub rho: f64,
    pub chi_hat_1: f64,
    pub eta: f64,
    pub chi_hat_2: f64,
}

/// The inner solves at fixed `rho`: equation (i) for `chi_hat_1`, (ii) for
/// `eta`, (iv) for `chi_hat_2`. Returns those and the defect of (iii).
fn inner_solves(mu: f64, rho: f64) -> Result<([f64; 3], f64)> {
    let w1 = 2.0 * mu * rho / (1.0 + mu);
    let w2 = 2.0 * rho / (1.0 + mu);

    // (i) reads Q(1/sqrt(chi_hat_1)) = 1/4 - w1 (1/2 - Q(1/sqrt(chi_hat_1))).
    let chi_hat_1 = bisect(
        |c| {
            let q = q_function(1.0 / c.sqrt());
            Ok(q - (0.25 - w1 * (0.5 - q)))
        },
        1e-6,
        1e6,
    )?;
    let r1 = r_func(chi_hat_1)?;
    let eta = 2.0 * w1 * (1.0 + chi_hat_1 + 2.0 * r1) - 4.0 * r1 - chi_hat_1;

    // (iv) fixes the tail Q(1/sqrt(chi_hat_2)) as a function of rho alone.
    let tail = ((1.0 + mu) * 0.5 - 2.0 * rho) / (2.0 * (1.0 + mu) - 4.0 * rho);
    let chi_hat_2 = chi_hat_for_tail(tail)?;
    let r2 = r_func(chi_hat_2)?;
    let defect = chi_hat_2 - (2.0 * w2 * (1.0 + chi_hat_2 + 2.0 * r2) - 4.0 * r2 + eta);
    Ok(([chi_hat_1, eta, chi_hat_2], defect))
}

/// Solves the coupled threshold equations at `mu` by nested scalar bisection.
///
/// The outer bisection runs over `rho`, first scanning a grid on
/// `[0.05, min(0.249, (1 + mu)/4)]` for the smallest sign change of the
/// remaining equation's defect.
pub fn threshold_by_bisection(mu: f64) -> Result<BisectionThreshold> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::domain(format!("mu must lie in [0, 1], got {mu}")));
    }
    let lo = 0.05;
    let hi = 0.249f64.min((1.0 + mu) / 4.0 - 1e-6);
    let defect = |rho: f64| inner_solves(mu, rho).map(|(_, d)| d);

    let steps = 400;
    let mut prev_rho = lo;
    let mut prev = defect(lo)?;
    let mut bracket = None;
    for k in 1..=steps {
        let rho = lo + (hi - lo) * k as f64 / steps as f64;
        let d = defect(rho)?;
        if d.signum() != prev.signum() {
            bracket = Some((prev_rho, rho));
            break;
        }
        prev_rho = rho;
        prev = d;
    }
    let (a, b) = bracket.ok_or_else(|| {
        Error::domain(format!("no threshold bracket for mu={mu} on [{lo}, {hi}]"))
    })?;
    let rho = bisect(defect, a, b)?;
    let ([chi_hat_1, eta, chi_hat_2], _) = inner_solves(mu, rho)?;
    Ok(BisectionThreshold {
        mu,
        rho,
        chi_hat_1,
        eta,
        chi_hat_2,
    })
}

/// `min_x q_hat x²/2 - h x + |x|` by a dense grid search followed by ternary
/// refinement of the (convex) objective around the best grid cell.
pub fn phi_by_search(h: f64, q_hat: f64) -> Result<(f64, f64)> {
    if !(q_hat > 0.0) {
        return Err(Error::domain(format!(
            "q_hat must be positive, got {q_hat}"
        )));
    }
    let obj = |x: f64| 0.5 * q_hat * x * x - h * x + x.abs();
    let reach = (h.abs() + 1.0) / q_hat + 1.0;
    let cells = 20_000;
    let step = 2.0 * reach / cells as f64;
    let best = (0..=cells)
        .map(|i| -reach + i as f64 * step)
        .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
        .expect("nonempty grid");
    let (mut lo, mut hi) = (best - step, best + step);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if obj(a) <= obj(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let x = 0.5 * (lo + hi);
    // The kink at zero is where most minimizers sit; a grid need not hit it.
    let x = if obj(0.0) <= obj(x) { 0.0 } else { x };
    Ok((obj(x), x))
}

/// Rule for `∫ phi(z s; q_hat) Dz`: the integrand has kinks at `z = ±1/s`,
/// so those are made panel edges.
fn kinked_rule(scales: &[f64]) -> QuadratureRule {
    let mut breaks = vec![-12.0, 12.0];
    for &s in scales {
        if s > 0.0 && 1.0 / s < 12.0 {
            breaks.push(1.0 / s);
            breaks.push(-1.0 / s);
        }
    }
    QuadratureRule::piecewise(&breaks)
}

/// `∫ phi(z sqrt(h); q_hat) Dz` by direct quadrature.
pub fn phi_average(h: f64, q_hat: f64) -> Result<f64> {
    if h < 0.0 {
        return Err(Error::domain(format!("h must be nonnegative, got {h}")));
    }
    // phi only fails for q_hat <= 0, so check that once up front.
    phi(0.0, q_hat)?;
    let s = h.sqrt();
    let rule = kinked_rule(&[s]);
    integrate_gaussian(|z| phi(z * s, q_hat).map_or(f64::NAN, |(v, _)| v), &rule)
}

/// Per-block free-energy term with its Gaussian integrals done by quadrature
/// rather than through `r`.
pub fn t_by_quadrature(theta: &BlockParameters, rho_i: f64) -> Result<f64> {
    theta.check_domain()?;
    let noise = phi_average(theta.chi_hat, theta.q_hat)?;
    let signal = phi_average(theta.m_hat * theta.m_hat + theta.chi_hat, theta.q_hat)?;
    Ok(theta.bilinear_terms(rho_i) + (1.0 - rho_i) * noise + rho_i * signal)
}

/// Both sides of the Gaussian-average identity for the mixture
/// `(1 - rho) phi(z sqrt(chi_hat)) + rho phi(z sqrt(m_hat² + chi_hat))`:
/// `(quadrature, closed form via r)`.
pub fn mixture_identity(chi_hat: f64, m_hat: f64, q_hat: f64, rho: f64) -> Result<(f64, f64)> {
    let h_signal = m_hat * m_hat + chi_hat;
    let quad = (1.0 - rho) * phi_average(chi_hat, q_hat)? + rho * phi_average(h_signal, q_hat)?;
    let closed = ((1.0 - rho) * r_func(chi_hat)? + rho * r_func(h_signal)?) / q_hat;
    Ok((quad, closed))
}

/// Lexicographic `k`-subsets of `0..n`.
struct Combinations {
    idx: Vec<usize>,
    n: usize,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            idx: (0..k).collect(),
            n,
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Best basic feasible solution found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedOptimum {
    pub objective: f64,
    pub x: DVector<f64>,
    /// Number of bases that were nonsingular and feasible.
    pub feasible_bases: usize,
}

/// Minimizes `cᵀx` over `Ax = b, x ≥ 0` by trying every choice of `rows(A)`
/// basic columns. Requires full row rank; returns `None` when no basis is
/// feasible. Exponential in size, so only meant for tiny problems.
pub fn enumerate_vertices(lp: &StandardFormLp) -> Option<EnumeratedOptimum> {
    let (m, n) = (lp.rows(), lp.cols());
    let scale = lp.a().amax().max(1.0);
    let mut best: Option<EnumeratedOptimum> = None;
    let mut feasible_bases = 0;
    for basis in Combinations::new(n, m) {
        let b_mat = DMatrix::from_fn(m, m, |i, j| lp.a()[(i, basis[j])]);
        let lu = b_mat.lu();
        let Some(x_b) = lu.solve(lp.b()) else {
            continue;
        };
        // Near-singular bases produce huge, meaningless coordinates.
        let det = lu.determinant().abs();
        if det < 1e-10 * scale.powi(m as i32) || x_b.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if x_b.iter().any(|&v| v < -1e-10) {
            continue;
        }
        feasible_bases += 1;
        let mut x = DVector::zeros(n);
        for (j, &col) in basis.iter().enumerate() {
            x[col] = x_b[j].max(0.0);
        }
        let objective = lp.c().dot(&x);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(EnumeratedOptimum {
                objective,
                x,
                feasible_bases: 0,
            });
        }
    }
    best.map(|b| EnumeratedOptimum {
        feasible_bases,
        ..b
    })
}

/// Every support of size `1..=max_support` whose least-squares fit to `y`
/// leaves a residual at most `tol` (max norm), with the fitted coefficients.
/// Supports with a coefficient below `tol` in magnitude are skipped: that
/// solution already appears on a smaller support.
/// The empty support is reported when `y` itself is within `tol` of zero.
pub fn sparse_solutions(
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    max_support: usize,
    tol: f64,
) -> Vec<(Vec<usize>, DVector<f64>)> {
    let mut found = Vec::new();
    if y.amax() <= tol {
        found.push((Vec::new(), DVector::zeros(0)));
    }
    let n = d.ncols();
    for k in 1..=max_support.min(d.nrows()) {
        for support in Combinations::new(n, k) {
            let sub = d.select_columns(support.iter());
            let Ok(coef) = sub.clone().svd(true, true).solve(y, 1e-12) else {
                continue;
            };
            if coef.iter().all(|c| c.abs() > tol) && (&sub * &coef - y).amax() <= tol {
                found.push((support, coef));
            }
        }
    }
    found
}
