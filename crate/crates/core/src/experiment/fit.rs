//! Per-size critical densities (logistic 50% crossing) and the weighted cubic
//! extrapolation in `x = 1/N`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::SuccessCurve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingMethod {
    /// Maximum-likelihood logistic fit.
    Logistic,
    /// The data are separated (a clean step), so the MLE does not exist and
    /// the crossing is interpolated between neighbouring points.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalDensity {
    pub rho_c: f64,
    pub stderr: f64,
    /// `d logit(p) / d rho` at the crossing; more negative means a sharper
    /// transition. Infinite for a step.
    pub slope: f64,
    pub method: CrossingMethod,
}

fn is_step(points: &[(f64, f64, f64)]) -> bool {
    // Rates read 1, ..., 1, [at most one mixed point], 0, ..., 0.
    let mut mixed = 0;
    let mut seen_partial = false;
    for &(_, s, n) in points {
        if s == n {
            if seen_partial {
                return false;
            }
        } else {
            seen_partial = true;
            if s > 0.0 {
                mixed += 1;
            }
        }
    }
    mixed <= 1
        && points
            .windows(2)
            .all(|w| w[0].1 / w[0].2 >= w[1].1 / w[1].2)
}

/// The 50% crossing of a success curve.
///
/// A two-parameter logistic `logit p = a + b rho` is fitted to the binomial
/// counts by Newton's method on the likelihood; the crossing is `-a/b` and its
/// standard error comes from the inverse Fisher information by the delta
/// method. Curves that must be wider than the data (no rate above or below
/// one half) or that increase with `rho` are rejected.
pub fn critical_density_estimate(curve: &SuccessCurve) -> Result<CriticalDensity> {
    let mut pts: Vec<(f64, f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.trials > 0)
        .map(|p| (p.rho, p.successes as f64, p.trials as f64))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let above = pts.iter().any(|&(_, s, n)| s / n > 0.5);
    let below = pts.iter().any(|&(_, s, n)| s / n < 0.5);
    if !(above && below) {
        return Err(Error::Estimation(format!(
            "success rates at N={} do not bracket 1/2; widen the rho grid",
            curve.n
        )));
    }

    if is_step(&pts) {
        return step_crossing(&pts, curve.n);
    }

    // Centre and scale rho for conditioning: u = (rho - centre) / span.
    let total: f64 = pts.iter().map(|p| p.2).sum();
    let centre = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / total;
    let span = (pts.last().unwrap().0 - pts[0].0).max(f64::EPSILON);

    let mut theta = Vector2::new(0.0, -1.0);
    let mut info = Matrix2::zeros();
    let mut converged = false;
    for _ in 0..200 {
        let mut grad = Vector2::zeros();
        info = Matrix2::zeros();
        for &(rho, s, n) in &pts {
            let u = (rho - centre) / span;
            let p = 1.0 / (1.0 + (-(theta[0] + theta[1] * u)).exp());
            let w = n * p * (1.0 - p);
            grad += Vector2::new(1.0, u) * (s - n * p);
            info += Matrix2::new(w, w * u, w * u, w * u * u);
        }
        let Some(step) = info.try_inverse().map(|inv| inv * grad) else {
            break;
        };
        theta += step;
        if !theta.iter().all(|v| v.is_finite()) || theta[1].abs() > 1e8 {
            break;
        }
        if step.norm() <= 1e-12 * (1.0 + theta.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Estimation(format!(
            "logistic fit at N={} did not converge",
            curve.n
        )));
    }
    let (a, b) = (theta[0], theta[1]);
    if b >= 0.0 {
        return Err(Error::Estimation(format!(
            "success rate at N={} increases with rho",
            curve.n
        )));
    }
    let cov = info
        .try_inverse()
        .ok_or_else(|| Error::Estimation("singular Fisher information".into()))?;
    let grad = Vector2::new(-1.0 / b, a / (b * b));
    let var_u = (grad.transpose() * cov * grad)[0];
    Ok(CriticalDensity {
        rho_c: centre - span * a / b,
        stderr: span * var_u.max(0.0).sqrt(),
        slope: b / span,
        method: CrossingMethod::Logistic,
    })
}

fn step_crossing(pts: &[(f64, f64, f64)], n: usize) -> Result<CriticalDensity> {
    for w in pts.windows(2) {
        let (r0, p0) = (w[0].0, w[0].1 / w[0].2);
        let (r1, p1) = (w[1].0, w[1].1 / w[1].2);
        if p0 >= 0.5 && p1 < 0.5 {
            let rho_c = if p0 == 0.5 {
                r0
            } else {
                r0 + (p0 - 0.5) / (p0 - p1) * (r1 - r0)
            };
            return Ok(CriticalDensity {
                rho_c,
                stderr: 0.5 * (r1 - r0),
                slope: f64::NEG_INFINITY,
                method: CrossingMethod::Step,
            });
        }
    }
    Err(Error::Estimation(format!("no downward crossing at N={n}")))
}

/// Critical density at one size, the input to the extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub n: usize,
    pub rho_c: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationFit {
    pub n_values: Vec<usize>,
    /// `x = 1/N` for each size.
    pub abscissa: Vec<f64>,
    pub rho_c: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `a0 + a1 x + a2 x² + a3 x³`.
    pub coeffs: [f64; 4],
    /// `a0`, the `N → ∞` estimate.
    pub intercept: f64,
    /// Standard error of `a0`, inflated by the Birge ratio when the scatter
    /// exceeds the per-point errors.
    pub intercept_stderr: f64,
    /// `sqrt(χ²)` of the weighted residuals.
    pub residual_norm: f64,
    /// `χ² / (points - 4)`, zero when the fit interpolates.
    pub reduced_chi2: f64,
}

impl ExtrapolationFit {
    pub fn predict(&self, x: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coeffs;
        a0 + x * (a1 + x * (a2 + x * a3))
    }
}

/// Weighted least-squares cubic in `x = 1/N` through the per-size critical
/// densities, with weights `1/stderr²`.
pub fn finite_size_extrapolate(points: &[SizePoint]) -> Result<ExtrapolationFit> {
    let mut sizes: Vec<usize> = points.iter().map(|p| p.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 5 {
        return Err(Error::Fit(format!(
            "cubic extrapolation needs at least 5 distinct N, got {}",
            sizes.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| p.n == 0 || !(p.stderr > 0.0 && p.stderr.is_finite()) || !p.rho_c.is_finite())
    {
        return Err(Error::Fit(format!("invalid point {p:?}")));
    }

    let k = points.len();
    let x: Vec<f64> = points.iter().map(|p| 1.0 / p.n as f64).collect();
    let x_scale = x.iter().cloned().fold(0.0, f64::max);
    let design = DMatrix::from_fn(k, 4, |i, j| {
        (x[i] / x_scale).powi(j as i32) / points[i].stderr
    });
    let rhs = DVector::from_fn(k, |i, _| points[i].rho_c / points[i].stderr);

    let svd = design.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * s_max {
        return Err(Error::Fit("rank-deficient design matrix".into()));
    }
    let scaled = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Fit(format!("least-squares solve failed: {e}")))?;
    let v_t = svd.v_t.as_ref().expect("SVD computed with V");
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let cov = v_t.transpose() * inv_s2 * v_t;

    let coeffs: [f64; 4] = std::array::from_fn(|j| scaled[j] / x_scale.powi(j as i32));
    let resid = &design * &scaled - &rhs;
    let chi2 = resid.norm_squared();
    let dof = k.saturating_sub(4);
    let reduced_chi2 = if dof > 0 { chi2 / dof as f64 } else { 0.0 };
    let birge = reduced_chi2.sqrt().max(1.0);

    let fit = ExtrapolationFit {
        n_values: points.iter().map(|p| p.n).collect(),
        abscissa: x,
        rho_c: points.iter().map(|p| p.rho_c).collect(),
        stderr: points.iter().map(|p| p.stderr).collect(),
        coeffs,
        intercept: coeffs[0],
        intercept_stderr: cov[(0, 0)].max(0.0).sqrt() * birge,
        residual_norm: chi2.sqrt(),
        reduced_chi2,
    };
    if !fit.residual_norm.is_finite() || !(0.0..=0.5).contains(&fit.intercept) {
        return Err(Error::Fit(format!(
            "extrapolated intercept {} outside [0, 1/2]",
            fit.intercept
        )));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::SuccessPoint;
    use crate::randmat::DictionaryKind;

    fn curve(points: Vec<SuccessPoint>) -> SuccessCurve {
        SuccessCurve {
            kind: DictionaryKind::BiOrthogonal,
            mu: 0.0,
            n: 20,
            points,
        }
    }

    fn pt(rho: f64, successes: u64, trials: u64) -> SuccessPoint {
        SuccessPoint {
            rho,
            successes,
            trials,
        }
    }

    #[test]
    fn exact_step() {
        let c = curve(vec![
            pt(0.1, 10, 10),
            pt(0.15, 10, 10),
            pt(0.25, 0, 10),
            pt(0.3, 0, 10),
        ]);
        let est = critical_density_estimate(&c).unwrap();
        assert_eq!(est.method, CrossingMethod::Step);
        assert!((est.rho_c - 0.2).abs() < 1e-15);
        let c = curve(vec![pt(0.1, 10, 10), pt(0.2, 5, 10), pt(0.3, 0, 10)]);
        assert_eq!(critical_density_estimate(&c).unwrap().rho_c, 0.2);
    }

    #[test]
    fn noiseless_logistic() {
        let (mid, slope) = (0.213, -60.0);
        let trials = 1_000_000u64;
        let pts = (0..15)
            .map(|i| {
                let rho = 0.14 + 0.01 * i as f64;
                let p = 1.0 / (1.0 + (-slope * (rho - mid)).exp());
                pt(rho, (p * trials as f64).round() as u64, trials)
            })
            .collect();
        let est = critical_density_estimate(&curve(pts)).unwrap();
        assert_eq!(est.method, CrossingMethod::Logistic);
        assert!((est.rho_c - mid).abs() < 1e-6, "{est:?}");
        assert!((est.slope - slope).abs() < 1e-2);
    }

    #[test]
    fn reversed_or_unbracketed_curves_fail() {
        let rising = curve(vec![
            pt(0.1, 1, 10),
            pt(0.2, 4, 10),
            pt(0.3, 7, 10),
            pt(0.4, 9, 10),
        ]);
        assert!(matches!(
            critical_density_estimate(&rising),
            Err(Error::Estimation(_))
        ));
        let high = curve(vec![pt(0.1, 10, 10), pt(0.2, 8, 10)]);
        let err = critical_density_estimate(&high).unwrap_err().to_string();
        assert!(err.contains("widen"), "{err}");
    }

    fn sizes() -> Vec<usize> {
        (16..=50).step_by(2).collect()
    }

    #[test]
    fn exact_cubic_is_recovered() {
        let a = [0.2266, -0.8, 5.0, -30.0];
        let pts: Vec<SizePoint> = sizes()
            .into_iter()
            .map(|n| {
                let x = 1.0 / n as f64;
                SizePoint {
                    n,
                    rho_c: a[0] + a[1] * x + a[2] * x * x + a[3] * x * x * x,
                    stderr: 0.01,
                }
            })
            .collect();
        let fit = finite_size_extrapolate(&pts).unwrap();
        for j in 0..4 {
            assert!(
                (fit.coeffs[j] - a[j]).abs() < 1e-10 * a[j].abs().max(1.0),
                "{j}: {:?}",
                fit.coeffs
            );
        }
        assert!(fit.residual_norm < 1e-9);
        assert!(
            (fit.predict(0.03) - (a[0] + a[1] * 0.03 + a[2] * 9e-4 + a[3] * 2.7e-5)).abs() < 1e-12
        );
    }

    #[test]
    fn constant_points() {
        let pts: Vec<SizePoint> = sizes()
            .into_iter()
            .map(|n| SizePoint {
                n,
                rho_c: 0.2,
                stderr: 0.003,
            })
            .collect();
        let fit = finite_size_extrapolate(&pts).unwrap();
        assert!((fit.intercept - 0.2).abs() < 1e-10);
        for c in &fit.coeffs[1..] {
            assert!(c.abs() < 1e-10, "{:?}", fit.coeffs);
        }
        assert!(fit.intercept_stderr > 0.0);
    }

    #[test]
    fn too_few_sizes() {
        let pts: Vec<SizePoint> = [16, 18, 20, 22]
            .iter()
            .map(|&n| SizePoint {
                n,
                rho_c: 0.2,
                stderr: 0.01,
            })
            .collect();
        assert!(matches!(finite_size_extrapolate(&pts), Err(Error::Fit(_))));
        let mut dup = pts.clone();
        dup.extend(pts);
        assert!(matches!(finite_size_extrapolate(&dup), Err(Error::Fit(_))));
    }
}
