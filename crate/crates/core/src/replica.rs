//! Replica-symmetric threshold equations for l1 recovery with a
//! bi-orthogonal dictionary `D = [O1 O2]`.
//!
//! The critical overall density `rho(mu)` is the joint fixed point of four
//! coupled equations in `(chi_hat_1, eta, chi_hat_2, rho)`, where `eta` is the
//! multiplier enforcing `chi_1 = chi_2`. At `mu = 1` the system collapses to
//! two equations with `eta = 0`, whose root is also the threshold of a
//! rotationally invariant dictionary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{q_function, q_inverse, r_func};

/// Smallest admissible `chi_hat` during iteration.
const CHI_HAT_FLOOR: f64 = 1e-10;
/// Clamp for the argument of `Q^{-1}` in the first equation.
const QINV_ARG_MARGIN: f64 = 1e-12;
/// Damping is halved on stagnation down to this value before giving up.
const MIN_DAMPING: f64 = 1.0 / 128.0;
/// Iterations between stagnation checks.
const STAGNATION_WINDOW: usize = 500;

/// Block imbalance `mu = rho1 / rho2` and overall density `rho = (rho1 + rho2) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub mu: f64,
    pub rho: f64,
    pub rho1: f64,
    pub rho2: f64,
}

impl SparsityProfile {
    pub fn new(mu: f64, rho: f64) -> Result<Self> {
        let (rho1, rho2) = block_densities(mu, rho)?;
        Ok(Self {
            mu,
            rho,
            rho1,
            rho2,
        })
    }
}

/// Per-block densities `(2 mu rho / (1 + mu), 2 rho / (1 + mu))`.
pub fn block_densities(mu: f64, rho: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::domain(format!("mu must lie in [0,1], got {mu}")));
    }
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::domain(format!("rho must lie in (0,1/2], got {rho}")));
    }
    Ok((2.0 * mu * rho / (1.0 + mu), 2.0 * rho / (1.0 + mu)))
}

/// Order parameters of one block: direct `(Q, chi, m)` and conjugate
/// `(Q_hat, chi_hat, m_hat)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockParameters {
    pub q: f64,
    pub chi: f64,
    pub m: f64,
    pub q_hat: f64,
    pub chi_hat: f64,
    pub m_hat: f64,
}

impl BlockParameters {
    /// Applies the stationarity relations `Q_hat = m_hat`, `chi = 1/(2 m_hat)`.
    pub fn stationary(q: f64, m: f64, m_hat: f64, chi_hat: f64) -> Self {
        Self {
            q,
            chi: 0.5 / m_hat,
            m,
            q_hat: m_hat,
            chi_hat,
            m_hat,
        }
    }

    /// The part of `T` that does not involve the Gaussian integral.
    pub(crate) fn bilinear_terms(&self, rho_i: f64) -> f64 {
        (rho_i - 2.0 * self.m + self.q) / (4.0 * self.chi) - 0.5 * self.q * self.q_hat
            + 0.5 * self.chi * self.chi_hat
            + self.m * self.m_hat
    }

    pub(crate) fn check_domain(&self) -> Result<()> {
        if !(self.chi > 0.0) {
            return Err(Error::domain(format!(
                "chi must be positive, got {}",
                self.chi
            )));
        }
        if !(self.q_hat > 0.0) {
            return Err(Error::domain(format!(
                "Q_hat must be positive, got {}",
                self.q_hat
            )));
        }
        if !(self.chi_hat >= 0.0) {
            return Err(Error::domain(format!(
                "chi_hat must be nonnegative, got {}",
                self.chi_hat
            )));
        }
        Ok(())
    }
}

/// Both blocks plus the multiplier for the `chi_1 = chi_2` constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParameters {
    pub blocks: [BlockParameters; 2],
    pub eta: f64,
}

impl OrderParameters {
    /// Lagrangian `eta (chi_1 - chi_2) + T(block 1) + T(block 2)`.
    pub fn lagrangian(&self, rho1: f64, rho2: f64) -> Result<f64> {
        let [b1, b2] = &self.blocks;
        Ok(self.eta * (b1.chi - b2.chi) + evaluate_t(b1, rho1)? + evaluate_t(b2, rho2)?)
    }
}

/// Closed form of the per-block free-energy term
///
/// ```text
/// T = (rho - 2m + Q)/(4 chi) - Q Q_hat/2 + chi chi_hat/2 + m m_hat
///     + (1 - rho)/Q_hat r(chi_hat) + rho/Q_hat r(m_hat² + chi_hat)
/// ```
pub fn evaluate_t(theta: &BlockParameters, rho_i: f64) -> Result<f64> {
    theta.check_domain()?;
    let r_noise = r_func(theta.chi_hat)?;
    let r_signal = r_func(theta.m_hat * theta.m_hat + theta.chi_hat)?;
    Ok(theta.bilinear_terms(rho_i) + ((1.0 - rho_i) * r_noise + rho_i * r_signal) / theta.q_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the largest equation defect is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial damping `d` in `x <- (1-d) x + d RHS(x)`; halved on stagnation.
    pub damping: f64,
    /// Starting value for every `chi_hat` component.
    pub initial_chi_hat: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
            damping: 0.5,
            initial_chi_hat: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::domain("tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::domain("damping must lie in (0,1]"));
        }
        if !(self.initial_chi_hat > 0.0 && self.initial_chi_hat.is_finite()) {
            return Err(Error::domain("initial chi_hat must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSolution {
    /// Profile evaluated at the critical density.
    pub profile: SparsityProfile,
    pub chi_hat_1: f64,
    pub chi_hat_2: f64,
    pub eta: f64,
    pub rho_critical: f64,
    pub iterations: usize,
    /// Largest absolute equation defect at the returned point.
    pub residual: f64,
}

/// Right-hand sides of the four coupled equations at `v = (chi_hat_1, eta, chi_hat_2, rho)`.
///
/// With `clamp` set, the argument of `Q^{-1}` is forced into `(0, 1/2)` and
/// the second component of the result reports whether that happened;
/// otherwise an argument outside `(0, 1)` is a domain error.
fn main_result_rhs(mu: f64, v: &[f64; 4], clamp: bool) -> Result<([f64; 4], bool)> {
    let [chi_hat_1, eta, chi_hat_2, rho] = *v;
    let w1 = 2.0 * mu * rho / (1.0 + mu);
    let w2 = 2.0 * rho / (1.0 + mu);

    let q1 = q_function(1.0 / chi_hat_1.sqrt());
    let arg = 0.25 - w1 * (0.5 - q1);
    let used_arg = if clamp {
        arg.clamp(QINV_ARG_MARGIN, 0.5 - QINV_ARG_MARGIN)
    } else {
        arg
    };
    let next_chi_hat_1 = q_inverse(used_arg)?.powi(-2);

    let r1 = r_func(chi_hat_1)?;
    let next_eta = 2.0 * w1 * (1.0 + chi_hat_1 + 2.0 * r1) - 4.0 * r1 - chi_hat_1;

    let r2 = r_func(chi_hat_2)?;
    let next_chi_hat_2 = 2.0 * w2 * (1.0 + chi_hat_2 + 2.0 * r2) - 4.0 * r2 + eta;

    let q2 = q_function(1.0 / chi_hat_2.sqrt());
    let next_rho = (1.0 + mu) * (0.5 - 2.0 * q2) / (2.0 - 4.0 * q2);

    Ok((
        [next_chi_hat_1, next_eta, next_chi_hat_2, next_rho],
        used_arg != arg,
    ))
}

/// Largest absolute defect of the four coupled equations at the given point.
pub fn fixed_point_defect(
    mu: f64,
    chi_hat_1: f64,
    eta: f64,
    chi_hat_2: f64,
    rho: f64,
) -> Result<f64> {
    let v = [chi_hat_1, eta, chi_hat_2, rho];
    let (rhs, _) = main_result_rhs(mu, &v, false)?;
    Ok(max_abs_diff(&rhs, &v))
}

/// Right-hand sides of the reduced `mu = 1` system at `v = (chi_hat, rho)`:
/// the first equation with `rho1 = rho`, and the second solved for `rho`
/// under `eta = 0`.
fn reduced_rhs(v: &[f64; 2]) -> Result<([f64; 2], bool)> {
    let [chi_hat, rho] = *v;
    let q = q_function(1.0 / chi_hat.sqrt());
    let arg = 0.25 - rho * (0.5 - q);
    let clamped_arg = arg.clamp(QINV_ARG_MARGIN, 0.5 - QINV_ARG_MARGIN);
    let next_chi_hat = q_inverse(clamped_arg)?.powi(-2);
    let r = r_func(chi_hat)?;
    let next_rho = (chi_hat + 4.0 * r) / (2.0 * (1.0 + chi_hat + 2.0 * r));
    Ok(([next_chi_hat, next_rho], clamped_arg != arg))
}

fn max_abs_diff<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct FixedPoint<const D: usize> {
    point: [f64; D],
    iterations: usize,
    residual: f64,
}

/// Damped successive substitution with damping backoff.
///
/// Each attempt restarts from `init`. An attempt is abandoned, and the
/// damping halved, when an iterate becomes non-finite or the residual fails
/// to halve over a window of iterations.
fn damped_fixed_point<const D: usize, F, P>(
    init: [f64; D],
    rhs: F,
    project: P,
    cfg: &SolverConfig,
    context: &str,
) -> Result<FixedPoint<D>>
where
    F: Fn(&[f64; D]) -> Result<([f64; D], bool)>,
    P: Fn(&mut [f64; D]),
{
    cfg.validate()?;
    let mut damping = cfg.damping;
    let mut total = 0usize;
    let mut last_residual = f64::INFINITY;

    while damping >= MIN_DAMPING {
        let mut v = init;
        let mut window_start = f64::INFINITY;
        let mut stalled = false;
        for it in 0.. {
            if total >= cfg.max_iterations {
                return Err(Error::Convergence {
                    iterations: total,
                    residual: last_residual,
                    context: context.to_string(),
                });
            }
            total += 1;

            let (next, clamped) = rhs(&v)?;
            let residual = max_abs_diff(&next, &v);
            if !residual.is_finite() {
                stalled = true;
                break;
            }
            last_residual = residual;
            if residual <= cfg.tolerance {
                if clamped {
                    return Err(Error::Convergence {
                        iterations: total,
                        residual,
                        context: format!(
                            "{context}: Q^-1 argument clamp active at the fixed point"
                        ),
                    });
                }
                return Ok(FixedPoint {
                    point: v,
                    iterations: total,
                    residual,
                });
            }
            if it % STAGNATION_WINDOW == 0 {
                if residual > 0.5 * window_start {
                    stalled = true;
                    break;
                }
                window_start = residual;
            }
            for k in 0..D {
                v[k] = (1.0 - damping) * v[k] + damping * next[k];
            }
            project(&mut v);
        }
        debug_assert!(stalled);
        damping *= 0.5;
    }

    Err(Error::Convergence {
        iterations: total,
        residual: last_residual,
        context: format!("{context}: stagnated at every damping down to {MIN_DAMPING}"),
    })
}

/// Critical density of the bi-orthogonal dictionary at block imbalance `mu`.
pub fn solve_bi_orthogonal_threshold(mu: f64, cfg: &SolverConfig) -> Result<ReplicaSolution> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::domain(format!("mu must lie in [0,1], got {mu}")));
    }
    let init = [cfg.initial_chi_hat, 0.0, cfg.initial_chi_hat, 0.2];
    let fp = damped_fixed_point(
        init,
        |v| main_result_rhs(mu, v, true),
        |v| {
            v[0] = v[0].max(CHI_HAT_FLOOR);
            v[2] = v[2].max(CHI_HAT_FLOOR);
        },
        cfg,
        &format!("bi-orthogonal threshold at mu = {mu}"),
    )?;
    let [chi_hat_1, eta, chi_hat_2, rho] = fp.point;
    Ok(ReplicaSolution {
        profile: SparsityProfile::new(mu, rho)?,
        chi_hat_1,
        chi_hat_2,
        eta,
        rho_critical: rho,
        iterations: fp.iterations,
        residual: fp.residual,
    })
}

/// Critical density of a rotationally invariant dictionary, via the reduced
/// `mu = 1` system (`eta = 0`, one `chi_hat`).
pub fn solve_rot_invariant_threshold(cfg: &SolverConfig) -> Result<ReplicaSolution> {
    let fp = damped_fixed_point(
        [cfg.initial_chi_hat, 0.2],
        reduced_rhs,
        |v| v[0] = v[0].max(CHI_HAT_FLOOR),
        cfg,
        "rotationally invariant threshold",
    )?;
    let [chi_hat, rho] = fp.point;
    Ok(ReplicaSolution {
        profile: SparsityProfile::new(1.0, rho)?,
        chi_hat_1: chi_hat,
        chi_hat_2: chi_hat,
        eta: 0.0,
        rho_critical: rho,
        iterations: fp.iterations,
        residual: fp.residual,
    })
}

/// Solves every grid point independently; order of the output follows `grid`.
pub fn sweep_mu(grid: &[f64], cfg: &SolverConfig) -> Result<Vec<ReplicaSolution>> {
    grid.par_iter()
        .map(|&mu| solve_bi_orthogonal_threshold(mu, cfg))
        .collect()
}

/// `n` evenly spaced points on `[0, 1]`.
pub fn uniform_mu_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 40-digit reference roots of the coupled equations.
    const RHO_MU0: f64 = 0.22666550758496712426;
    const RHO_MU1: f64 = 0.19284483309074045965;

    #[test]
    fn block_density_examples() {
        assert_eq!(block_densities(1.0, 0.2).unwrap(), (0.2, 0.2));
        assert_eq!(block_densities(0.0, 0.2).unwrap(), (0.0, 0.4));
        let (r1, r2) = block_densities(0.5, 0.15).unwrap();
        assert!((r1 - 0.1).abs() < 1e-15 && (r2 - 0.2).abs() < 1e-15);
        assert!(block_densities(1.2, 0.2).is_err());
        assert!(block_densities(0.5, 0.0).is_err());
        assert!(block_densities(0.5, 0.6).is_err());
    }

    #[test]
    fn profile_average_matches_rho() {
        for (mu, rho) in [(0.0, 0.1), (0.3, 0.25), (1.0, 0.5)] {
            let p = SparsityProfile::new(mu, rho).unwrap();
            assert!((0.5 * (p.rho1 + p.rho2) - rho).abs() < 1e-15);
            assert!(p.rho1 <= p.rho2);
        }
    }

    #[test]
    fn endpoints() {
        let cfg = SolverConfig::default();
        let s1 = solve_bi_orthogonal_threshold(1.0, &cfg).unwrap();
        assert!(
            (s1.rho_critical - RHO_MU1).abs() <= 1e-12,
            "{}",
            s1.rho_critical
        );
        let s0 = solve_bi_orthogonal_threshold(0.0, &cfg).unwrap();
        assert!(
            (s0.rho_critical - RHO_MU0).abs() <= 1e-12,
            "{}",
            s0.rho_critical
        );
        assert!(s0.residual <= cfg.tolerance && s1.residual <= cfg.tolerance);
    }

    #[test]
    fn interior_point_is_between_endpoints() {
        let s = solve_bi_orthogonal_threshold(0.5, &SolverConfig::default()).unwrap();
        assert!(s.rho_critical > RHO_MU1 && s.rho_critical < RHO_MU0);
        assert!((s.rho_critical - 0.19554874858402475935).abs() < 1e-12);
        assert!((s.chi_hat_1 - 1.5715299612810040716).abs() < 1e-10);
        assert!((s.chi_hat_2 - 1.0265709223413701143).abs() < 1e-10);
        assert!((s.eta + 0.26558783536433766518).abs() < 1e-10);
    }

    #[test]
    fn uniform_sparsity_degenerates() {
        let s = solve_bi_orthogonal_threshold(1.0, &SolverConfig::default()).unwrap();
        assert!(s.eta.abs() <= 1e-9);
        assert!((s.chi_hat_1 - s.chi_hat_2).abs() <= 1e-9);
    }

    #[test]
    fn reduced_system_matches_full_solve() {
        let cfg = SolverConfig::default();
        let red = solve_rot_invariant_threshold(&cfg).unwrap();
        let full = solve_bi_orthogonal_threshold(1.0, &cfg).unwrap();
        assert_eq!(red.eta, 0.0);
        assert!((red.rho_critical - full.rho_critical).abs() <= 1e-10);
        assert!((red.chi_hat_1 - full.chi_hat_1).abs() <= 1e-9);
        assert!((red.chi_hat_2 - full.chi_hat_2).abs() <= 1e-9);
        assert!((red.rho_critical - 0.19284483309074016).abs() <= 1e-9);
    }

    #[test]
    fn defect_of_solution_is_below_tolerance() {
        let cfg = SolverConfig::default();
        for mu in [0.0, 0.3, 0.8, 1.0] {
            let s = solve_bi_orthogonal_threshold(mu, &cfg).unwrap();
            let d =
                fixed_point_defect(mu, s.chi_hat_1, s.eta, s.chi_hat_2, s.rho_critical).unwrap();
            assert!(d <= cfg.tolerance, "mu={mu} defect={d}");
        }
    }

    #[test]
    fn initialization_does_not_matter() {
        for mu in [0.0, 0.5, 1.0] {
            let sols: Vec<_> = [0.5, 1.0, 5.0]
                .iter()
                .map(|&c| {
                    let cfg = SolverConfig {
                        initial_chi_hat: c,
                        ..SolverConfig::default()
                    };
                    solve_bi_orthogonal_threshold(mu, &cfg).unwrap()
                })
                .collect();
            for s in &sols[1..] {
                assert!((s.rho_critical - sols[0].rho_critical).abs() <= 1e-8);
                assert!((s.chi_hat_1 - sols[0].chi_hat_1).abs() <= 1e-8);
                assert!((s.chi_hat_2 - sols[0].chi_hat_2).abs() <= 1e-8);
                assert!((s.eta - sols[0].eta).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn sweep_is_strictly_decreasing() {
        let grid = uniform_mu_grid(11);
        let sols = sweep_mu(&grid, &SolverConfig::default()).unwrap();
        assert_eq!(sols.len(), 11);
        for w in sols.windows(2) {
            assert!(w[1].rho_critical < w[0].rho_critical);
        }
        for s in &sols {
            assert!((0.19..=0.23).contains(&s.rho_critical));
        }
        let single = sweep_mu(&[1.0], &SolverConfig::default()).unwrap();
        assert!((single[0].rho_critical - 0.19284483309074016).abs() <= 1e-9);
    }

    #[test]
    fn sweep_reports_offending_mu() {
        let err = sweep_mu(&[0.5, 1.5], &SolverConfig::default()).unwrap_err();
        assert!(err.to_string().contains("1.5"));
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let cfg = SolverConfig {
            max_iterations: 10,
            ..SolverConfig::default()
        };
        match solve_bi_orthogonal_threshold(0.5, &cfg) {
            Err(Error::Convergence {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 10);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = SolverConfig {
            damping: 0.0,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve_bi_orthogonal_threshold(0.5, &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn t_without_signal_terms() {
        let theta = BlockParameters {
            q: 0.0,
            chi: 0.7,
            m: 0.0,
            q_hat: 1.3,
            chi_hat: 2.0,
            m_hat: 0.0,
        };
        let t = evaluate_t(&theta, 0.0).unwrap();
        let want = 0.7 * 2.0 / 2.0 + r_func(2.0).unwrap() / 1.3;
        assert!((t - want).abs() < 1e-15);

        let cold = BlockParameters {
            chi_hat: 0.0,
            ..theta
        };
        assert_eq!(evaluate_t(&cold, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn t_rejects_bad_domain() {
        let theta = BlockParameters {
            q: 0.1,
            chi: 0.0,
            m: 0.1,
            q_hat: 1.0,
            chi_hat: 1.0,
            m_hat: 1.0,
        };
        assert!(evaluate_t(&theta, 0.1).is_err());
        assert!(evaluate_t(
            &BlockParameters {
                chi: 1.0,
                q_hat: -1.0,
                ..theta
            },
            0.1
        )
        .is_err());
        assert!(evaluate_t(
            &BlockParameters {
                chi: 1.0,
                chi_hat: -1.0,
                ..theta
            },
            0.1
        )
        .is_err());
    }

    #[test]
    fn grid_helper() {
        assert_eq!(uniform_mu_grid(2), vec![0.0, 1.0]);
        assert_eq!(uniform_mu_grid(5)[2], 0.5);
    }
}
