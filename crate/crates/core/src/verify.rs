//! Cross-check suites: each compares a production routine against an
//! independent oracle and reports the largest deviation seen.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::haarint::{f_haar, f_haar_asymptotic, i_m_quadrature};
use crate::lp::{l1_reconstruct, simplex_solve, to_standard_form, LpStatus, DEFAULT_MAX_PIVOTS};
use crate::oracle::{
    enumerate_vertices, mixture_identity, phi_by_search, sparse_solutions, t_by_quadrature,
    threshold_by_bisection,
};
use crate::randmat::{
    build_instance, derive_seed, instance_rng, sample_haar_orthogonal, DictionaryKind,
    ProblemInstance, SignalVector,
};
use crate::replica::{
    evaluate_t, fixed_point_defect, solve_bi_orthogonal_threshold, solve_rot_invariant_threshold,
    sweep_mu, uniform_mu_grid, BlockParameters, SolverConfig, SparsityProfile,
};
use crate::specfun::{phi, q_function, q_inverse, QuadratureRule};

/// Seed of every random draw made by the suites.
const VERIFY_SEED: u64 = 0x5eed_0b1e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Specfun,
    Haarint,
    Replica,
    Lp,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Specfun, Suite::Haarint, Suite::Replica, Suite::Lp];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Specfun => "specfun",
            Suite::Haarint => "haarint",
            Suite::Replica => "replica",
            Suite::Lp => "lp",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown suite {s:?}")))
    }
}

/// One comparison: `passed` iff `max_deviation <= tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl Check {
    fn new(name: &'static str, max_deviation: f64, tolerance: f64, cases: usize) -> Self {
        Self {
            name,
            max_deviation,
            tolerance,
            cases,
        }
    }

    /// A yes/no property, reported as deviation 0 or 1 against tolerance 0.
    fn holds(name: &'static str, ok: bool, cases: usize) -> Self {
        Self::new(name, if ok { 0.0 } else { 1.0 }, 0.0, cases)
    }

    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} max_dev={:.3e} tol={:.1e} cases={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_deviation,
            self.tolerance,
            self.cases
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {c}", self.suite)?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Specfun => specfun_checks()?,
        Suite::Haarint => haarint_checks()?,
        Suite::Replica => replica_checks()?,
        Suite::Lp => lp_checks()?,
    };
    Ok(SuiteReport { suite, checks })
}

fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[VERIFY_SEED, stream]))
}

/// Draws for the Gaussian-average identity: `(chi_hat, m_hat, q_hat, rho)`.
pub fn identity_draws(count: usize) -> Vec<(f64, f64, f64, f64)> {
    let mut r = rng(1);
    (0..count)
        .map(|_| {
            let chi_hat = 50.0 * (1.0 - r.random::<f64>());
            let m_hat = 10.0 * r.random::<f64>();
            let q_hat = 50.0 * (1.0 - r.random::<f64>());
            (chi_hat, m_hat, q_hat, r.random::<f64>())
        })
        .collect()
}

/// Largest `|quadrature - closed form|` of the mixture identity over the draws.
pub fn identity_max_deviation(draws: &[(f64, f64, f64, f64)]) -> Result<f64> {
    draws.iter().try_fold(0.0f64, |acc, &(c, m, q, rho)| {
        let (quad, closed) = mixture_identity(c, m, q, rho)?;
        Ok(acc.max((quad - closed).abs()))
    })
}

/// Upper Gaussian tail at a few points, to 20 digits.
const Q_REFERENCE: [(f64, f64); 6] = [
    (1.0, 0.15865525393145705141),
    (3.0, 0.0013498980316300945267),
    (6.0, 9.865876450376981407e-10),
    (8.0, 6.2209605742717841235e-16),
    (-2.0, 0.9772498680518207928),
    (1.6448536269514722, 0.05),
];

fn specfun_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let draws = identity_draws(100);
    checks.push(Check::new(
        "gaussian-average identity",
        identity_max_deviation(&draws)?,
        1e-8,
        draws.len(),
    ));

    let q_rel = Q_REFERENCE
        .iter()
        .map(|&(x, q)| ((q_function(x) - q) / q).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "q_function relative error",
        q_rel,
        1e-14,
        Q_REFERENCE.len(),
    ));

    let mut worst = 0.0f64;
    let grid: Vec<f64> = (1..=999).map(|k| k as f64 / 1000.0).collect();
    for &p in &grid {
        worst = worst.max((q_function(q_inverse(p)?) - p).abs());
    }
    checks.push(Check::new("q_inverse round trip", worst, 1e-12, grid.len()));

    let mut r = rng(2);
    let mut worst = 0.0f64;
    let cases = 200;
    for _ in 0..cases {
        let h = 100.0 * (2.0 * r.random::<f64>() - 1.0);
        let q = 100.0 * (1.0 - r.random::<f64>());
        let (v, _) = phi(h, q)?;
        let (v_search, _) = phi_by_search(h, q)?;
        worst = worst.max((v - v_search).abs());
    }
    checks.push(Check::new("phi vs grid search", worst, 1e-9, cases));

    let rule = QuadratureRule::default();
    let mass: f64 = rule.weights().iter().sum();
    let second: f64 = rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(z, w)| w * z * z)
        .sum();
    checks.push(Check::new(
        "hermite rule mass",
        (mass - 1.0).abs(),
        1e-12,
        rule.len(),
    ));
    checks.push(Check::new(
        "hermite rule second moment",
        (second - 1.0).abs(),
        1e-10,
        rule.len(),
    ));
    Ok(checks)
}

const HAAR_GRID_VALUES: [f64; 3] = [0.5, 1.0, 2.0];
pub const HAAR_GAP_SIZES: [usize; 3] = [100, 200, 400];

/// `|i_m_quadrature - f_haar|` on the 3×3×3 grid, one row per size in
/// [`HAAR_GAP_SIZES`].
pub fn haar_gaps() -> Result<Vec<Vec<f64>>> {
    HAAR_GAP_SIZES
        .iter()
        .map(|&m| {
            let mut row = Vec::new();
            for &r1 in &HAAR_GRID_VALUES {
                for &r2 in &HAAR_GRID_VALUES {
                    for &c in &HAAR_GRID_VALUES {
                        row.push((i_m_quadrature(m, r1, r2, c)? - f_haar(r1, r2, c)?).abs());
                    }
                }
            }
            Ok(row)
        })
        .collect()
}

fn haarint_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let gaps = haar_gaps()?;
    // Scaled so the tolerance 10/M becomes 1 at every size.
    let scaled = HAAR_GAP_SIZES
        .iter()
        .zip(&gaps)
        .flat_map(|(&m, row)| row.iter().map(move |g| g * m as f64 / 10.0))
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "haar integral gap * M / 10",
        scaled,
        1.0,
        27 * HAAR_GAP_SIZES.len(),
    ));
    let decreasing = (0..27).all(|i| gaps.windows(2).all(|w| w[1][i] < w[0][i]));
    checks.push(Check::holds("haar integral gap decreasing in M", decreasing, 27));

    let gap_400 = (i_m_quadrature(400, 1.0, 1.0, 3.0)? - f_haar(1.0, 1.0, 3.0)?).abs();
    checks.push(Check::new(
        "f_haar(1,1,3) at M=400",
        gap_400,
        10.0 / 400.0,
        1,
    ));

    let rel = |x: f64| -> Result<f64> {
        let c = x.sqrt();
        let exact = f_haar(1.0, 1.0, c)?;
        Ok((exact - f_haar_asymptotic(1.0, 1.0, c)?).abs() / exact)
    };
    let (g4, g8) = (rel(1e4)?, rel(1e8)?);
    checks.push(Check::new("asymptotic relative gap at 1e4", g4, 0.01, 1));
    checks.push(Check::holds("asymptotic gap shrinks to 1e8", g8 < g4, 2));
    Ok(checks)
}

/// Largest difference between the iterative solver and the bisection oracle
/// over `rho`, `chi_hat_1`, `eta`, `chi_hat_2`.
pub fn solver_oracle_gap(mu: f64, cfg: &SolverConfig) -> Result<f64> {
    let s = solve_bi_orthogonal_threshold(mu, cfg)?;
    let o = threshold_by_bisection(mu)?;
    Ok([
        s.rho_critical - o.rho,
        s.chi_hat_1 - o.chi_hat_1,
        s.eta - o.eta,
        s.chi_hat_2 - o.chi_hat_2,
    ]
    .iter()
    .map(|d| d.abs())
    .fold(0.0, f64::max))
}

/// Random admissible block parameters and densities for the `T` check.
pub fn t_draws(count: usize) -> Vec<(BlockParameters, f64)> {
    let mut r = rng(3);
    (0..count)
        .map(|_| {
            let theta = BlockParameters {
                q: r.random::<f64>(),
                chi: 0.05 + 5.0 * r.random::<f64>(),
                m: 2.0 * r.random::<f64>() - 1.0,
                q_hat: 0.05 + 20.0 * r.random::<f64>(),
                chi_hat: 20.0 * r.random::<f64>(),
                m_hat: 5.0 * r.random::<f64>(),
            };
            (theta, r.random::<f64>())
        })
        .collect()
}

fn replica_checks() -> Result<Vec<Check>> {
    let cfg = SolverConfig::default();
    let mut checks = Vec::new();

    let mus = [0.0, 0.25, 0.5, 0.75, 1.0];
    let gap = mus
        .iter()
        .map(|&mu| solver_oracle_gap(mu, &cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "solver vs bisection oracle",
        gap,
        1e-8,
        mus.len(),
    ));

    let sweep = sweep_mu(&uniform_mu_grid(11), &cfg)?;
    let defect = sweep
        .iter()
        .map(|s| {
            fixed_point_defect(
                s.profile.mu,
                s.chi_hat_1,
                s.eta,
                s.chi_hat_2,
                s.rho_critical,
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "fixed-point defect",
        defect,
        cfg.tolerance,
        sweep.len(),
    ));
    let decreasing = sweep
        .windows(2)
        .all(|w| w[1].rho_critical < w[0].rho_critical);
    checks.push(Check::holds(
        "threshold decreasing in mu",
        decreasing,
        sweep.len(),
    ));

    let rot = solve_rot_invariant_threshold(&cfg)?;
    let full = &sweep[sweep.len() - 1];
    checks.push(Check::new(
        "rotinv vs mu=1",
        (rot.rho_critical - full.rho_critical).abs(),
        1e-10,
        1,
    ));
    let degenerate = full.eta.abs().max((full.chi_hat_1 - full.chi_hat_2).abs());
    checks.push(Check::new("mu=1 degeneracy", degenerate, 1e-9, 1));

    let draws = t_draws(100);
    let mut worst = 0.0f64;
    for (theta, rho) in &draws {
        worst = worst.max((evaluate_t(theta, *rho)? - t_by_quadrature(theta, *rho)?).abs());
    }
    checks.push(Check::new(
        "T closed form vs quadrature",
        worst,
        1e-8,
        draws.len(),
    ));
    Ok(checks)
}

/// Outcome of one small LP compared against vertex enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpComparison {
    pub objective_gap: f64,
    pub feasibility: f64,
    /// `‖x_hat‖₁ - ‖x_planted‖₁`, at most zero up to roundoff.
    pub excess_over_planted: f64,
}

/// Instance `i` of the small-LP comparison: `M = 3..=6`, both kinds.
pub fn small_lp_instance(i: usize) -> Result<ProblemInstance> {
    let mut r = rng(1000 + i as u64);
    let m = 3 + i % 4;
    let kind = if i % 2 == 0 {
        DictionaryKind::BiOrthogonal
    } else {
        DictionaryKind::IidGaussian
    };
    let mu = r.random::<f64>();
    let rho = 0.05 + 0.4 * r.random::<f64>();
    build_instance(
        m,
        &SparsityProfile::new(mu, rho)?,
        kind,
        derive_seed(&[VERIFY_SEED, 4, i as u64]),
    )
}

pub fn compare_with_enumeration(instance: &ProblemInstance) -> Result<LpComparison> {
    let lp = to_standard_form(instance)?;
    let sol = simplex_solve(&lp, DEFAULT_MAX_PIVOTS);
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp {
            status: sol.status,
            seed: instance.seed,
        });
    }
    let best = enumerate_vertices(&lp)
        .ok_or_else(|| Error::domain("planted instance has no feasible basis"))?;
    let rec = l1_reconstruct(instance)?;
    let feasibility = (&instance.dictionary * &rec.x_hat - &instance.observation).amax();
    Ok(LpComparison {
        objective_gap: (sol.objective - best.objective).abs(),
        feasibility,
        excess_over_planted: rec.objective - instance.signal.l1_norm(),
    })
}

fn lp_checks() -> Result<Vec<Check>> {
    let cases = 100;
    let mut gap = 0.0f64;
    let mut feas = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    for i in 0..cases {
        let c = compare_with_enumeration(&small_lp_instance(i)?)?;
        gap = gap.max(c.objective_gap);
        feas = feas.max(c.feasibility);
        excess = excess.max(c.excess_over_planted);
    }
    let mut checks = vec![
        Check::new("simplex vs vertex enumeration", gap, 1e-9, cases),
        Check::new("feasibility of reconstructions", feas, 1e-8, cases),
        Check::new("objective above planted l1", excess.max(0.0), 1e-9, cases),
    ];

    // One nonzero at M = 8: the l0 search must find the planted support only.
    let m = 8;
    let mut r = instance_rng(derive_seed(&[VERIFY_SEED, 5]));
    let o1 = sample_haar_orthogonal(m, &mut r)?.into_inner();
    let o2 = sample_haar_orthogonal(m, &mut r)?.into_inner();
    let mut d = nalgebra::DMatrix::zeros(m, 2 * m);
    d.columns_mut(0, m).copy_from(&o1);
    d.columns_mut(m, m).copy_from(&o2);
    let mut signal = SignalVector::zeros(m);
    signal.block1[3] = 1.3;
    let inst = ProblemInstance::from_parts(DictionaryKind::BiOrthogonal, d, signal, 0)?;
    let found = sparse_solutions(&inst.dictionary, &inst.observation, 2, 1e-9);
    let unique = found.len() == 1 && found[0].0 == vec![3];
    checks.push(Check::holds(
        "l0 search finds only the planted support",
        unique,
        1,
    ));
    let rec = l1_reconstruct(&inst)?;
    checks.push(Check::new(
        "single-spike l1 recovery",
        (&rec.x_hat - inst.signal.concat()).amax(),
        1e-6,
        1,
    ));
    Ok(checks)
}
