//! Monte Carlo harness: success-rate curves over `rho` at fixed `N`, per-`N`
//! critical densities, and extrapolation of those to `N → ∞`.

mod fit;
mod persist;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{check_recovery, l1_reconstruct, DEFAULT_RECOVERY_TOL};
use crate::randmat::{build_instance, derive_seed, DictionaryKind};
use crate::replica::SparsityProfile;

pub use fit::CrossingMethod;
pub use fit::{
    critical_density_estimate, finite_size_extrapolate, CriticalDensity, ExtrapolationFit,
    SizePoint,
};
pub use persist::{
    format_g17, load_results, persist_results, read_curves_csv, read_fit_csv, read_manifest,
    write_curves, write_curves_csv, write_fit, write_fit_csv, write_manifest, FitSummary, Manifest,
    CURVES_FILE, FIT_FILE, MANIFEST_FILE,
};

/// Largest tolerated fraction of trials at one point whose LP did not finish.
pub const MAX_LP_FAILURE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: DictionaryKind,
    pub mu: f64,
    /// Signal lengths `N = 2M`.
    pub n_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub recovery_tol: f64,
}

impl ExperimentConfig {
    pub fn new(
        kind: DictionaryKind,
        mu: f64,
        n_values: Vec<usize>,
        rho_values: Vec<f64>,
        trials: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            kind,
            mu,
            n_values,
            rho_values,
            trials,
            master_seed,
            recovery_tol: DEFAULT_RECOVERY_TOL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::domain(format!(
                "mu must lie in [0, 1], got {}",
                self.mu
            )));
        }
        if self.n_values.is_empty() || self.rho_values.is_empty() {
            return Err(Error::domain("N and rho lists must be nonempty"));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < 4 || n % 2 != 0) {
            return Err(Error::domain(format!("N must be even and >= 4, got {n}")));
        }
        if let Some(&r) = self.rho_values.iter().find(|&&r| !(r > 0.0 && r < 0.5)) {
            return Err(Error::domain(format!("rho must lie in (0, 1/2), got {r}")));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials must be >= 1"));
        }
        if !(self.recovery_tol > 0.0) {
            return Err(Error::domain("recovery tolerance must be positive"));
        }
        Ok(())
    }

    /// Seed of one trial. Depends only on the trial's coordinates, so any
    /// execution order or split of the trial range gives the same counts.
    pub fn trial_seed(&self, n: usize, rho_index: usize, trial: usize) -> u64 {
        derive_seed(&[self.master_seed, n as u64, rho_index as u64, trial as u64])
    }
}

/// Counts from a batch of trials at one `(N, rho)` point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialTally {
    pub successes: u64,
    pub trials: u64,
    /// Trials whose LP did not reach an optimum. They count as failed recoveries.
    pub lp_failures: u64,
}

impl TrialTally {
    pub fn merge(self, other: Self) -> Self {
        Self {
            successes: self.successes + other.successes,
            trials: self.trials + other.trials,
            lp_failures: self.lp_failures + other.lp_failures,
        }
    }

    pub fn flagged(&self) -> bool {
        self.lp_failures as f64 > MAX_LP_FAILURE_FRACTION * self.trials as f64
    }
}

fn one_trial(
    config: &ExperimentConfig,
    profile: &SparsityProfile,
    n: usize,
    seed: u64,
) -> Result<TrialTally> {
    let instance = build_instance(n / 2, profile, config.kind, seed)?;
    match l1_reconstruct(&instance) {
        Ok(rec) => {
            let ok = check_recovery(&rec.x_hat, &instance.signal.concat(), config.recovery_tol);
            Ok(TrialTally {
                successes: ok as u64,
                trials: 1,
                lp_failures: 0,
            })
        }
        Err(Error::Lp { .. }) => Ok(TrialTally {
            successes: 0,
            trials: 1,
            lp_failures: 1,
        }),
        Err(e) => Err(e),
    }
}

/// Runs the trials with indices in `range` at `(n, rho_values[rho_index])`.
pub fn run_trial_range(
    config: &ExperimentConfig,
    n: usize,
    rho_index: usize,
    range: Range<usize>,
) -> Result<TrialTally> {
    config.validate()?;
    let rho = *config
        .rho_values
        .get(rho_index)
        .ok_or_else(|| Error::domain(format!("rho index {rho_index} out of range")))?;
    let profile = SparsityProfile::new(config.mu, rho)?;
    range
        .into_par_iter()
        .map(|t| one_trial(config, &profile, n, config.trial_seed(n, rho_index, t)))
        .try_reduce(TrialTally::default, |a, b| Ok(a.merge(b)))
}

/// All configured trials at one point.
pub fn run_trials(config: &ExperimentConfig, n: usize, rho_index: usize) -> Result<TrialTally> {
    run_trial_range(config, n, rho_index, 0..config.trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessPoint {
    pub rho: f64,
    pub successes: u64,
    pub trials: u64,
}

impl SuccessPoint {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Empirical recovery probability against `rho` at one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub kind: DictionaryKind,
    pub mu: f64,
    pub n: usize,
    pub points: Vec<SuccessPoint>,
}

/// LP failure counts of one point, kept for the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointFailures {
    pub n: usize,
    pub rho: f64,
    pub lp_failures: u64,
    pub flagged: bool,
}

/// A curve plus the LP failure counts behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRun {
    pub curve: SuccessCurve,
    pub failures: Vec<PointFailures>,
}

impl CurveRun {
    pub fn flagged(&self) -> impl Iterator<Item = &PointFailures> {
        self.failures.iter().filter(|f| f.flagged)
    }
}

/// Runs every configured `rho` at size `n`.
pub fn success_curve(config: &ExperimentConfig, n: usize) -> Result<CurveRun> {
    let mut points = Vec::with_capacity(config.rho_values.len());
    let mut failures = Vec::with_capacity(config.rho_values.len());
    for (i, &rho) in config.rho_values.iter().enumerate() {
        let tally = run_trials(config, n, i)?;
        points.push(SuccessPoint {
            rho,
            successes: tally.successes,
            trials: tally.trials,
        });
        failures.push(PointFailures {
            n,
            rho,
            lp_failures: tally.lp_failures,
            flagged: tally.flagged(),
        });
    }
    Ok(CurveRun {
        curve: SuccessCurve {
            kind: config.kind,
            mu: config.mu,
            n,
            points,
        },
        failures,
    })
}

/// Output of a full simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub config: ExperimentConfig,
    pub curves: Vec<SuccessCurve>,
    pub failures: Vec<PointFailures>,
}

impl SimulationRun {
    pub fn flagged_count(&self) -> usize {
        self.failures.iter().filter(|f| f.flagged).count()
    }
}

/// One curve per configured size.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulationRun> {
    config.validate()?;
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for &n in &config.n_values {
        let run = success_curve(config, n)?;
        curves.push(run.curve);
        failures.extend(run.failures);
    }
    Ok(SimulationRun {
        config: config.clone(),
        curves,
        failures,
    })
}

/// Critical density of every curve, then the cubic extrapolation.
pub fn extrapolate_curves(curves: &[SuccessCurve]) -> Result<(Vec<SizePoint>, ExtrapolationFit)> {
    let points = curves
        .iter()
        .map(|c| {
            let est = critical_density_estimate(c)?;
            Ok(SizePoint {
                n: c.n,
                rho_c: est.rho_c,
                stderr: est.stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = finite_size_extrapolate(&points)?;
    Ok((points, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mu: f64, rho: Vec<f64>, trials: usize) -> ExperimentConfig {
        ExperimentConfig::new(DictionaryKind::BiOrthogonal, mu, vec![16], rho, trials, 7).unwrap()
    }

    #[test]
    fn validation() {
        let ok = config(0.0, vec![0.1], 1);
        assert!(ExperimentConfig {
            n_values: vec![15],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig {
            n_values: vec![2],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig {
            rho_values: vec![0.5],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig {
            trials: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig { mu: 1.5, ..ok }.validate().is_err());
    }

    #[test]
    fn tiny_rho_always_recovers() {
        let cfg = config(0.0, vec![1e-6], 50);
        let t = run_trials(&cfg, 16, 0).unwrap();
        assert_eq!(t.successes, 50);
        assert_eq!(t.lp_failures, 0);
    }

    #[test]
    fn deep_failure_phase() {
        let cfg = ExperimentConfig {
            n_values: vec![32],
            ..config(0.0, vec![0.45], 200)
        };
        let t = run_trials(&cfg, 32, 0).unwrap();
        assert!((t.successes as f64) < 0.5 * t.trials as f64, "{t:?}");
    }

    #[test]
    fn split_ranges_add_up() {
        let cfg = config(0.0, vec![0.22], 60);
        let whole = run_trials(&cfg, 16, 0).unwrap();
        let a = run_trial_range(&cfg, 16, 0, 0..25).unwrap();
        let b = run_trial_range(&cfg, 16, 0, 25..60).unwrap();
        assert_eq!(whole, a.merge(b));
        assert_eq!(whole, run_trials(&cfg, 16, 0).unwrap());
    }

    #[test]
    fn flagging_threshold() {
        let t = TrialTally {
            successes: 0,
            trials: 1000,
            lp_failures: 1,
        };
        assert!(!t.flagged());
        assert!(TrialTally {
            lp_failures: 2,
            ..t
        }
        .flagged());
    }
}
