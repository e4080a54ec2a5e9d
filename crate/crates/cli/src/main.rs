use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biortho_core::experiment::{
    self, extrapolate_curves, format_g17, read_curves_csv, write_curves, write_curves_csv,
    write_fit, write_fit_csv, write_manifest, ExperimentConfig, Manifest,
};
use biortho_core::replica::{
    solve_bi_orthogonal_threshold, solve_rot_invariant_threshold, uniform_mu_grid,
};
use biortho_core::verify::{run_suite, Suite};
use biortho_core::{DictionaryKind, Error, ReplicaSolution, SolverConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "biortho",
    version,
    about = "Phase-transition thresholds for l1 recovery with bi-orthogonal dictionaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical density from the threshold equations.
    Threshold(ThresholdArgs),
    /// Thresholds on a uniform mu grid, as CSV.
    Sweep(SweepArgs),
    /// Monte Carlo success curves of basis pursuit, as CSV.
    Simulate(SimulateArgs),
    /// Per-N critical densities and the cubic fit in 1/N from a curves CSV.
    Extrapolate(ExtrapolateArgs),
    /// Cross-check routines against independent oracles.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Stopping tolerance on the largest equation defect.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iterations: usize,
    /// Initial damping of the fixed-point iteration, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tol,
            max_iterations: self.max_iterations,
            damping: self.damping,
            ..SolverConfig::default()
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Ensemble {
    Biortho,
    Rotinv,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Block imbalance rho1/rho2 in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, value_enum, default_value_t = Ensemble::Biortho)]
    ensemble: Ensemble,
    #[command(flatten)]
    solver: SolverArgs,
    /// Print the solution as JSON instead of a key=value line.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Number of evenly spaced mu values on [0, 1].
    #[arg(long, default_value_t = 11)]
    grid_points: usize,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Dictionary ensemble: biortho or gaussian.
    #[arg(long, default_value = "biortho")]
    kind: DictionaryKind,
    /// Signal lengths N = 2M: a comma list and/or `start:stop:step` ranges.
    #[arg(long = "N-list", default_value = "16:50:2")]
    n_list: String,
    /// Overall densities: a comma list and/or `start:stop:step` ranges.
    #[arg(long = "rho-list", default_value = "0.10:0.40:0.02")]
    rho_list: String,
    /// Trials per (N, rho) point.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Master seed; every trial seed is derived from it.
    #[arg(long, env = "BIORTHO_SEED", default_value_t = 2011)]
    seed: u64,
    /// Per-entry mean squared error counted as recovery.
    #[arg(long, default_value_t = biortho_core::lp::DEFAULT_RECOVERY_TOL)]
    recovery_tol: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON manifest path. Defaults to the output path with extension
    /// `manifest.json`; skipped when writing to stdout.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtrapolateArgs {
    /// Curves CSV written by `simulate`.
    #[arg(long)]
    curves: PathBuf,
    /// Output fit CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite to run: specfun, haarint, replica, lp or all.
    #[arg(long, default_value = "all")]
    suite: String,
}

/// Failure of a subcommand, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_USAGE
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn io_failure(path: Option<&Path>, e: io::Error) -> Failure {
    let place = path.map_or_else(|| "stdout".to_string(), |p| p.display().to_string());
    usage(format!("{place}: {e}"))
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Threshold(a) => cmd_threshold(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Extrapolate(a) => cmd_extrapolate(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn solution_line(s: &ReplicaSolution) -> String {
    format!(
        "rho_critical={} chi_hat_1={} chi_hat_2={} eta={} iterations={} residual={}",
        format_g17(s.rho_critical),
        format_g17(s.chi_hat_1),
        format_g17(s.chi_hat_2),
        format_g17(s.eta),
        s.iterations,
        format_g17(s.residual)
    )
}

fn cmd_threshold(a: &ThresholdArgs) -> CmdResult {
    let cfg = a.solver.config();
    eprintln!(
        "config: command=threshold mu={} ensemble={:?} tol={:e} max_iterations={} damping={}",
        a.mu, a.ensemble, cfg.tolerance, cfg.max_iterations, cfg.damping
    );
    cfg.validate()?;
    let sol = match a.ensemble {
        Ensemble::Biortho => solve_bi_orthogonal_threshold(a.mu, &cfg)?,
        Ensemble::Rotinv => solve_rot_invariant_threshold(&cfg)?,
    };
    let text = if a.json {
        serde_json::to_string_pretty(&sol).map_err(|e| usage(e.to_string()))?
    } else {
        solution_line(&sol)
    };
    println!("{text}");
    Ok(())
}

/// Opens `path` for writing, or stdout.
fn sink(path: Option<&Path>) -> std::result::Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => Ok(Box::new(
            File::create(p).map_err(|e| io_failure(Some(p), e))?,
        )),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let cfg = a.solver.config();
    eprintln!(
        "config: command=sweep grid_points={} tol={:e} max_iterations={} damping={} out={}",
        a.grid_points,
        cfg.tolerance,
        cfg.max_iterations,
        cfg.damping,
        a.out
            .as_ref()
            .map_or("-".into(), |p| p.display().to_string())
    );
    cfg.validate()?;
    if a.grid_points < 2 {
        return Err(usage("--grid-points must be at least 2"));
    }
    let rotinv = solve_rot_invariant_threshold(&cfg)?;
    let mut w = csv::Writer::from_writer(sink(a.out.as_deref())?);
    let csv_fail = |e: csv::Error| usage(e.to_string());
    w.write_record([
        "mu",
        "rho_critical",
        "chi_hat_1",
        "chi_hat_2",
        "eta",
        "rho_rotinv",
        "status",
    ])
    .map_err(csv_fail)?;
    let mut failed = 0;
    for mu in uniform_mu_grid(a.grid_points) {
        let row = match solve_bi_orthogonal_threshold(mu, &cfg) {
            Ok(s) => [
                format_g17(mu),
                format_g17(s.rho_critical),
                format_g17(s.chi_hat_1),
                format_g17(s.chi_hat_2),
                format_g17(s.eta),
                format_g17(rotinv.rho_critical),
                "ok".to_string(),
            ],
            Err(e) => {
                failed += 1;
                let nan = "nan".to_string();
                [
                    format_g17(mu),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    format_g17(rotinv.rho_critical),
                    e.to_string(),
                ]
            }
        };
        w.write_record(&row).map_err(csv_fail)?;
    }
    w.flush().map_err(|e| io_failure(a.out.as_deref(), e))?;
    if failed > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{failed} grid point(s) did not converge"),
        });
    }
    Ok(())
}

/// Parses `a,b,start:stop:step,...`. Range values are rounded to 12 decimals
/// so `0.1:0.4:0.02` yields the decimal grid rather than accumulated error.
fn parse_list(spec: &str) -> std::result::Result<Vec<f64>, Failure> {
    let bad = |t: &str| usage(format!("bad list entry {t:?} in {spec:?}"));
    let mut out = Vec::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = token.split(':').collect();
        match parts.as_slice() {
            [v] => out.push(v.parse().map_err(|_| bad(token))?),
            [start, stop, step] => {
                let (start, stop, step): (f64, f64, f64) = (
                    start.parse().map_err(|_| bad(token))?,
                    stop.parse().map_err(|_| bad(token))?,
                    step.parse().map_err(|_| bad(token))?,
                );
                if !(step > 0.0) || stop < start {
                    return Err(bad(token));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                out.extend((0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12));
            }
            _ => return Err(bad(token)),
        }
    }
    if out.is_empty() {
        return Err(usage(format!("empty list {spec:?}")));
    }
    Ok(out)
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let n_values = parse_list(&a.n_list)?
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && v >= 0.0 {
                Ok(v as usize)
            } else {
                Err(usage(format!("N must be an integer, got {v}")))
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rho_values = parse_list(&a.rho_list)?;
    let mut cfg = ExperimentConfig::new(a.kind, a.mu, n_values, rho_values, a.trials, a.seed)
        .map_err(|e| usage(e.to_string()))?;
    cfg.recovery_tol = a.recovery_tol;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = a
        .manifest
        .clone()
        .or_else(|| a.out.as_ref().map(|p| p.with_extension("manifest.json")));
    eprintln!(
        "config: command=simulate {} out={} manifest={}",
        serde_json::to_string(&cfg).map_err(|e| usage(e.to_string()))?,
        a.out
            .as_ref()
            .map_or("-".into(), |p| p.display().to_string()),
        manifest
            .as_ref()
            .map_or("-".into(), |p| p.display().to_string())
    );

    let run = experiment::simulate(&cfg)?;
    match &a.out {
        Some(p) => write_curves_csv(p, &run.curves)?,
        None => write_curves(io::stdout().lock(), &run.curves).map_err(|e| io_failure(None, e))?,
    }
    if let Some(m) = &manifest {
        write_manifest(m, &Manifest::new(&run, None))?;
    }
    let flagged = run.flagged_count();
    if flagged > 0 {
        for f in run.failures.iter().filter(|f| f.flagged) {
            eprintln!(
                "flagged: N={} rho={} lp_failures={}",
                f.n,
                format_g17(f.rho),
                f.lp_failures
            );
        }
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{flagged} point(s) exceeded the LP failure budget"),
        });
    }
    Ok(())
}

fn cmd_extrapolate(a: &ExtrapolateArgs) -> CmdResult {
    eprintln!(
        "config: command=extrapolate curves={} out={}",
        a.curves.display(),
        a.out
            .as_ref()
            .map_or("-".into(), |p| p.display().to_string())
    );
    let curves = read_curves_csv(&a.curves)?;
    let first = curves
        .first()
        .ok_or_else(|| usage("curves file has no rows"))?;
    let (kind, mu) = (first.kind, first.mu);
    if curves.iter().any(|c| c.kind != kind || c.mu != mu) {
        return Err(usage(
            "curves file mixes kinds or mu values; split it first",
        ));
    }
    let (points, fit) = extrapolate_curves(&curves)?;
    for p in &points {
        eprintln!(
            "N={} rho_c={} stderr={}",
            p.n,
            format_g17(p.rho_c),
            format_g17(p.stderr)
        );
    }
    eprintln!(
        "intercept={} stderr={} reduced_chi2={}",
        format_g17(fit.intercept),
        format_g17(fit.intercept_stderr),
        format_g17(fit.reduced_chi2)
    );
    match &a.out {
        Some(p) => write_fit_csv(p, kind, mu, &fit)?,
        None => write_fit(io::stdout().lock(), kind, mu, &fit).map_err(|e| io_failure(None, e))?,
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![a.suite.parse().map_err(|e: Error| usage(e.to_string()))?]
    };
    eprintln!(
        "config: command=verify suites={}",
        suites
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(",")
    );
    let mut failed = 0;
    for suite in suites {
        let report = run_suite(suite)?;
        print!("{report}");
        failed += report.checks.iter().filter(|c| !c.passed()).count();
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{failed} check(s) exceeded their tolerance"),
        });
    }
    Ok(())
}
