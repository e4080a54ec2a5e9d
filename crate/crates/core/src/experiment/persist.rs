//! CSV and JSON persistence of curves, fits and run manifests.
//!
//! Numbers are written with 17 significant digits, so every `f64` reads back
//! bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    finite_size_extrapolate, ExperimentConfig, ExtrapolationFit, PointFailures, SimulationRun,
    SizePoint, SuccessCurve, SuccessPoint,
};
use crate::error::{Error, Result};
use crate::randmat::DictionaryKind;

pub const CURVES_FILE: &str = "curves.csv";
pub const FIT_FILE: &str = "fit.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const CURVES_HEADER: [&str; 7] = [
    "kind",
    "mu",
    "N",
    "rho",
    "trials",
    "successes",
    "success_rate",
];
const FIT_HEADER: [&str; 5] = ["kind", "mu", "abscissa", "rho_c", "stderr"];

/// C's `%.17g`: 17 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-4, 1e17)`.
pub fn format_g17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, format!("{other:?}")),
    }
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, format!("bad {name} value {raw:?}")))
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().ne(want.iter().copied()) {
        return Err(parse_err(
            path,
            format!("expected header {}", want.join(",")),
        ));
    }
    Ok(())
}

fn to_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Writes one row per point of every curve to any sink.
pub fn write_curves<W: Write>(sink: W, curves: &[SuccessCurve]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CURVES_HEADER).map_err(to_io)?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.kind.as_str().to_string(),
                format_g17(c.mu),
                c.n.to_string(),
                format_g17(p.rho),
                p.trials.to_string(),
                p.successes.to_string(),
                format_g17(p.success_rate()),
            ])
            .map_err(to_io)?;
        }
    }
    w.flush()
}

pub fn write_curves_csv(path: &Path, curves: &[SuccessCurve]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curves(std::io::BufWriter::new(file), curves).map_err(|e| Error::io(path, e))
}

/// Reads curves back, grouping consecutive rows by `(kind, mu, N)`.
pub fn read_curves_csv(path: &Path) -> Result<Vec<SuccessCurve>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    check_header(
        path,
        r.headers().map_err(|e| csv_err(path, e))?,
        &CURVES_HEADER,
    )?;
    let mut curves: Vec<SuccessCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let kind: DictionaryKind = field(path, &rec, 0, "kind")?;
        let mu: f64 = field(path, &rec, 1, "mu")?;
        let n: usize = field(path, &rec, 2, "N")?;
        let point = SuccessPoint {
            rho: field(path, &rec, 3, "rho")?,
            trials: field(path, &rec, 4, "trials")?,
            successes: field(path, &rec, 5, "successes")?,
        };
        let rate: f64 = field(path, &rec, 6, "success_rate")?;
        if point.trials == 0 || point.successes > point.trials || rate != point.success_rate() {
            return Err(parse_err(
                path,
                format!("inconsistent counts in row {rec:?}"),
            ));
        }
        match curves.last_mut() {
            Some(c) if c.kind == kind && c.mu == mu && c.n == n => c.points.push(point),
            _ => curves.push(SuccessCurve {
                kind,
                mu,
                n,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

/// Writes the per-size points of a fit and a trailing comment line with the
/// intercept and coefficients.
pub fn write_fit<W: Write>(
    sink: W,
    kind: DictionaryKind,
    mu: f64,
    fit: &ExtrapolationFit,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(FIT_HEADER).map_err(to_io)?;
    for i in 0..fit.abscissa.len() {
        w.write_record([
            kind.as_str().to_string(),
            format_g17(mu),
            format_g17(fit.abscissa[i]),
            format_g17(fit.rho_c[i]),
            format_g17(fit.stderr[i]),
        ])
        .map_err(to_io)?;
    }
    let mut sink = w.into_inner().map_err(|e| e.into_error())?;
    let coeffs: Vec<String> = fit.coeffs.iter().map(|&c| format_g17(c)).collect();
    writeln!(
        sink,
        "# intercept={} coeffs={}",
        format_g17(fit.intercept),
        coeffs.join(",")
    )?;
    sink.flush()
}

pub fn write_fit_csv(
    path: &Path,
    kind: DictionaryKind,
    mu: f64,
    fit: &ExtrapolationFit,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_fit(std::io::BufWriter::new(file), kind, mu, fit).map_err(|e| Error::io(path, e))
}

/// Reads a fit CSV. The fit is recomputed from its points and must agree
/// with the recorded coefficients.
pub fn read_fit_csv(path: &Path) -> Result<(DictionaryKind, f64, ExtrapolationFit)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    check_header(
        path,
        r.headers().map_err(|e| csv_err(path, e))?,
        &FIT_HEADER,
    )?;
    let mut meta = None;
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let kind: DictionaryKind = field(path, &rec, 0, "kind")?;
        let mu: f64 = field(path, &rec, 1, "mu")?;
        if *meta.get_or_insert((kind, mu)) != (kind, mu) {
            return Err(parse_err(path, "rows mix kinds or mu values"));
        }
        let x: f64 = field(path, &rec, 2, "abscissa")?;
        if !(x > 0.0) {
            return Err(parse_err(path, format!("abscissa {x} is not 1/N")));
        }
        points.push(SizePoint {
            n: (1.0 / x).round() as usize,
            rho_c: field(path, &rec, 3, "rho_c")?,
            stderr: field(path, &rec, 4, "stderr")?,
        });
    }
    let (kind, mu) = meta.ok_or_else(|| parse_err(path, "no fit rows"))?;

    let comment = text
        .lines()
        .find_map(|l| l.strip_prefix("# intercept="))
        .ok_or_else(|| parse_err(path, "missing '# intercept=' line"))?;
    let (intercept, coeffs) = comment
        .split_once(" coeffs=")
        .ok_or_else(|| parse_err(path, "missing coeffs"))?;
    let intercept: f64 = intercept
        .trim()
        .parse()
        .map_err(|_| parse_err(path, "bad intercept"))?;
    let coeffs = coeffs
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| parse_err(path, "bad coefficient"))?;

    let fit = finite_size_extrapolate(&points)?;
    if fit.intercept != intercept || fit.coeffs[..] != coeffs[..] {
        return Err(parse_err(
            path,
            "recorded coefficients do not match the points",
        ));
    }
    Ok((kind, mu, fit))
}

/// Summary of a fit kept in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub intercept: f64,
    pub intercept_stderr: f64,
    pub coeffs: [f64; 4],
    pub residual_norm: f64,
    pub reduced_chi2: f64,
}

impl From<&ExtrapolationFit> for FitSummary {
    fn from(f: &ExtrapolationFit) -> Self {
        Self {
            intercept: f.intercept,
            intercept_stderr: f.intercept_stderr,
            coeffs: f.coeffs,
            residual_norm: f.residual_norm,
            reduced_chi2: f.reduced_chi2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub failures: Vec<PointFailures>,
    pub fit: Option<FitSummary>,
}

impl Manifest {
    pub fn new(run: &SimulationRun, fit: Option<&ExtrapolationFit>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: run.config.clone(),
            master_seed: run.config.master_seed,
            failures: run.failures.clone(),
            fit: fit.map(FitSummary::from),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut json =
        serde_json::to_string_pretty(manifest).map_err(|e| parse_err(path, e.to_string()))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes `curves.csv`, `manifest.json` and, when given, `fit.csv` into
/// `dir`, creating it if needed. Returns the written paths.
pub fn persist_results(
    dir: &Path,
    run: &SimulationRun,
    fit: Option<&ExtrapolationFit>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let curves = dir.join(CURVES_FILE);
    write_curves_csv(&curves, &run.curves)?;
    written.push(curves);
    if let Some(fit) = fit {
        let path = dir.join(FIT_FILE);
        write_fit_csv(&path, run.config.kind, run.config.mu, fit)?;
        written.push(path);
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &Manifest::new(run, fit))?;
    written.push(manifest);
    Ok(written)
}

/// Inverse of [`persist_results`].
pub fn load_results(dir: &Path) -> Result<(SimulationRun, Option<ExtrapolationFit>)> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let curves = read_curves_csv(&dir.join(CURVES_FILE))?;
    let fit_path = dir.join(FIT_FILE);
    let fit = if fit_path.exists() {
        Some(read_fit_csv(&fit_path)?.2)
    } else {
        None
    };
    Ok((
        SimulationRun {
            config: manifest.config,
            curves,
            failures: manifest.failures,
        },
        fit,
    ))
}
