use std::fs;

use biortho_core::experiment::{
    extrapolate_curves, load_results, persist_results, read_curves_csv, read_fit_csv,
    read_manifest, write_curves_csv, write_fit_csv, PointFailures, SimulationRun, SuccessPoint,
    CURVES_FILE, FIT_FILE, MANIFEST_FILE,
};
use biortho_core::randmat::DictionaryKind;
use biortho_core::{Error, ExperimentConfig, SuccessCurve};

const SIZES: [usize; 6] = [16, 20, 24, 28, 32, 36];

/// Counts from logistic curves whose crossing drifts like `0.2 + 0.6/N`.
fn synthetic_run() -> SimulationRun {
    let rho_values: Vec<f64> = (0..13).map(|i| 0.1 + 0.02 * i as f64).collect();
    let config = ExperimentConfig::new(
        DictionaryKind::BiOrthogonal,
        0.25,
        SIZES.to_vec(),
        rho_values.clone(),
        1000,
        42,
    )
    .unwrap();
    let curves = SIZES
        .iter()
        .map(|&n| {
            let center = 0.2 + 0.6 / n as f64;
            let points = rho_values
                .iter()
                .map(|&rho| {
                    let p = 1.0 / (1.0 + (n as f64 * (rho - center)).exp());
                    SuccessPoint {
                        rho,
                        successes: (1000.0 * p).round() as u64,
                        trials: 1000,
                    }
                })
                .collect();
            SuccessCurve {
                kind: DictionaryKind::BiOrthogonal,
                mu: 0.25,
                n,
                points,
            }
        })
        .collect();
    let failures = SIZES
        .iter()
        .flat_map(|&n| {
            rho_values.iter().map(move |&rho| PointFailures {
                n,
                rho,
                lp_failures: 0,
                flagged: false,
            })
        })
        .collect();
    SimulationRun {
        config,
        curves,
        failures,
    }
}

#[test]
fn results_round_trip_through_a_directory() {
    let run = synthetic_run();
    let (_, fit) = extrapolate_curves(&run.curves).unwrap();
    assert!((fit.intercept - 0.2).abs() < 0.01, "{}", fit.intercept);

    let dir = tempfile::tempdir().unwrap();
    let written = persist_results(dir.path(), &run, Some(&fit)).unwrap();
    assert_eq!(written.len(), 3);
    for name in [CURVES_FILE, FIT_FILE, MANIFEST_FILE] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }

    let (loaded, loaded_fit) = load_results(dir.path()).unwrap();
    assert_eq!(loaded.curves, run.curves);
    assert_eq!(loaded.config, run.config);
    assert_eq!(loaded_fit.unwrap().coeffs, fit.coeffs);

    let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.master_seed, 42);
    assert_eq!(manifest.fit.unwrap().intercept, fit.intercept);
}

#[test]
fn curves_csv_is_lossless_and_stable() {
    let run = synthetic_run();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_curves_csv(&a, &run.curves).unwrap();
    let back = read_curves_csv(&a).unwrap();
    assert_eq!(back, run.curves);
    write_curves_csv(&b, &back).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 1 + SIZES.len() * 13);
}

#[test]
fn tampered_files_are_rejected() {
    let run = synthetic_run();
    let (_, fit) = extrapolate_curves(&run.curves).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let fit_path = dir.path().join("fit.csv");
    write_fit_csv(&fit_path, DictionaryKind::BiOrthogonal, 0.25, &fit).unwrap();
    let (kind, mu, back) = read_fit_csv(&fit_path).unwrap();
    assert_eq!((kind, mu), (DictionaryKind::BiOrthogonal, 0.25));
    assert_eq!(back.intercept, fit.intercept);

    // Editing one crossing changes the refit, which no longer matches the comment.
    let text = fs::read_to_string(&fit_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    let rho_c: f64 = cells[3].parse().unwrap();
    cells[3] = (rho_c + 1e-4).to_string();
    lines[1] = cells.join(",");
    fs::write(&fit_path, lines.join("\n") + "\n").unwrap();
    let tampered = read_fit_csv(&fit_path);
    assert!(matches!(tampered, Err(Error::Parse { .. })), "{tampered:?}");

    // A rate that disagrees with its counts.
    let curves_path = dir.path().join("curves.csv");
    write_curves_csv(&curves_path, &run.curves).unwrap();
    let text = fs::read_to_string(&curves_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let (head, _) = lines[1].rsplit_once(',').unwrap();
    lines[1] = format!("{head},0.123");
    fs::write(&curves_path, lines.join("\n") + "\n").unwrap();
    let tampered = read_curves_csv(&curves_path);
    assert!(matches!(tampered, Err(Error::Parse { .. })), "{tampered:?}");

    let missing = dir.path().join("absent.csv");
    assert!(matches!(read_curves_csv(&missing), Err(Error::Io { .. })));
}
