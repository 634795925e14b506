mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use hdcca::cli_io::{
    cmd_analyze, cmd_master_check, cmd_pca, cmd_simulate, fmt_num, format_spike_table, load_preset, parse_csv,
    preset_names, preset_text, AnalyzeFlags, CliError, ConfigError, LoadError, Orientation, OutputFormat, SimConfig,
    SimulateFlags, SimulateOutcome, SPIKE_COLUMNS,
};
use hdcca::inference::AnalyzeOptions;
use hdcca::simulate::{NoiseLaw, SignalMode};
use nalgebra::DMatrix;
use proptest::prelude::*;
use tempfile::TempDir;

fn write_matrix(path: &Path, m: &DMatrix<f64>) {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).unwrap();
}

fn analyze_flags(dir: &Path) -> AnalyzeFlags {
    AnalyzeFlags {
        orientation: Orientation::RowsAreVariables,
        options: AnalyzeOptions::default(),
        pca: true,
        out_dir: dir.to_path_buf(),
        format: OutputFormat::Csv,
    }
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn plain_numeric_csv() {
    let d = parse_csv("1,2,3\n4,5,6\n", "t", Orientation::RowsAreVariables, false).unwrap();
    assert_eq!(d.values, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    assert!(d.row_labels.is_none());
}

#[test]
fn header_and_label_column() {
    let text = "name,s1,s2,s3\na,1,2,3\nb,4,5,6\n";
    let d = parse_csv(text, "t", Orientation::RowsAreVariables, false).unwrap();
    assert_eq!(d.values.shape(), (2, 3));
    assert_eq!(d.row_labels.unwrap(), vec!["a", "b"]);
}

#[test]
fn samples_in_rows_are_transposed() {
    let text = "x,y\n1,10\n2,20\n3,30\n4,40\n5,50\n";
    let d = parse_csv(text, "t", Orientation::RowsAreSamples, true).unwrap();
    assert_eq!(d.values.shape(), (2, 5));
    assert_eq!(d.row_labels.unwrap(), vec!["x", "y"]);
    assert!(d.demeaned);
    assert_eq!(d.values.row(0).iter().copied().collect::<Vec<_>>(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
}

#[test]
fn csv_errors_carry_locations() {
    let e = parse_csv("1,2\n3,abc\n", "f.csv", Orientation::RowsAreVariables, false).unwrap_err();
    assert!(matches!(e, LoadError::ParseError { row: 2, col: 2, ref value, .. } if value == "abc"), "{e:?}");
    let e = parse_csv("1,2\n3,NA\n", "f.csv", Orientation::RowsAreVariables, false).unwrap_err();
    assert!(matches!(e, LoadError::MissingValue { row: 2, col: 2, .. }), "{e:?}");
    let e = parse_csv("1,2\n3\n", "f.csv", Orientation::RowsAreVariables, false).unwrap_err();
    assert!(matches!(e, LoadError::RaggedRow { row: 2, found: 1, expected: 2, .. }), "{e:?}");
    let e = parse_csv("# nothing\n", "f.csv", Orientation::RowsAreVariables, false).unwrap_err();
    assert!(matches!(e, LoadError::Empty { .. }));
    assert!(e.to_string().starts_with("f.csv"));
}

#[test]
fn numbers_use_twelve_significant_digits() {
    assert_eq!(fmt_num(0.1234567890123456), "0.123456789012");
    assert_eq!(fmt_num(f64::NAN), "NaN");
    assert_eq!(fmt_num(2.0), "2");
}

#[test]
fn config_round_trip() {
    let text = "\
# comment
name = trial
k = 20
m = 30
s = 200
signal_strengths = 0.9, 0.6
noise_law = student_t:5
signal_mode = rotated-pair
signal_variances = 4
mixing = true
seed = 17
replications = 3
bins = 12
";
    let c = SimConfig::parse(text).unwrap();
    assert_eq!(c.name, "trial");
    assert_eq!((c.spec.k, c.spec.m, c.spec.s), (20, 30, 200));
    assert_eq!(c.spec.signal_strengths, vec![0.9, 0.6]);
    assert_eq!(c.spec.noise_law, NoiseLaw::StudentT { df: 5.0 });
    assert_eq!(c.spec.signal_mode, SignalMode::RotatedPair);
    assert!(c.spec.mixing);
    assert_eq!((c.spec.seed, c.replications, c.bins), (17, 3, Some(12)));
    assert_eq!(SimConfig::parse(&c.to_text()).unwrap(), c);
}

#[test]
fn config_errors() {
    assert!(matches!(SimConfig::parse("k 3"), Err(ConfigError::Syntax { line: 1 })));
    assert!(matches!(SimConfig::parse("k = 3\nfoo = 1"), Err(ConfigError::UnknownKey { line: 2, .. })));
    assert!(matches!(SimConfig::parse("k = x"), Err(ConfigError::BadValue { .. })));
    assert!(matches!(SimConfig::parse("k = 3\nm = 4"), Err(ConfigError::Missing(_))));
    assert!(matches!(load_preset("nope"), Err(ConfigError::UnknownPreset(_))));
    assert!(matches!(
        SimConfig::parse("k = 3\nm = 4\ns = 20\nsignal_strengths = 1.5"),
        Err(ConfigError::Spec(_))
    ));
}

#[test]
fn every_preset_parses_and_validates() {
    let names = preset_names();
    assert!(names.len() >= 10);
    for name in names {
        let c = load_preset(name).unwrap();
        c.spec.validate().unwrap();
        assert_eq!(c.name, name);
        assert!(preset_text(name).is_some());
    }
    let desk = load_preset("desk").unwrap();
    assert_eq!((desk.spec.k, desk.spec.m, desk.spec.s, desk.replications), (200, 300, 1600, 50));
    assert_eq!(desk.spec.seed, 0);
}

#[test]
fn analyze_writes_all_outputs() {
    let tmp = TempDir::new().unwrap();
    let mut rng = common::rng(41);
    let (u, v) = common::planted_pair(&mut rng, 40, 60, 400, 0.9);
    let (up, vp) = (tmp.path().join("u.csv"), tmp.path().join("v.csv"));
    write_matrix(&up, &u);
    write_matrix(&vp, &v);
    let out = tmp.path().join("out");
    let rep = cmd_analyze(&up, &vp, &analyze_flags(&out)).unwrap();
    assert!(rep.detected >= 1);
    for f in [
        "report.json",
        "correlations.csv",
        "histogram.csv",
        "wachter_overlay.csv",
        "spikes.csv",
        "pca_spectrum_u.csv",
        "pca_spectrum_v.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(header(&out.join("spikes.csv")), SPIKE_COLUMNS.join(","));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["kind"], "analysis");
    assert_eq!(json["report"]["k"], 40);
    let table = format_spike_table(&rep.spikes);
    assert!(table.lines().count() == rep.spikes.len() + 1);
}

#[test]
fn analyze_noise_only_and_bad_inputs() {
    let tmp = TempDir::new().unwrap();
    let mut rng = common::rng(44);
    let (u, v) = common::planted_pair(&mut rng, 30, 40, 300, 0.0);
    let (up, vp) = (tmp.path().join("u.csv"), tmp.path().join("v.csv"));
    write_matrix(&up, &u);
    write_matrix(&vp, &v);
    let out = tmp.path().join("out");
    let rep = cmd_analyze(&up, &vp, &analyze_flags(&out)).unwrap();
    assert!(rep.notes.iter().any(|n| n == "no correlations above lambda_plus"));
    assert_eq!(fs::read_to_string(out.join("spikes.csv")).unwrap().lines().count(), 1);

    let short = tmp.path().join("short.csv");
    write_matrix(&short, &common::gaussian(&mut rng, 5, 200));
    let e = cmd_analyze(&up, &short, &analyze_flags(&out)).unwrap_err();
    assert_eq!(e.exit_code(), 2);

    let wide = tmp.path().join("wide.csv");
    write_matrix(&wide, &common::gaussian(&mut rng, 280, 300));
    let e = cmd_analyze(&up, &wide, &analyze_flags(&out)).unwrap_err();
    assert!(matches!(e, CliError::Regime(_)));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn pca_command_writes_spectrum() {
    let tmp = TempDir::new().unwrap();
    let mut rng = common::rng(43);
    let p = tmp.path().join("x.csv");
    write_matrix(&p, &common::gaussian(&mut rng, 4, 50));
    let spec = cmd_pca(&p, Orientation::RowsAreVariables, true, tmp.path()).unwrap();
    assert_eq!(spec.len(), 4);
    assert!(tmp.path().join("pca_spectrum.csv").exists());
}

#[test]
fn master_check_passes_with_and_without_repeats() {
    let plain = cmd_master_check(0, 6, 9, 40, false).unwrap();
    assert!(plain.passed() && plain.max_discrepancy < 1e-9 && plain.root_count == 6);
    let rep = cmd_master_check(1, 5, 7, 30, true).unwrap();
    assert!(rep.passed());
    assert!(!rep.repeated_cosines_sq.is_empty());
    assert_eq!(cmd_master_check(0, 30, 30, 40, false).unwrap_err().exit_code(), 3);
}

fn small_config() -> SimConfig {
    SimConfig::parse("name = small\nk = 20\nm = 30\ns = 200\nsignal_strengths = 0.9\nseed = 4\nreplications = 3\n").unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let run = |sub: &str| {
        let flags = SimulateFlags {
            out_dir: tmp.path().join(sub),
            ..Default::default()
        };
        cmd_simulate(&small_config(), &flags).unwrap();
        read_all(&tmp.path().join(sub))
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        vec!["correlations.csv", "histogram.csv", "signals.csv", "summary.json", "wachter_overlay.csv"]
    );
}

#[test]
fn simulate_curve_outputs() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_config();
    cfg.rho_sq_grid = Some(vec![0.5, 0.9]);
    cfg.replications = 2;
    let flags = SimulateFlags {
        out_dir: tmp.path().to_path_buf(),
        ..Default::default()
    };
    let SimulateOutcome::Curve(points) = cmd_simulate(&cfg, &flags).unwrap() else {
        panic!("expected a curve");
    };
    assert_eq!(points.len(), 2);
    for f in ["theta_x_curve.csv", "theta_y_curve.csv", "theta_alpha_curve.csv", "curve.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    assert_eq!(header(&tmp.path().join("theta_x_curve.csv")), "rho_sq,theta_theory,theta_mean,band_lo,band_hi");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hdcca"))
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let ok = bin().args(["master-check", "--seed", "3"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let missing = bin()
        .args(["analyze", "nope_u.csv", "nope_v.csv", "--out-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let regime = bin().args(["master-check", "--k", "30", "--m", "30", "--s", "40"]).output().unwrap();
    assert_eq!(regime.status.code(), Some(3));

    let preset = bin().args(["simulate", "--preset", "nope"]).output().unwrap();
    assert_eq!(preset.status.code(), Some(2));

    let list = bin().args(["simulate", "--list-presets"]).output().unwrap();
    assert_eq!(list.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&list.stdout).contains("desk"));
}

#[test]
fn binary_simulate_runs_a_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("small.cfg");
    fs::write(&cfg, small_config().to_text()).unwrap();
    let out = tmp.path().join("out");
    let res = bin()
        .arg("simulate")
        .arg(&cfg)
        .args(["--replications", "2", "--out-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("signals.csv").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_text_round_trips(rows in 1usize..6, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let m = common::gaussian(&mut rng, rows, cols);
        let text: String = m
            .row_iter()
            .map(|r| r.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        let d = parse_csv(&text, "p", Orientation::RowsAreVariables, false).unwrap();
        prop_assert_eq!(d.values, m);
    }
}
