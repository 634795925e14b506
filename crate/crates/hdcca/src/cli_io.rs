//! Data ingestion, simulation configs, report files and the command bodies
//! behind the `hdcca` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::inference::{analyze, histogram, AnalysisReport, AnalyzeOptions, Histogram, InferenceError, SpikeReport};
use crate::linalg_cca::{demean_rows, pca_spectrum, sample_correlations, CanonicalBasis, CcaError};
use crate::master::{interlaces, master_roots, MasterError, MasterInputs};
use crate::simulate::{mc_angles, mc_curve, seeded_rng, McSummary, NoiseLaw, SignalMode, SimError, SimSpec, Stat};
use crate::wachter::AsymptoticRegime;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: cannot parse {value:?} at row {row}, column {col}")]
    ParseError {
        path: String,
        row: usize,
        col: usize,
        value: String,
    },
    #[error("{path}: missing value at row {row}, column {col}")]
    MissingValue { path: String, row: usize, col: usize },
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        path: String,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{path}: no numeric data")]
    Empty { path: String },
    #[error("sample counts differ: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    RowsAreVariables,
    RowsAreSamples,
}

/// Numeric panel stored as variables x samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub values: DMatrix<f64>,
    pub row_labels: Option<Vec<String>>,
    pub demeaned: bool,
}

const MISSING: [&str; 7] = ["", "na", "nan", "null", "none", ".", "?"];

fn is_missing(field: &str) -> bool {
    MISSING.contains(&field.trim().to_ascii_lowercase().as_str())
}

fn is_number(field: &str) -> bool {
    field.trim().parse::<f64>().map(|v| v.is_finite()).unwrap_or(false)
}

/// Reads a numeric CSV with an optional header row and an optional leading
/// label column.
pub fn load_csv(path: &Path, orientation: Orientation, demean: bool) -> Result<DataMatrix, LoadError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: p.clone(), source })?;
    parse_csv(&text, &p, orientation, demean)
}

/// [`load_csv`] on in-memory text; `name` is used in error messages.
pub fn parse_csv(text: &str, name: &str, orientation: Orientation, demean: bool) -> Result<DataMatrix, LoadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| LoadError::Csv {
            path: name.to_string(),
            source,
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect());
    }
    let empty = || LoadError::Empty { path: name.to_string() };
    let first = records.first().ok_or_else(empty)?;
    let numeric_or_missing = |f: &String| is_number(f) || is_missing(f);
    let header = first.iter().skip(1).any(|f| !numeric_or_missing(f))
        || (!numeric_or_missing(&first[0]) && records.get(1).is_some_and(|r| is_number(&r[0])));
    let body_start = usize::from(header);
    let body = &records[body_start..];
    let first_body = body.first().ok_or_else(empty)?;
    let label_col = !numeric_or_missing(&first_body[0]);
    let skip = usize::from(label_col);
    let width = first_body.len() - skip;
    if width == 0 {
        return Err(empty());
    }

    let mut grid = DMatrix::zeros(body.len(), width);
    let mut labels = Vec::new();
    for (i, rec) in body.iter().enumerate() {
        let row = i + 1 + body_start;
        if rec.len() != width + skip {
            return Err(LoadError::RaggedRow {
                path: name.to_string(),
                row,
                found: rec.len(),
                expected: width + skip,
            });
        }
        if label_col {
            labels.push(rec[0].clone());
        }
        for (j, f) in rec[skip..].iter().enumerate() {
            let col = j + 1 + skip;
            if is_missing(f) {
                return Err(LoadError::MissingValue {
                    path: name.to_string(),
                    row,
                    col,
                });
            }
            grid[(i, j)] = f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| LoadError::ParseError {
                path: name.to_string(),
                row,
                col,
                value: f.clone(),
            })?;
        }
    }
    let header_labels = header.then(|| first[skip..].to_vec());
    let (mut values, row_labels) = match orientation {
        Orientation::RowsAreVariables => (grid, label_col.then_some(labels)),
        Orientation::RowsAreSamples => (grid.transpose(), header_labels),
    };
    if demean {
        demean_rows(&mut values);
    }
    Ok(DataMatrix {
        values,
        row_labels,
        demeaned: demean,
    })
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("check failed: {0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Regime(_) => 3,
            CliError::Numerical(_) | CliError::Violation(_) => 4,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CcaError> for CliError {
    fn from(e: CcaError) -> Self {
        match e {
            CcaError::SampleMismatch { .. } | CcaError::Empty(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Cca(c) => c.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Spec(s) => CliError::Input(s.to_string()),
            SimError::Cca(c) => c.into(),
            SimError::Wachter(w) => CliError::Regime(w.to_string()),
        }
    }
}

impl From<MasterError> for CliError {
    fn from(e: MasterError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Formats `x` with 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("valid float");
    format!("{rounded}")
}

/// Small CSV builder with fixed formatting.
struct Table {
    out: String,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            out: columns.join(",") + "\n",
        }
    }

    fn row(&mut self, fields: &[String]) {
        self.out.push_str(&fields.join(","));
        self.out.push('\n');
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, &self.out).map_err(|e| io_err(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct AnalyzeFlags {
    pub orientation: Orientation,
    pub options: AnalyzeOptions,
    pub pca: bool,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
}

pub const SPIKE_COLUMNS: [&str; 10] = [
    "index",
    "lambda",
    "rho_sq",
    "rho_abs",
    "theta_x_deg",
    "theta_y_deg",
    "sin2_x",
    "sin2_y",
    "method",
    "gate_passed",
];

fn spike_table(spikes: &[SpikeReport]) -> Table {
    let mut t = Table::new(&SPIKE_COLUMNS);
    for s in spikes {
        t.row(&[
            s.index.to_string(),
            fmt_num(s.lambda),
            fmt_num(s.rho_sq_hat),
            fmt_num(s.rho_abs),
            fmt_num(s.theta_x_deg),
            fmt_num(s.theta_y_deg),
            fmt_num(s.sin2_x),
            fmt_num(s.sin2_y),
            s.method.label().to_string(),
            s.gate_passed.to_string(),
        ]);
    }
    t
}

fn write_histogram(hist: &Histogram, dir: &Path) -> Result<(), CliError> {
    let mut t = Table::new(&["bin_left", "bin_right", "count", "wachter_density"]);
    for b in &hist.bins {
        t.row(&[fmt_num(b.left), fmt_num(b.right), b.count.to_string(), fmt_num(b.wachter_density)]);
    }
    t.write(&dir.join("histogram.csv"))?;
    let mut o = Table::new(&["x", "density"]);
    for &(x, d) in &hist.overlay {
        o.row(&[fmt_num(x), fmt_num(d)]);
    }
    o.write(&dir.join("wachter_overlay.csv"))
}

fn write_values(path: &Path, column: &str, values: &[f64]) -> Result<(), CliError> {
    let mut t = Table::new(&["index", column]);
    for (i, v) in values.iter().enumerate() {
        t.row(&[(i + 1).to_string(), fmt_num(*v)]);
    }
    t.write(path)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), CliError> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    };
    let text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Numerical(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Serialize)]
struct AnalyzeBody<'a> {
    u_labels: &'a Option<Vec<String>>,
    v_labels: &'a Option<Vec<String>>,
    demeaned: bool,
    gate_multiplier: f64,
    report: &'a AnalysisReport,
}

/// Loads two panels, runs the spike analysis and writes the report files.
/// Returns the report; a regime violation is reported after the files are written.
pub fn cmd_analyze(u_path: &Path, v_path: &Path, flags: &AnalyzeFlags) -> Result<AnalysisReport, CliError> {
    let u = load_csv(u_path, flags.orientation, false)?;
    let v = load_csv(v_path, flags.orientation, false)?;
    let (su, sv) = (u.values.ncols(), v.values.ncols());
    if su != sv {
        return Err(LoadError::ShapeMismatch { left: su, right: sv }.into());
    }
    let report = analyze(&u.values, &v.values, &flags.options)?;
    let dir = &flags.out_dir;
    ensure_dir(dir)?;
    let body = AnalyzeBody {
        u_labels: &u.row_labels,
        v_labels: &v.row_labels,
        demeaned: flags.options.demean,
        gate_multiplier: flags.options.gate_multiplier,
        report: &report,
    };
    write_json(&dir.join("report.json"), "analysis", &body)?;
    if flags.format == OutputFormat::Csv {
        write_values(&dir.join("correlations.csv"), "lambda", &report.correlations)?;
        write_histogram(&report.histogram, dir)?;
        spike_table(&report.spikes).write(&dir.join("spikes.csv"))?;
        if flags.pca {
            write_values(&dir.join("pca_spectrum_u.csv"), "eigenvalue", &pca_spectrum(&u.values, flags.options.demean))?;
            write_values(&dir.join("pca_spectrum_v.csv"), "eigenvalue", &pca_spectrum(&v.values, flags.options.demean))?;
        }
    }
    if let Err(e) = AsymptoticRegime::from_dims(u.values.nrows(), v.values.nrows(), su) {
        return Err(CliError::Regime(e.to_string()));
    }
    Ok(report)
}

/// Spike table rounded to two decimals for the terminal.
pub fn format_spike_table(spikes: &[SpikeReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:>7} {:>7} {:>7} {:>8} {:>8} {:>7} {:>7} {:>12} {:>5}",
        "index", "lambda", "rho_sq", "|rho|", "theta_x", "theta_y", "sin2_x", "sin2_y", "method", "gate"
    );
    for s in spikes {
        let _ = writeln!(
            out,
            "{:>5} {:>7.2} {:>7.2} {:>7.2} {:>8.2} {:>8.2} {:>7.2} {:>7.2} {:>12} {:>5}",
            s.index,
            s.lambda,
            s.rho_sq_hat,
            s.rho_abs,
            s.theta_x_deg,
            s.theta_y_deg,
            s.sin2_x,
            s.sin2_y,
            s.method.label(),
            s.gate_passed
        );
    }
    out
}

/// Writes the PCA spectrum of one panel.
pub fn cmd_pca(path: &Path, orientation: Orientation, demean: bool, out_dir: &Path) -> Result<Vec<f64>, CliError> {
    let data = load_csv(path, orientation, false)?;
    let spectrum = pca_spectrum(&data.values, demean);
    ensure_dir(out_dir)?;
    write_values(&out_dir.join("pca_spectrum.csv"), "eigenvalue", &spectrum)?;
    Ok(spectrum)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid simulation spec: {0}")]
    Spec(String),
}

/// A simulation spec plus how to run it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub name: String,
    pub spec: SimSpec,
    pub replications: usize,
    /// When set, a single-signal curve is simulated at each squared correlation.
    pub rho_sq_grid: Option<Vec<f64>>,
    pub bins: Option<usize>,
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    if v.trim().is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|x| x.trim().parse::<f64>().ok().filter(|f| f.is_finite())).collect()
}

fn parse_noise(v: &str) -> Option<NoiseLaw> {
    let v = v.trim().to_ascii_lowercase();
    match v.as_str() {
        "gaussian" | "normal" => Some(NoiseLaw::Gaussian),
        "uniform" => Some(NoiseLaw::Uniform),
        _ => {
            let df = v.strip_prefix("student_t:").or_else(|| v.strip_prefix("t:"))?;
            df.trim().parse().ok().map(|df| NoiseLaw::StudentT { df })
        }
    }
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

impl SimConfig {
    /// Parses the flat `key = value` format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let (mut k, mut m, mut s) = (None, None, None);
        let mut strengths = Vec::new();
        let mut noise = NoiseLaw::Gaussian;
        let mut mode = "iid-gaussian".to_string();
        let (mut sx, mut sy) = (None, None);
        let mut variances = Vec::new();
        let mut mixing = false;
        let mut seed = 0u64;
        let mut replications = 1usize;
        let mut grid = None;
        let mut bins = None;
        let mut name = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue {
                line: line_no,
                key: key.to_string(),
                value: value.to_string(),
            };
            let count = || value.parse::<usize>().map_err(|_| bad());
            match key {
                "name" => name = value.to_string(),
                "k" => k = Some(count()?),
                "m" => m = Some(count()?),
                "s" => s = Some(count()?),
                "signal_strengths" => strengths = parse_list(value).ok_or_else(bad)?,
                "noise_law" => noise = parse_noise(value).ok_or_else(bad)?,
                "signal_mode" => mode = value.to_ascii_lowercase(),
                "signal_x" => sx = Some(parse_list(value).ok_or_else(bad)?),
                "signal_y" => sy = Some(parse_list(value).ok_or_else(bad)?),
                "signal_variances" => variances = parse_list(value).ok_or_else(bad)?,
                "mixing" => mixing = value.parse().map_err(|_| bad())?,
                "seed" => seed = value.parse().map_err(|_| bad())?,
                "replications" => replications = count()?,
                "rho_sq_grid" => grid = Some(parse_list(value).ok_or_else(bad)?),
                "bins" => bins = Some(count()?),
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
            }
        }
        let signal_mode = match mode.as_str() {
            "iid-gaussian" => SignalMode::IidGaussian,
            "iid-nongaussian" => SignalMode::IidNonGaussian,
            "sinusoid" => SignalMode::Sinusoid,
            "rotated-pair" => SignalMode::RotatedPair,
            "deterministic" => SignalMode::Deterministic {
                x: sx.ok_or(ConfigError::Missing("signal_x"))?,
                y: sy.ok_or(ConfigError::Missing("signal_y"))?,
            },
            other => {
                return Err(ConfigError::BadValue {
                    line: 0,
                    key: "signal_mode".into(),
                    value: other.into(),
                })
            }
        };
        let spec = SimSpec {
            k: k.ok_or(ConfigError::Missing("k"))?,
            m: m.ok_or(ConfigError::Missing("m"))?,
            s: s.ok_or(ConfigError::Missing("s"))?,
            signal_strengths: strengths,
            noise_law: noise,
            signal_mode,
            signal_variances: variances,
            mixing,
            seed,
        };
        if grid.is_none() {
            spec.validate().map_err(|e| ConfigError::Spec(e.to_string()))?;
        }
        Ok(Self {
            name,
            spec,
            replications,
            rho_sq_grid: grid,
            bins,
        })
    }

    /// Inverse of [`SimConfig::parse`].
    pub fn to_text(&self) -> String {
        let sp = &self.spec;
        let mut out = String::new();
        if !self.name.is_empty() {
            let _ = writeln!(out, "name = {}", self.name);
        }
        let _ = writeln!(out, "k = {}\nm = {}\ns = {}", sp.k, sp.m, sp.s);
        let _ = writeln!(out, "signal_strengths = {}", list_text(&sp.signal_strengths));
        let _ = writeln!(out, "noise_law = {}", sp.noise_law.label());
        let _ = writeln!(out, "signal_mode = {}", sp.signal_mode.label());
        if let SignalMode::Deterministic { x, y } = &sp.signal_mode {
            let _ = writeln!(out, "signal_x = {}\nsignal_y = {}", list_text(x), list_text(y));
        }
        if !sp.signal_variances.is_empty() {
            let _ = writeln!(out, "signal_variances = {}", list_text(&sp.signal_variances));
        }
        let _ = writeln!(out, "mixing = {}\nseed = {}", sp.mixing, sp.seed);
        let _ = writeln!(out, "replications = {}", self.replications);
        if let Some(g) = &self.rho_sq_grid {
            let _ = writeln!(out, "rho_sq_grid = {}", list_text(g));
        }
        if let Some(b) = self.bins {
            let _ = writeln!(out, "bins = {b}");
        }
        out
    }
}

const PRESETS: [(&str, &str); 17] = [
    ("fig1", include_str!("../presets/fig1.cfg")),
    ("fig4", include_str!("../presets/fig4.cfg")),
    ("fig4_t3", include_str!("../presets/fig4_t3.cfg")),
    ("fig5", include_str!("../presets/fig5.cfg")),
    ("fig5_covariance", include_str!("../presets/fig5_covariance.cfg")),
    ("fig7", include_str!("../presets/fig7.cfg")),
    ("fig8", include_str!("../presets/fig8.cfg")),
    ("fig9", include_str!("../presets/fig9.cfg")),
    ("fig10", include_str!("../presets/fig10.cfg")),
    ("desk", include_str!("../presets/desk.cfg")),
    ("desk_uniform", include_str!("../presets/desk_uniform.cfg")),
    ("desk_t3", include_str!("../presets/desk_t3.cfg")),
    ("desk_sinusoid", include_str!("../presets/desk_sinusoid.cfg")),
    ("desk_multi", include_str!("../presets/desk_multi.cfg")),
    ("desk_curve", include_str!("../presets/desk_curve.cfg")),
    ("noise_only", include_str!("../presets/noise_only.cfg")),
    ("full", include_str!("../presets/full.cfg")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load_preset(name: &str) -> Result<SimConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    SimConfig::parse(text)
}

#[derive(Debug, Clone, Default)]
pub struct SimulateFlags {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub bins: Option<usize>,
    pub out_dir: PathBuf,
    pub format: Option<OutputFormat>,
}

/// What [`cmd_simulate`] produced.
#[derive(Debug, Clone)]
pub enum SimulateOutcome {
    Curve(Vec<crate::simulate::CurvePoint>),
    Summary(McSummary),
}

fn curve_table(points: &[crate::simulate::CurvePoint], pick: impl Fn(&crate::simulate::CurvePoint) -> (f64, &Stat)) -> Table {
    let mut t = Table::new(&["rho_sq", "theta_theory", "theta_mean", "band_lo", "band_hi"]);
    for p in points {
        let (theory, stat) = pick(p);
        t.row(&[
            fmt_num(p.rho_sq),
            fmt_num(theory),
            fmt_num(stat.mean),
            fmt_num(stat.band_lo),
            fmt_num(stat.band_hi),
        ]);
    }
    t
}

fn mean_of(values: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn signals_table(summary: &McSummary) -> Table {
    let mut t = Table::new(&[
        "signal",
        "strength",
        "rho_sq",
        "rank",
        "z_rho",
        "lambda_mean",
        "theta_x_theory",
        "theta_x_mean",
        "theta_x_band_lo",
        "theta_x_band_hi",
        "theta_y_theory",
        "theta_y_mean",
        "theta_y_band_lo",
        "theta_y_band_hi",
        "theta_alpha_mean",
        "rho_sq_closed_mean",
        "rho_sq_empirical_mean",
    ]);
    for (q, s) in summary.signals.iter().enumerate() {
        t.row(&[
            (q + 1).to_string(),
            fmt_num(s.strength),
            fmt_num(s.rho_sq),
            s.rank.to_string(),
            fmt_num(s.theory.map_or(f64::NAN, |p| p.z_rho)),
            fmt_num(s.lambda.mean),
            fmt_num(s.theta_x_theory),
            fmt_num(s.theta_x.mean),
            fmt_num(s.theta_x.band_lo),
            fmt_num(s.theta_x.band_hi),
            fmt_num(s.theta_y_theory),
            fmt_num(s.theta_y.mean),
            fmt_num(s.theta_y.band_lo),
            fmt_num(s.theta_y.band_hi),
            fmt_num(s.theta_alpha.mean),
            fmt_num(mean_of(&s.rho_sq_closed)),
            fmt_num(mean_of(&s.rho_sq_empirical)),
        ]);
    }
    t
}

/// Runs a simulation config and writes its output files.
///
/// Curve configs write `theta_x_curve.csv`, `theta_y_curve.csv` and
/// `theta_alpha_curve.csv`; the others write `signals.csv`, the spectrum of
/// the first replication with its histogram, and `summary.json`.
pub fn cmd_simulate(config: &SimConfig, flags: &SimulateFlags) -> Result<SimulateOutcome, CliError> {
    let mut spec = config.spec.clone();
    if let Some(seed) = flags.seed {
        spec.seed = seed;
    }
    let reps = flags.replications.unwrap_or(config.replications);
    let dir = &flags.out_dir;
    ensure_dir(dir)?;
    let format = flags.format.unwrap_or(OutputFormat::Csv);
    if let Some(grid) = &config.rho_sq_grid {
        let points = mc_curve(&spec, grid, reps)?;
        if format == OutputFormat::Csv {
            curve_table(&points, |p| (p.theta_x_theory, &p.theta_x)).write(&dir.join("theta_x_curve.csv"))?;
            curve_table(&points, |p| (p.theta_y_theory, &p.theta_y)).write(&dir.join("theta_y_curve.csv"))?;
            curve_table(&points, |p| (p.theta_x_theory, &p.theta_alpha)).write(&dir.join("theta_alpha_curve.csv"))?;
        }
        #[derive(Serialize)]
        struct CurveBody<'a> {
            points: &'a [crate::simulate::CurvePoint],
        }
        write_json(&dir.join("curve.json"), "simulation-curve", &CurveBody { points: &points })?;
        return Ok(SimulateOutcome::Curve(points));
    }
    if let Err(e) = AsymptoticRegime::from_dims(spec.k, spec.m, spec.s) {
        return Err(CliError::Regime(e.to_string()));
    }
    let summary = mc_angles(&spec, reps)?;
    if format == OutputFormat::Csv {
        signals_table(&summary).write(&dir.join("signals.csv"))?;
        write_values(&dir.join("correlations.csv"), "lambda", &summary.first_correlations)?;
        let hist = histogram(
            &summary.first_correlations,
            flags.bins.or(config.bins),
            summary.regime.as_ref(),
        );
        write_histogram(&hist, dir)?;
    }
    write_json(&dir.join("summary.json"), "simulation", &summary)?;
    Ok(SimulateOutcome::Summary(summary))
}

/// Outcome of the exact master-equation check on one random instance.
#[derive(Debug, Clone, Serialize)]
pub struct MasterCheckReport {
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub seed: u64,
    pub repeated: bool,
    /// Squared noise cosines that occur more than once.
    pub repeated_cosines_sq: Vec<f64>,
    pub root_count: usize,
    pub max_discrepancy: f64,
    pub interlacing: bool,
    /// Roots placed directly at a repeated or decoupled noise cosine.
    pub pinned: Vec<f64>,
    pub roots: Vec<f64>,
    pub eigen: Vec<f64>,
}

impl MasterCheckReport {
    pub fn passed(&self) -> bool {
        self.root_count == self.k && self.max_discrepancy < 1e-9 && self.interlacing
    }
}

/// Orthonormal `S x S` matrix from the QR factor of a Gaussian matrix.
fn random_orthogonal<R: Rng>(rng: &mut R, s: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(s, s, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    g.qr().q()
}

/// Random instance whose noise rows have prescribed canonical cosines, so
/// repeated values can be forced. Returns `U`, `V` and the noise basis.
pub fn constructed_instance<R: Rng>(
    rng: &mut R,
    m: usize,
    s: usize,
    cosines: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>, CanonicalBasis) {
    let p = cosines.len();
    let n = m - 1;
    let o = random_orthogonal(rng, s);
    let mut u_basis = DMatrix::zeros(s, p);
    let mut v_basis = DMatrix::zeros(s, n);
    for (i, &c) in cosines.iter().enumerate() {
        let sn = (1.0 - c * c).max(0.0).sqrt();
        u_basis.set_column(i, &o.column(i));
        v_basis.set_column(i, &(o.column(i) * c + o.column(p + i) * sn));
    }
    for j in p..n {
        v_basis.set_column(j, &o.column(p + j));
    }
    let u_star = DMatrix::from_fn(1, s, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let mut v_star = DMatrix::from_fn(1, s, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    v_star += &u_star * 0.8;
    let mut u = DMatrix::zeros(p + 1, s);
    let mut v = DMatrix::zeros(m, s);
    u.set_row(0, &u_star.row(0));
    v.set_row(0, &v_star.row(0));
    for i in 0..p {
        u.set_row(i + 1, &u_basis.column(i).transpose());
    }
    for j in 0..n {
        v.set_row(j + 1, &v_basis.column(j).transpose());
    }
    let basis = CanonicalBasis {
        u_basis,
        v_basis,
        cosines: cosines.to_vec(),
    };
    (u, v, basis)
}

/// Compares master-equation roots with a direct eigensolve on a random
/// instance. With `repeated`, the two leading noise cosines coincide.
pub fn cmd_master_check(seed: u64, k: usize, m: usize, s: usize, repeated: bool) -> Result<MasterCheckReport, CliError> {
    let (k, m) = if k <= m { (k, m) } else { (m, k) };
    if let Err(e) = AsymptoticRegime::from_dims(k, m, s) {
        return Err(CliError::Regime(e.to_string()));
    }
    if k < 2 || (repeated && k < 3) || s < 2 * m {
        return Err(CliError::Input(format!(
            "master-check needs K >= {} and S >= 2M, got K={k}, M={m}, S={s}",
            if repeated { 3 } else { 2 }
        )));
    }
    let mut rng = seeded_rng(seed, 0);
    let mut cosines: Vec<f64> = (0..k - 1).map(|_| rng.random_range(0.05..0.95)).collect();
    cosines.sort_by(|a, b| b.total_cmp(a));
    if repeated {
        cosines[1] = cosines[0];
    }
    let (u, v, basis) = constructed_instance(&mut rng, m, s, &cosines);
    let inputs = if repeated {
        let us: Vec<f64> = u.row(0).iter().copied().collect();
        let vs: Vec<f64> = v.row(0).iter().copied().collect();
        MasterInputs::from_parts(&us, &vs, &basis)
    } else {
        MasterInputs::from_data(&u, &v)?.0
    };
    let solved = master_roots(&inputs)?;
    let eigen = sample_correlations(&u, &v)?;
    let max_discrepancy = solved
        .roots
        .iter()
        .zip(&eigen)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let interlacing = interlaces(&solved.roots, &solved.intermediate, &inputs.cosines, 1e-12);
    let report = MasterCheckReport {
        k,
        m,
        s,
        seed,
        repeated,
        repeated_cosines_sq: inputs
            .cosines
            .windows(2)
            .filter(|w| (w[0] - w[1]).abs() < 1e-12)
            .map(|w| w[0] * w[0])
            .collect(),
        root_count: solved.roots.len(),
        max_discrepancy,
        interlacing,
        pinned: solved.pinned,
        roots: solved.roots,
        eigen,
    };
    if !report.passed() {
        return Err(CliError::Violation(format!(
            "max discrepancy {:e}, interlacing {}, {} of {} roots",
            report.max_discrepancy, report.interlacing, report.root_count, report.k
        )));
    }
    Ok(report)
}
