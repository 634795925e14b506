//! Spike detection and per-spike estimation of signal strength and angles.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg_cca::{demean_rows, sample_correlations, CcaError, TIE_TOL};
use crate::master::{asymptotic_cos2, asymptotic_r2, empirical_g, GMode, MasterError};
use crate::wachter::{sin2_to_degrees, AsymptoticRegime, WachterError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("spike {index} fails the gap gate: gap {gap:.4} < {threshold:.4}")]
    GateFailed { index: usize, gap: f64, threshold: f64 },
    #[error("spike index {0} is out of range")]
    NoSuchSpike(usize),
    #[error(transparent)]
    Wachter(#[from] WachterError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error(transparent)]
    Cca(#[from] CcaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "closed-form")]
    ClosedForm,
    #[serde(rename = "empirical-G")]
    EmpiricalG,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::EmpiricalG => "empirical-G",
        }
    }
}

/// One detected signal with its estimated strength and angles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeReport {
    /// 1-based rank of the spike.
    pub index: usize,
    pub lambda: f64,
    pub rho_sq_hat: f64,
    pub rho_abs: f64,
    pub theta_x_deg: f64,
    pub theta_y_deg: f64,
    pub sin2_x: f64,
    pub sin2_y: f64,
    pub method: Method,
    pub gate_passed: bool,
    /// `lambda_q - lambda_{q+1}`.
    pub gap: f64,
}

/// A correlation above the upper bulk edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpikeCandidate {
    pub index: usize,
    pub lambda: f64,
    pub gap: f64,
    pub gate_passed: bool,
}

/// Minimal gap `multiplier / sqrt(S)`.
pub fn gate_threshold(s: usize, multiplier: f64) -> f64 {
    multiplier / (s as f64).sqrt()
}

fn gap_at(correlations: &[f64], i: usize) -> f64 {
    correlations[i] - correlations.get(i + 1).copied().unwrap_or(0.0)
}

/// Maximal prefix of `correlations` (descending) above the upper bulk edge,
/// each flagged by the gap gate, plus warnings for gate failures.
pub fn detect_spikes(
    correlations: &[f64],
    regime: &AsymptoticRegime,
    gate_multiplier: f64,
) -> (Vec<SpikeCandidate>, Vec<String>) {
    let threshold = gate_threshold(regime.s, gate_multiplier);
    let mut spikes = Vec::new();
    let mut notes = Vec::new();
    for (i, &l) in correlations.iter().enumerate() {
        if l <= regime.lambda_plus {
            break;
        }
        let gap = gap_at(correlations, i);
        let gate_passed = gap >= threshold;
        if !gate_passed {
            notes.push(format!(
                "correlation {} ({l:.4}) is above the edge {:.4} but its gap {gap:.4} is below the gate {threshold:.4}",
                i + 1,
                regime.lambda_plus
            ));
        }
        spikes.push(SpikeCandidate {
            index: i + 1,
            lambda: l,
            gap,
            gate_passed,
        });
    }
    (spikes, notes)
}

fn oriented(regime: &AsymptoticRegime, s_x: f64, s_y: f64) -> (f64, f64) {
    if regime.swapped {
        (s_y, s_x)
    } else {
        (s_x, s_y)
    }
}

/// Estimate from the closed-form inversion of the spike location.
///
/// `index`, `gate_passed` and `gap` are left for the caller to fill.
pub fn estimate_spike_closed_form(lambda: f64, regime: &AsymptoticRegime) -> Result<SpikeReport, InferenceError> {
    let rho_sq = regime.rho2_from_z(lambda)?;
    let (sx, sy) = regime.sin2_angles(rho_sq)?;
    let (sin2_x, sin2_y) = oriented(regime, sx, sy);
    Ok(SpikeReport {
        index: 0,
        lambda,
        rho_sq_hat: rho_sq,
        rho_abs: rho_sq.sqrt(),
        theta_x_deg: sin2_to_degrees(sin2_x),
        theta_y_deg: sin2_to_degrees(sin2_y),
        sin2_x,
        sin2_y,
        method: Method::ClosedForm,
        gate_passed: false,
        gap: 0.0,
    })
}

/// Estimate for spike `q` (1-based) that replaces the noise resolvent by
/// the sum over the correlations below it, without checking the gate.
pub fn estimate_spike_empirical_ungated(
    correlations: &[f64],
    q: usize,
    regime: &AsymptoticRegime,
) -> Result<SpikeReport, InferenceError> {
    if q == 0 || q > correlations.len() {
        return Err(InferenceError::NoSuchSpike(q));
    }
    let lambda = correlations[q - 1];
    if q == correlations.len() {
        return Err(MasterError::PoleProximity { z: lambda, pole: lambda }.into());
    }
    let g = empirical_g(lambda, correlations, regime.s, GMode::Shifted(q + 1))?;
    let r_sq = asymptotic_r2(lambda, &g, regime)?;
    let (cx, cy) = asymptotic_cos2(lambda, &g, r_sq, regime)?;
    let (sx, sy) = ((1.0 - cx).clamp(0.0, 1.0), (1.0 - cy).clamp(0.0, 1.0));
    let (sin2_x, sin2_y) = oriented(regime, sx, sy);
    Ok(SpikeReport {
        index: q,
        lambda,
        rho_sq_hat: r_sq,
        rho_abs: r_sq.max(0.0).sqrt(),
        theta_x_deg: sin2_to_degrees(sin2_x),
        theta_y_deg: sin2_to_degrees(sin2_y),
        sin2_x,
        sin2_y,
        method: Method::EmpiricalG,
        gate_passed: true,
        gap: gap_at(correlations, q - 1),
    })
}

/// Gated version of [`estimate_spike_empirical_ungated`].
pub fn estimate_spike_empirical(
    correlations: &[f64],
    q: usize,
    regime: &AsymptoticRegime,
    gate_multiplier: f64,
) -> Result<SpikeReport, InferenceError> {
    if q == 0 || q > correlations.len() {
        return Err(InferenceError::NoSuchSpike(q));
    }
    let gap = gap_at(correlations, q - 1);
    let threshold = gate_threshold(regime.s, gate_multiplier);
    if gap < threshold {
        return Err(InferenceError::GateFailed {
            index: q,
            gap,
            threshold,
        });
    }
    estimate_spike_empirical_ungated(correlations, q, regime)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    /// Limiting noise density at the bin centre.
    pub wachter_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: Vec<HistBin>,
    /// `(x, density)` pairs on a uniform grid over the support.
    pub overlay: Vec<(f64, f64)>,
}

/// Number of overlay samples.
pub const OVERLAY_POINTS: usize = 512;

/// Linearly interpolated quantile of an ascending slice.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Freedman-Diaconis bin count for `values`.
pub fn freedman_diaconis_bins(values: &[f64]) -> usize {
    if values.len() < 2 {
        return 1;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let range = v[v.len() - 1] - v[0];
    let width = 2.0 * iqr / (v.len() as f64).cbrt();
    if width <= 0.0 || range <= 0.0 {
        return 1;
    }
    ((range / width).ceil() as usize).clamp(1, 10_000)
}

/// Histogram of `values` with the limiting noise density overlaid.
pub fn histogram(values: &[f64], bins: Option<usize>, regime: Option<&AsymptoticRegime>) -> Histogram {
    let overlay = match regime {
        Some(r) => (0..OVERLAY_POINTS)
            .map(|i| {
                let x = r.lambda_minus + (r.lambda_plus - r.lambda_minus) * i as f64 / (OVERLAY_POINTS - 1) as f64;
                (x, r.density(x))
            })
            .collect(),
        None => Vec::new(),
    };
    if values.is_empty() {
        return Histogram {
            bins: Vec::new(),
            overlay,
        };
    }
    let n_bins = bins.unwrap_or_else(|| freedman_diaconis_bins(values)).max(1);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1e-12;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &x in values {
        let idx = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let left = lo + width * i as f64;
            let right = if i + 1 == n_bins { hi } else { lo + width * (i + 1) as f64 };
            let centre = 0.5 * (left + right);
            HistBin {
                left,
                right,
                count,
                wachter_density: regime.map(|r| r.density(centre)).unwrap_or(0.0),
            }
        })
        .collect();
    Histogram { bins, overlay }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub demean: bool,
    pub gate_multiplier: f64,
    pub bins: Option<usize>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            demean: false,
            gate_multiplier: 5.0,
            bins: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub regime: Option<AsymptoticRegime>,
    pub correlations: Vec<f64>,
    /// Number of leading correlations above the upper bulk edge.
    pub detected: usize,
    pub spikes: Vec<SpikeReport>,
    pub histogram: Histogram,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    /// Reports produced by `method`.
    pub fn by_method(&self, method: Method) -> impl Iterator<Item = &SpikeReport> {
        self.spikes.iter().filter(move |s| s.method == method)
    }
}

/// Estimates for every detected spike from a precomputed correlation list.
pub fn analyze_correlations(
    correlations: &[f64],
    regime: &AsymptoticRegime,
    options: &AnalyzeOptions,
) -> (Vec<SpikeReport>, usize, Vec<String>) {
    let (candidates, mut notes) = detect_spikes(correlations, regime, options.gate_multiplier);
    let mut reports = Vec::new();
    for cand in &candidates {
        let i = cand.index - 1;
        let tied = (i > 0 && correlations[i - 1] - correlations[i] < TIE_TOL)
            || (i + 1 < correlations.len() && correlations[i] - correlations[i + 1] < TIE_TOL);
        if tied {
            notes.push(format!("spike {} is tied with a neighbour; estimation skipped", cand.index));
            continue;
        }
        match estimate_spike_closed_form(cand.lambda, regime) {
            Ok(mut r) => {
                r.index = cand.index;
                r.gate_passed = cand.gate_passed;
                r.gap = cand.gap;
                reports.push(r);
            }
            Err(e) => notes.push(format!("spike {}: {e}", cand.index)),
        }
        if cand.gate_passed {
            match estimate_spike_empirical(correlations, cand.index, regime, options.gate_multiplier) {
                Ok(r) => reports.push(r),
                Err(e) => notes.push(format!("spike {} (empirical-G): {e}", cand.index)),
            }
        }
    }
    if candidates.is_empty() {
        notes.push("no correlations above lambda_plus".to_string());
    }
    (reports, candidates.len(), notes)
}

/// Sample CCA followed by spike detection, estimation and a histogram of the bulk.
pub fn analyze(u: &DMatrix<f64>, v: &DMatrix<f64>, options: &AnalyzeOptions) -> Result<AnalysisReport, InferenceError> {
    let (k, m, s) = (u.nrows(), v.nrows(), u.ncols());
    let mut notes = Vec::new();
    let (uc, vc);
    let (u, v) = if options.demean {
        let mut a = u.clone();
        let mut b = v.clone();
        demean_rows(&mut a);
        demean_rows(&mut b);
        uc = a;
        vc = b;
        (&uc, &vc)
    } else {
        (u, v)
    };
    let correlations = sample_correlations(u, v)?;
    let regime = match AsymptoticRegime::from_dims(k, m, s) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("regime violation: {e}"));
            None
        }
    };
    let (spikes, n_spikes) = match &regime {
        Some(r) => {
            let (reports, n, more) = analyze_correlations(&correlations, r, options);
            notes.extend(more);
            (reports, n)
        }
        None => (Vec::new(), 0),
    };
    let histogram = histogram(&correlations[n_spikes..], options.bins, regime.as_ref());
    Ok(AnalysisReport {
        k,
        m,
        s,
        regime,
        correlations,
        detected: n_spikes,
        spikes,
        histogram,
        notes,
    })
}
