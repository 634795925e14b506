//! Synthetic data with planted canonical signals and the Monte Carlo harness.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::inference::{
    detect_spikes, estimate_spike_closed_form, estimate_spike_empirical_ungated, quantile_sorted,
};
use crate::linalg_cca::{angle_between, sample_cca, CcaError};
use crate::wachter::{sin2_to_degrees, AsymptoticRegime, SpikePrediction, WachterError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("dimensions must be positive: K={k}, M={m}, S={s}")]
    Dimension { k: usize, m: usize, s: usize },
    #[error("signal strength {0} is outside [0, 1)")]
    Strength(f64),
    #[error("signal strengths must be distinct, {0} appears twice")]
    DuplicateStrength(f64),
    #[error("{count} signals do not fit into K={k}, M={m}")]
    TooManySignals { count: usize, k: usize, m: usize },
    #[error("student-t noise needs more than 2 degrees of freedom, got {0}")]
    DegreesOfFreedom(f64),
    #[error("given signal vectors must have length S={s}, got {x} and {y}")]
    SignalLength { s: usize, x: usize, y: usize },
    #[error("given signal vectors support exactly one signal, got {0}")]
    GivenSignalCount(usize),
    #[error("invalid coordinate variance {0}")]
    Variance(f64),
    #[error("{0} variances given for K={1} coordinates")]
    VarianceCount(usize, usize),
    #[error("replication count must be positive")]
    NoReplications,
    #[error("mixing matrix is singular")]
    SingularMixing,
}

/// Law of the i.i.d. noise coordinates, always rescaled to unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NoiseLaw {
    Gaussian,
    /// Uniform on `[-1, 1]`, scaled by `sqrt(3)`.
    Uniform,
    /// Student-t with `df > 2`, scaled by `sqrt((df - 2) / df)`.
    StudentT { df: f64 },
}

impl NoiseLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseLaw::Gaussian => rng.sample(StandardNormal),
            NoiseLaw::Uniform => {
                let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
                u.sample(rng) * 3f64.sqrt()
            }
            NoiseLaw::StudentT { df } => {
                let t = StudentT::new(df).expect("df checked by validate");
                t.sample(rng) * ((df - 2.0) / df).sqrt()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseLaw::Gaussian => "gaussian".into(),
            NoiseLaw::Uniform => "uniform".into(),
            NoiseLaw::StudentT { df } => format!("student_t:{df}"),
        }
    }
}

/// How the planted signal pairs `(x, y)` are produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SignalMode {
    /// `x ~ N(0, 1)`, `y = r x + sqrt(1 - r^2) e` with Gaussian `e`.
    IidGaussian,
    /// As [`SignalMode::IidGaussian`] but drawn from the noise law.
    IidNonGaussian,
    /// One fixed pair of sample vectors.
    Deterministic { x: Vec<f64>, y: Vec<f64> },
    /// `x = sqrt(2) sin(2 pi f t / S)`, `y = r x + sqrt(1 - r^2) sqrt(2) cos(2 pi f t / S)`
    /// with frequency `f = 3 + 2q` for signal `q`.
    Sinusoid,
    /// Gaussian draws orthogonalised and scaled to length `sqrt(S)`, so the
    /// sample correlation of each pair equals its strength exactly.
    RotatedPair,
}

impl SignalMode {
    pub fn label(&self) -> &'static str {
        match self {
            SignalMode::IidGaussian => "iid-gaussian",
            SignalMode::IidNonGaussian => "iid-nongaussian",
            SignalMode::Deterministic { .. } => "deterministic",
            SignalMode::Sinusoid => "sinusoid",
            SignalMode::RotatedPair => "rotated-pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSpec {
    pub k: usize,
    pub m: usize,
    pub s: usize,
    /// Correlations `r[q]` of the planted pairs, placed on rows `q` of `U` and `V`.
    pub signal_strengths: Vec<f64>,
    pub noise_law: NoiseLaw,
    pub signal_mode: SignalMode,
    /// Variances of the leading coordinates of `U`; missing entries are 1.
    pub signal_variances: Vec<f64>,
    /// Multiply `U` by a random invertible matrix after generation.
    pub mixing: bool,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(k: usize, m: usize, s: usize, signal_strengths: Vec<f64>) -> Self {
        Self {
            k,
            m,
            s,
            signal_strengths,
            noise_law: NoiseLaw::Gaussian,
            signal_mode: SignalMode::IidGaussian,
            signal_variances: Vec::new(),
            mixing: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let (k, m, s) = (self.k, self.m, self.s);
        if k == 0 || m == 0 || s == 0 {
            return Err(SpecError::Dimension { k, m, s });
        }
        for (i, &r) in self.signal_strengths.iter().enumerate() {
            if !(0.0..1.0).contains(&r) {
                return Err(SpecError::Strength(r));
            }
            if self.signal_strengths[..i].contains(&r) {
                return Err(SpecError::DuplicateStrength(r));
            }
        }
        let q = self.signal_strengths.len();
        if q >= k || q >= m {
            return Err(SpecError::TooManySignals { count: q, k, m });
        }
        if let NoiseLaw::StudentT { df } = self.noise_law {
            if df.is_nan() || df <= 2.0 {
                return Err(SpecError::DegreesOfFreedom(df));
            }
        }
        if let SignalMode::Deterministic { x, y } = &self.signal_mode {
            if x.len() != s || y.len() != s {
                return Err(SpecError::SignalLength {
                    s,
                    x: x.len(),
                    y: y.len(),
                });
            }
            if q != 1 {
                return Err(SpecError::GivenSignalCount(q));
            }
        }
        if self.signal_variances.len() > k {
            return Err(SpecError::VarianceCount(self.signal_variances.len(), k));
        }
        if let Some(&v) = self.signal_variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(SpecError::Variance(v));
        }
        Ok(())
    }

    /// Signal indices ordered by decreasing strength, which is the order of
    /// the spikes they produce.
    pub fn rank_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.signal_strengths.len()).collect();
        idx.sort_by(|&a, &b| self.signal_strengths[b].total_cmp(&self.signal_strengths[a]));
        idx
    }

    /// Squared correlation the asymptotic theory should be fed for signal `q`.
    pub fn target_rho_sq(&self, q: usize) -> f64 {
        match &self.signal_mode {
            SignalMode::Deterministic { x, y } => sample_r2(x, y),
            _ => self.signal_strengths[q].powi(2),
        }
    }
}

/// Squared uncentred sample correlation `(x.y)^2 / (|x|^2 |y|^2)`.
pub fn sample_r2(x: &[f64], y: &[f64]) -> f64 {
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xx += a * a;
        yy += b * b;
        xy += a * b;
    }
    xy * xy / (xx * yy)
}

/// Deterministic stream for replication `replication` of an experiment seeded by `seed`.
pub fn seeded_rng(seed: u64, replication: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// True signal vectors for one generated data set.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `S`-vectors `U^T alpha_q`.
    pub x: Vec<Vec<f64>>,
    /// `S`-vectors `V^T beta_q`.
    pub y: Vec<Vec<f64>>,
    /// Weight vectors of length `K`.
    pub alpha: Vec<Vec<f64>>,
    /// Weight vectors of length `M`.
    pub beta: Vec<Vec<f64>>,
}

fn noise_matrix<R: Rng>(law: NoiseLaw, rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    // Row-major fill keeps the draw order independent of the storage layout.
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = law.sample(rng);
        }
    }
    out
}

fn draw_vec<R: Rng>(s: usize, rng: &mut R, law: NoiseLaw) -> Vec<f64> {
    (0..s).map(|_| law.sample(rng)).collect()
}

fn scale_to_sqrt_s(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let f = (v.len() as f64).sqrt() / n;
    v.iter_mut().for_each(|a| *a *= f);
}

fn signal_pair<R: Rng>(spec: &SimSpec, q: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let s = spec.s;
    let r = spec.signal_strengths[q];
    let w = (1.0 - r * r).sqrt();
    let combine = |x: &[f64], e: &[f64]| -> Vec<f64> { x.iter().zip(e).map(|(a, b)| r * a + w * b).collect() };
    match &spec.signal_mode {
        SignalMode::IidGaussian | SignalMode::IidNonGaussian => {
            let law = if matches!(spec.signal_mode, SignalMode::IidGaussian) {
                NoiseLaw::Gaussian
            } else {
                spec.noise_law
            };
            let x = draw_vec(s, rng, law);
            let e = draw_vec(s, rng, law);
            let y = combine(&x, &e);
            (x, y)
        }
        SignalMode::Deterministic { x, y } => (x.clone(), y.clone()),
        SignalMode::Sinusoid => {
            let f = (3 + 2 * q) as f64;
            let arg = |t: usize| 2.0 * std::f64::consts::PI * f * t as f64 / s as f64;
            let x: Vec<f64> = (0..s).map(|t| 2f64.sqrt() * arg(t).sin()).collect();
            let e: Vec<f64> = (0..s).map(|t| 2f64.sqrt() * arg(t).cos()).collect();
            let y = combine(&x, &e);
            (x, y)
        }
        SignalMode::RotatedPair => {
            let mut x = draw_vec(s, rng, NoiseLaw::Gaussian);
            let mut e = draw_vec(s, rng, NoiseLaw::Gaussian);
            scale_to_sqrt_s(&mut x);
            let proj = x.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / s as f64;
            e.iter_mut().zip(&x).for_each(|(b, a)| *b -= proj * a);
            scale_to_sqrt_s(&mut e);
            let y = combine(&x, &e);
            (x, y)
        }
    }
}

/// Generates `U` (`K x S`), `V` (`M x S`) and the planted signals for
/// replication `replication`.
pub fn gen_data(spec: &SimSpec, replication: u64) -> Result<(DMatrix<f64>, DMatrix<f64>, GroundTruth), SpecError> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, replication);
    let (k, m, s) = (spec.k, spec.m, spec.s);
    let mut u = noise_matrix(spec.noise_law, k, s, &mut rng);
    let mut v = noise_matrix(spec.noise_law, m, s, &mut rng);
    let q = spec.signal_strengths.len();
    for j in 0..q {
        let (x, y) = signal_pair(spec, j, &mut rng);
        u.set_row(j, &DVector::from_vec(x).transpose());
        v.set_row(j, &DVector::from_vec(y).transpose());
    }
    let mut alpha: Vec<DVector<f64>> = (0..q).map(|j| DVector::from_fn(k, |i, _| f64::from(i == j))).collect();
    let beta: Vec<Vec<f64>> = (0..q).map(|j| (0..m).map(|i| f64::from(i == j)).collect()).collect();
    for (i, &var) in spec.signal_variances.iter().enumerate() {
        u.row_mut(i).scale_mut(var.sqrt());
    }
    if spec.mixing {
        let mix = noise_matrix(NoiseLaw::Gaussian, k, k, &mut rng);
        let inv_t = mix.clone().try_inverse().ok_or(SpecError::SingularMixing)?.transpose();
        u = &mix * &u;
        alpha = alpha.iter().map(|a| &inv_t * a).collect();
    }
    let x = alpha.iter().map(|a| (u.transpose() * a).iter().copied().collect()).collect();
    let y = beta
        .iter()
        .map(|b| (v.transpose() * DVector::from_column_slice(b)).iter().copied().collect())
        .collect();
    let truth = GroundTruth {
        x,
        y,
        alpha: alpha.into_iter().map(|a| a.iter().copied().collect()).collect(),
        beta,
    };
    Ok((u, v, truth))
}

/// Sample values with their mean and central 95% band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub values: Vec<f64>,
    pub mean: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl Stat {
    pub fn from_values(values: Vec<f64>) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Self {
                values,
                mean: f64::NAN,
                band_lo: f64::NAN,
                band_hi: f64::NAN,
            };
        }
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        let mut sorted = finite;
        sorted.sort_by(f64::total_cmp);
        Self {
            values,
            mean,
            band_lo: quantile_sorted(&sorted, 0.025).min(mean),
            band_hi: quantile_sorted(&sorted, 0.975).max(mean),
        }
    }
}

/// Monte Carlo results for one planted signal.
#[derive(Debug, Clone, Serialize)]
pub struct SignalSummary {
    pub strength: f64,
    /// Squared correlation fed to the theory.
    pub rho_sq: f64,
    /// 1-based rank of the spike this signal should produce.
    pub rank: usize,
    /// `None` below the detection threshold.
    pub theory: Option<SpikePrediction>,
    /// Theoretical angles, 90 degrees below the detection threshold.
    pub theta_x_theory: f64,
    pub theta_y_theory: f64,
    pub lambda: Stat,
    pub theta_x: Stat,
    pub theta_y: Stat,
    pub theta_alpha: Stat,
    pub theta_beta: Stat,
    /// Closed-form strength estimate per replication, when the spike is above the edge.
    pub rho_sq_closed: Vec<Option<f64>>,
    /// Empirical-resolvent estimate per replication, computed without the gap gate.
    pub rho_sq_empirical: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub replications: usize,
    pub regime: Option<AsymptoticRegime>,
    pub signals: Vec<SignalSummary>,
    /// Correlations above the upper bulk edge per replication.
    pub detected: Vec<usize>,
    /// Detected spikes passing the gap gate per replication.
    pub gated: Vec<usize>,
    /// Full spectrum of replication 0.
    pub first_correlations: Vec<f64>,
}

struct RepResult {
    correlations: Vec<f64>,
    per_signal: Vec<RepSignal>,
    detected: usize,
    gated: usize,
}

struct RepSignal {
    lambda: f64,
    theta_x: f64,
    theta_y: f64,
    theta_alpha: f64,
    theta_beta: f64,
    closed: Option<f64>,
    empirical: Option<f64>,
}

const GATE_MULTIPLIER: f64 = 5.0;

fn run_replication(
    spec: &SimSpec,
    rep: u64,
    regime: Option<&AsymptoticRegime>,
    ranks: &[usize],
) -> Result<RepResult, SimError> {
    let (u, v, truth) = gen_data(spec, rep)?;
    let cca = sample_cca(&u, &v)?;
    let lambdas = &cca.correlations_sq;
    let col = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.column(i).iter().copied().collect() };
    let mut per_signal = Vec::with_capacity(ranks.len());
    for (q, &rank) in ranks.iter().enumerate() {
        let i = rank - 1;
        let deg = |a: &[f64], b: &[f64]| angle_between(a, b).map(|x| x.degrees);
        let (closed, empirical) = match regime {
            Some(r) => (
                estimate_spike_closed_form(lambdas[i], r).ok().map(|e| e.rho_sq_hat),
                estimate_spike_empirical_ungated(lambdas, rank, r).ok().map(|e| e.rho_sq_hat),
            ),
            None => (None, None),
        };
        per_signal.push(RepSignal {
            lambda: lambdas[i],
            theta_x: deg(&col(&cca.left_variables, i), &truth.x[q])?,
            theta_y: deg(&col(&cca.right_variables, i), &truth.y[q])?,
            theta_alpha: deg(&col(&cca.left_weights, i), &truth.alpha[q])?,
            theta_beta: deg(&col(&cca.right_weights, i), &truth.beta[q])?,
            closed,
            empirical,
        });
    }
    let (detected, gated) = match regime {
        Some(r) => {
            let (cands, _) = detect_spikes(lambdas, r, GATE_MULTIPLIER);
            (cands.len(), cands.iter().filter(|c| c.gate_passed).count())
        }
        None => (0, 0),
    };
    Ok(RepResult {
        correlations: cca.correlations_sq,
        per_signal,
        detected,
        gated,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Cca(#[from] CcaError),
    #[error(transparent)]
    Wachter(#[from] WachterError),
}

/// Runs `replications` independent draws of `spec` in parallel and
/// summarises spikes and angles per planted signal.
///
/// Results depend only on the seed and the replication ids, not on the
/// number of worker threads.
pub fn mc_angles(spec: &SimSpec, replications: usize) -> Result<McSummary, SimError> {
    spec.validate()?;
    if replications == 0 {
        return Err(SpecError::NoReplications.into());
    }
    let regime = AsymptoticRegime::from_dims(spec.k, spec.m, spec.s).ok();
    let order = spec.rank_order();
    let mut ranks = vec![0; order.len()];
    for (pos, &q) in order.iter().enumerate() {
        ranks[q] = pos + 1;
    }
    let results: Vec<RepResult> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(spec, rep, regime.as_ref(), &ranks))
        .collect::<Result<_, _>>()?;

    let signals = (0..ranks.len())
        .map(|q| {
            let rho_sq = spec.target_rho_sq(q);
            let theory = regime.as_ref().and_then(|r| r.predict(rho_sq).ok());
            let pick = |f: fn(&RepSignal) -> f64| Stat::from_values(results.iter().map(|r| f(&r.per_signal[q])).collect());
            SignalSummary {
                strength: spec.signal_strengths[q],
                rho_sq,
                rank: ranks[q],
                theory,
                theta_x_theory: theory.map_or(90.0, |t| t.theta_x_deg()),
                theta_y_theory: theory.map_or(90.0, |t| t.theta_y_deg()),
                lambda: pick(|r| r.lambda),
                theta_x: pick(|r| r.theta_x),
                theta_y: pick(|r| r.theta_y),
                theta_alpha: pick(|r| r.theta_alpha),
                theta_beta: pick(|r| r.theta_beta),
                rho_sq_closed: results.iter().map(|r| r.per_signal[q].closed).collect(),
                rho_sq_empirical: results.iter().map(|r| r.per_signal[q].empirical).collect(),
            }
        })
        .collect();
    Ok(McSummary {
        replications,
        regime,
        signals,
        detected: results.iter().map(|r| r.detected).collect(),
        gated: results.iter().map(|r| r.gated).collect(),
        first_correlations: results[0].correlations.clone(),
    })
}

/// One point of a theory-versus-simulation angle curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub rho_sq: f64,
    pub theta_x_theory: f64,
    pub theta_y_theory: f64,
    pub theta_x: Stat,
    pub theta_y: Stat,
    pub theta_alpha: Stat,
}

/// Single-signal Monte Carlo over a grid of squared correlations.
///
/// Each grid point uses the seed of `base` offset by its position.
pub fn mc_curve(base: &SimSpec, rho_sq_grid: &[f64], replications: usize) -> Result<Vec<CurvePoint>, SimError> {
    rho_sq_grid
        .iter()
        .enumerate()
        .map(|(i, &rho_sq)| {
            let mut spec = base.clone();
            spec.signal_strengths = vec![rho_sq.max(0.0).sqrt()];
            spec.seed = base.seed.wrapping_add(i as u64);
            let sum = mc_angles(&spec, replications)?;
            let sig = sum.signals.into_iter().next().expect("one signal");
            Ok(CurvePoint {
                rho_sq,
                theta_x_theory: sig.theta_x_theory,
                theta_y_theory: sig.theta_y_theory,
                theta_x: sig.theta_x,
                theta_y: sig.theta_y,
                theta_alpha: sig.theta_alpha,
            })
        })
        .collect()
}

/// Largest deviation from the Gaussian fourth-moment factorisation
/// `E X_i X_j X_k X_l = E X_i X_j E X_k X_l + E X_i X_k E X_j X_l + E X_i X_l E X_j X_k`
/// over all index quadruples. Rows of `samples` are draws, columns coordinates.
pub fn wick_check(samples: &DMatrix<f64>) -> f64 {
    let (n_draws, n) = samples.shape();
    if n_draws == 0 || n == 0 {
        return 0.0;
    }
    let cov = samples.transpose() * samples / n_draws as f64;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                for l in k..n {
                    let mut m4 = 0.0;
                    for row in samples.row_iter() {
                        m4 += row[i] * row[j] * row[k] * row[l];
                    }
                    m4 /= n_draws as f64;
                    let wick = cov[(i, j)] * cov[(k, l)] + cov[(i, k)] * cov[(j, l)] + cov[(i, l)] * cov[(j, k)];
                    worst = worst.max((m4 - wick).abs());
                }
            }
        }
    }
    worst
}

/// Stability of [`wick_check`] across batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WickConvergence {
    /// Deviation on all draws.
    pub deviation: f64,
    /// `(batch size, median distance of the per-batch deviations to the full-sample one)`.
    pub spreads: Vec<(usize, f64)>,
    /// Whether the spread shrinks by at least half when batches grow `16x`.
    pub converged: bool,
}

/// Splits the draws into `small` batches and into `small / 16` larger ones
/// and measures how far the per-batch deviations sit from the full-sample
/// deviation. With finite eighth moments the distance falls roughly
/// fourfold; when the fourth moments diverge the full-sample value is driven
/// by a few extreme draws and the distance stays flat.
pub fn wick_convergence(samples: &DMatrix<f64>, small: usize) -> WickConvergence {
    let deviation = wick_check(samples);
    let n_draws = samples.nrows();
    let levels = [small.max(16), (small / 16).max(1)];
    let spreads: Vec<(usize, f64)> = levels
        .iter()
        .map(|&batches| {
            let size = n_draws / batches;
            let mut dist: Vec<f64> = (0..batches)
                .map(|b| (wick_check(&samples.rows(b * size, size).into_owned()) - deviation).abs())
                .collect();
            dist.sort_by(f64::total_cmp);
            (size, quantile_sorted(&dist, 0.5))
        })
        .collect();
    let converged = spreads[1].1 <= 0.5 * spreads[0].1;
    WickConvergence {
        deviation,
        spreads,
        converged,
    }
}

/// Draws `n_draws x dim` i.i.d. samples from `law`.
pub fn draw_samples(law: NoiseLaw, n_draws: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(seed, 0);
    noise_matrix(law, n_draws, dim, &mut rng)
}

/// Kolmogorov-Smirnov distance between the empirical law of `values` and
/// the limiting noise distribution.
pub fn ks_to_wachter(values: &[f64], regime: &AsymptoticRegime) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = regime.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Theoretical angle in degrees for `rho_sq`, 90 below the detection threshold.
pub fn theory_angles(regime: &AsymptoticRegime, rho_sq: f64) -> (f64, f64) {
    match regime.sin2_angles(rho_sq) {
        Ok((sx, sy)) => (sin2_to_degrees(sx), sin2_to_degrees(sy)),
        Err(_) => (90.0, 90.0),
    }
}
