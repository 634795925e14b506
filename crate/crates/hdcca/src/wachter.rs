//! Closed-form asymptotics for squared sample canonical correlations between
//! two independent high-dimensional data sets and for a single planted signal.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Tolerance below which the square-root argument at the support edges is
/// treated as zero.
const EDGE_CLAMP: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WachterError {
    #[error("invalid dimensions K={k}, M={m}, S={s}: {reason}")]
    Dimension {
        k: usize,
        m: usize,
        s: usize,
        reason: &'static str,
    },
    #[error("invalid ratios tau_K={tau_k}, tau_M={tau_m}: need tau > 1 and 1/tau_K + 1/tau_M < 1")]
    Ratio { tau_k: f64, tau_m: f64 },
    #[error("squared correlation {rho_sq} is not above the detection threshold {rho_c_sq}")]
    BelowCutoff { rho_sq: f64, rho_c_sq: f64 },
    #[error("value {z} is not above the upper bulk edge {lambda_plus}")]
    BelowEdge { z: f64, lambda_plus: f64 },
    #[error("point {z} lies on the support [{lo}, {hi}]")]
    OnSupport { z: Complex64, lo: f64, hi: f64 },
    #[error("squared correlation {0} is outside [0, 1]")]
    OutOfRange(f64),
}

/// Dimensions and derived constants of the proportional-growth regime.
///
/// `k <= m` always holds; when the inputs arrive the other way round they are
/// exchanged and `swapped` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticRegime {
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub tau_k: f64,
    pub tau_m: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub rho_c_sq: f64,
    pub swapped: bool,
}

/// Asymptotic location of a spike and the limiting squared sines of the
/// angles between estimated and true canonical variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpikePrediction {
    pub rho_sq: f64,
    pub z_rho: f64,
    pub s_x: f64,
    pub s_y: f64,
}

impl SpikePrediction {
    pub fn theta_x_deg(&self) -> f64 {
        sin2_to_degrees(self.s_x)
    }

    pub fn theta_y_deg(&self) -> f64 {
        sin2_to_degrees(self.s_y)
    }
}

/// Angle in degrees whose squared sine is `s`.
pub fn sin2_to_degrees(s: f64) -> f64 {
    s.clamp(0.0, 1.0).sqrt().asin().to_degrees()
}

impl AsymptoticRegime {
    /// Builds the regime for a `K x S` and an `M x S` data matrix.
    pub fn from_dims(k: usize, m: usize, s: usize) -> Result<Self, WachterError> {
        let (lo, hi, swapped) = if k <= m { (k, m, false) } else { (m, k, true) };
        let err = |reason| WachterError::Dimension { k, m, s, reason };
        if lo == 0 {
            return Err(err("both sides need at least one variable"));
        }
        if hi >= s {
            return Err(err(
                "the larger side has at least as many variables as samples, so its rows span the whole sample space and every correlation equals 1",
            ));
        }
        if lo + hi >= s {
            return Err(err(
                "K + M is at least S, so the row spaces must intersect and K + M - S correlations equal 1",
            ));
        }
        let mut r = Self::from_ratios(s as f64 / lo as f64, s as f64 / hi as f64)?;
        r.k = lo;
        r.m = hi;
        r.s = s;
        r.swapped = swapped;
        Ok(r)
    }

    /// Builds a purely asymptotic regime from the ratios `tau_K >= tau_M`.
    /// The integer dimensions are left at zero.
    pub fn from_ratios(tau_k: f64, tau_m: f64) -> Result<Self, WachterError> {
        if !(tau_k > 1.0 && tau_m > 1.0 && 1.0 / tau_k + 1.0 / tau_m < 1.0) {
            return Err(WachterError::Ratio { tau_k, tau_m });
        }
        let (a, b) = (1.0 / tau_m, 1.0 / tau_k);
        let p = (a * (1.0 - b)).sqrt();
        let q = (b * (1.0 - a)).sqrt();
        Ok(Self {
            k: 0,
            m: 0,
            s: 0,
            tau_k,
            tau_m,
            lambda_minus: (p - q) * (p - q),
            lambda_plus: (p + q) * (p + q),
            rho_c_sq: 1.0 / ((tau_m - 1.0) * (tau_k - 1.0)).sqrt(),
            swapped: false,
        })
    }

    /// Ratio `K / S`.
    pub fn k_ratio(&self) -> f64 {
        1.0 / self.tau_k
    }

    /// Ratio `M / S`.
    pub fn m_ratio(&self) -> f64 {
        1.0 / self.tau_m
    }

    /// Location of the spike produced by a signal of squared correlation `rho_sq`.
    pub fn z_from_rho2(&self, rho_sq: f64) -> Result<f64, WachterError> {
        if !(0.0..=1.0).contains(&rho_sq) {
            return Err(WachterError::OutOfRange(rho_sq));
        }
        if rho_sq <= self.rho_c_sq {
            return Err(WachterError::BelowCutoff {
                rho_sq,
                rho_c_sq: self.rho_c_sq,
            });
        }
        let (tk, tm) = (self.tau_k, self.tau_m);
        Ok(((tk - 1.0) * rho_sq + 1.0) * ((tm - 1.0) * rho_sq + 1.0) / (rho_sq * tk * tm))
    }

    /// Inverse of [`Self::z_from_rho2`] on `(lambda_plus, 1]`.
    pub fn rho2_from_z(&self, z: f64) -> Result<f64, WachterError> {
        if z.is_nan() || z <= self.lambda_plus {
            return Err(WachterError::BelowEdge {
                z,
                lambda_plus: self.lambda_plus,
            });
        }
        if z > 1.0 {
            return Err(WachterError::OutOfRange(z));
        }
        let (a, b) = (1.0 / self.tau_m, 1.0 / self.tau_k);
        let root = self.edge_sqrt_real(z);
        let rho_sq = (z - a - b + 2.0 * a * b + root) / (2.0 * (1.0 - a) * (1.0 - b));
        Ok(rho_sq.min(1.0))
    }

    /// Limiting squared sines of the angles for a signal of strength `rho_sq`.
    pub fn sin2_angles(&self, rho_sq: f64) -> Result<(f64, f64), WachterError> {
        if !(0.0..=1.0).contains(&rho_sq) {
            return Err(WachterError::OutOfRange(rho_sq));
        }
        if rho_sq <= self.rho_c_sq {
            return Err(WachterError::BelowCutoff {
                rho_sq,
                rho_c_sq: self.rho_c_sq,
            });
        }
        let (tk, tm) = (self.tau_k - 1.0, self.tau_m - 1.0);
        let denom = rho_sq * tk * tm - 1.0;
        let s_x = (1.0 - rho_sq) * tk * (rho_sq * tm + 1.0) / (denom * (rho_sq * tk + 1.0));
        let s_y = (1.0 - rho_sq) * tm * (rho_sq * tk + 1.0) / (denom * (rho_sq * tm + 1.0));
        Ok((s_x.clamp(0.0, 1.0), s_y.clamp(0.0, 1.0)))
    }

    pub fn predict(&self, rho_sq: f64) -> Result<SpikePrediction, WachterError> {
        let z_rho = self.z_from_rho2(rho_sq)?;
        let (s_x, s_y) = self.sin2_angles(rho_sq)?;
        Ok(SpikePrediction {
            rho_sq,
            z_rho,
            s_x,
            s_y,
        })
    }

    /// Limiting density of squared canonical correlations of pure noise.
    pub fn density(&self, x: f64) -> f64 {
        if x <= self.lambda_minus || x >= self.lambda_plus {
            return 0.0;
        }
        let arg = (x - self.lambda_minus) * (self.lambda_plus - x);
        self.tau_k / (2.0 * PI) * arg.max(0.0).sqrt() / (x * (1.0 - x))
    }

    /// Cumulative distribution of [`Self::density`].
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lambda_minus {
            return 0.0;
        }
        if x >= self.lambda_plus {
            return 1.0;
        }
        // x = c + h cos(t) turns the square-root endpoints into a smooth integrand.
        let c = 0.5 * (self.lambda_plus + self.lambda_minus);
        let h = 0.5 * (self.lambda_plus - self.lambda_minus);
        let t0 = ((x - c) / h).clamp(-1.0, 1.0).acos();
        // Half-angle form keeps the integrand finite when lambda_- = 0.
        let lm = self.lambda_minus;
        let f = |t: f64| {
            let (sh, ch) = (0.5 * t).sin_cos();
            let y = lm + 2.0 * h * ch * ch;
            let ratio = if lm == 0.0 { 1.0 / (2.0 * h) } else { ch * ch / (lm + 2.0 * h * ch * ch) };
            4.0 * h * h * sh * sh * ratio / (1.0 - y)
        };
        let n = 2048;
        let step = (PI - t0) / n as f64;
        let mut acc = f(t0) + f(PI);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(t0 + step * i as f64);
        }
        (self.tau_k / (2.0 * PI) * acc * step / 3.0).clamp(0.0, 1.0)
    }

    /// Real branch of `sqrt((z - lambda_-)(z - lambda_+))` that is positive
    /// above the support and negative below it.
    fn edge_sqrt_real(&self, z: f64) -> f64 {
        let arg = (z - self.lambda_minus) * (z - self.lambda_plus);
        let mag = if arg < 0.0 && arg > -EDGE_CLAMP { 0.0 } else { arg.max(0.0).sqrt() };
        if z < self.lambda_minus {
            -mag
        } else {
            mag
        }
    }

    fn edge_sqrt(&self, z: Complex64) -> Complex64 {
        if z.im == 0.0 {
            return Complex64::new(self.edge_sqrt_real(z.re), 0.0);
        }
        (z - self.lambda_minus).sqrt() * (z - self.lambda_plus).sqrt()
    }

    fn check_off_support(&self, z: Complex64) -> Result<(), WachterError> {
        let tol = 1e-12;
        let on_segment = z.im.abs() <= tol
            && z.re >= self.lambda_minus - tol
            && z.re <= self.lambda_plus + tol;
        if on_segment || z.norm() <= tol {
            return Err(WachterError::OnSupport {
                z,
                lo: self.lambda_minus,
                hi: self.lambda_plus,
            });
        }
        Ok(())
    }

    /// Modified Stieltjes transform `(1/tau_K) * integral of density(x)/(z - x)`
    /// and its derivative in `z`.
    pub fn stieltjes(&self, z: Complex64) -> Result<(Complex64, Complex64), WachterError> {
        self.check_off_support(z)?;
        let (a, b) = (1.0 / self.tau_m, 1.0 / self.tau_k);
        let root = self.edge_sqrt(z);
        // Rationalized so the removable singularity at z = 1 causes no cancellation.
        let w = root + z - a - b;
        let g = b / z + 2.0 * a * b / (z * w);
        let droot = (2.0 * z - self.lambda_minus - self.lambda_plus) / (2.0 * root);
        let dw = droot + 1.0;
        let dg = -b / (z * z) - 2.0 * a * b * (w + z * dw) / (z * w * z * w);
        Ok((g, dg))
    }

    /// Real-axis version of [`Self::stieltjes`].
    pub fn stieltjes_real(&self, z: f64) -> Result<(f64, f64), WachterError> {
        let (g, dg) = self.stieltjes(Complex64::new(z, 0.0))?;
        Ok((g.re, dg.re))
    }

    /// `sqrt((z - lambda_-)(z - lambda_+))` on the real axis with the branch
    /// used by [`Self::stieltjes`].
    pub fn edge_root(&self, z: f64) -> f64 {
        self.edge_sqrt_real(z)
    }
}
