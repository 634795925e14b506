//! Exact finite-dimensional master equations for CCA and PCA with a single
//! planted signal, and the asymptotic relations that replace the noise
//! resolvent by an empirical or closed-form transform.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::linalg_cca::{canonical_bases, CanonicalBasis, CcaError};
use crate::wachter::AsymptoticRegime;

/// Relative distance to a pole below which rational evaluations are refused.
pub const POLE_GUARD: f64 = 1e-9;

/// Cosines closer than this are merged into one repeated value.
pub const REPEAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MasterError {
    #[error("evaluation point {z} is within the pole guard of {pole}")]
    PoleProximity { z: f64, pole: f64 },
    #[error("denominator of the vector-statistic ratio vanishes at z={0}")]
    DegenerateQ(f64),
    #[error("denominator vanishes in the asymptotic relation at z={0}")]
    DenominatorVanishes(f64),
    #[error("repeated noise singular value {0}")]
    RepeatedSingular(f64),
    #[error("signal vector lies in the span of the noise rows")]
    SignalInSpan,
    #[error("root search found {found} roots, expected {expected}")]
    RootCount { found: usize, expected: usize },
    #[error("input tables have inconsistent lengths")]
    Shape,
    #[error(transparent)]
    Cca(#[from] CcaError),
}

/// Scalar products between the signal rows `u*`, `v*` and the canonical
/// bases `u_i` (`i < K-1`), `v_j` (`j < M-1`) of the noise rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterInputs {
    /// `c_1 >= ... >= c_{K-1}`; cosines of `v_j` for `j >= K-1` are zero.
    pub cosines: Vec<f64>,
    pub uu_star: f64,
    pub vv_star: f64,
    pub uv_star: f64,
    pub u_star_u: Vec<f64>,
    pub u_star_v: Vec<f64>,
    pub v_star_u: Vec<f64>,
    pub v_star_v: Vec<f64>,
}

impl MasterInputs {
    /// Number of left variables, including the signal.
    pub fn k(&self) -> usize {
        self.cosines.len() + 1
    }

    /// Number of right variables, including the signal.
    pub fn m(&self) -> usize {
        self.u_star_v.len() + 1
    }

    fn check(&self) -> Result<(), MasterError> {
        let p = self.cosines.len();
        let n = self.u_star_v.len();
        if self.u_star_u.len() != p || self.v_star_u.len() != p || self.v_star_v.len() != n || n < p {
            return Err(MasterError::Shape);
        }
        Ok(())
    }

    /// Tabulates the products for signal rows `u_star`, `v_star` against `basis`.
    pub fn from_parts(u_star: &[f64], v_star: &[f64], basis: &CanonicalBasis) -> Self {
        let dot = |a: &[f64], b: nalgebra::DVectorView<f64>| -> f64 {
            a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
        };
        let self_dot = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>();
        let cols = |m: &DMatrix<f64>, s: &[f64]| -> Vec<f64> {
            (0..m.ncols()).map(|i| dot(s, m.column(i))).collect()
        };
        Self {
            cosines: basis.cosines.clone(),
            uu_star: self_dot(u_star),
            vv_star: self_dot(v_star),
            uv_star: u_star.iter().zip(v_star).map(|(a, b)| a * b).sum(),
            u_star_u: cols(&basis.u_basis, u_star),
            u_star_v: cols(&basis.v_basis, u_star),
            v_star_u: cols(&basis.u_basis, v_star),
            v_star_v: cols(&basis.v_basis, v_star),
        }
    }

    /// Uses row 0 of `u` and `v` as the signal rows and the remaining rows as noise.
    pub fn from_data(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(Self, CanonicalBasis), MasterError> {
        let (k, m) = (u.nrows(), v.nrows());
        if k == 0 || m == 0 || k > m {
            return Err(MasterError::Shape);
        }
        let u_sub = u.rows(1, k - 1).into_owned();
        let v_sub = v.rows(1, m - 1).into_owned();
        let basis = canonical_bases(&u_sub, &v_sub)?;
        let us: Vec<f64> = u.row(0).iter().copied().collect();
        let vs: Vec<f64> = v.row(0).iter().copied().collect();
        Ok((Self::from_parts(&us, &vs, &basis), basis))
    }
}

/// Numerator coefficients of one pole term: `A` gets `(a0 + a1 z)`,
/// `z B` gets `z (b1 + b2 z)` and `C` gets `(g0 + g1 z)`, each over `z - s`.
#[derive(Debug, Clone, Copy, Default)]
struct PoleTerm {
    s: f64,
    a0: f64,
    a1: f64,
    b1: f64,
    b2: f64,
    g0: f64,
    g1: f64,
}

impl PoleTerm {
    fn add(&mut self, o: &PoleTerm) {
        self.a0 += o.a0;
        self.a1 += o.a1;
        self.b1 += o.b1;
        self.b2 += o.b2;
        self.g0 += o.g0;
        self.g1 += o.g1;
    }

    fn alpha(&self, z: f64) -> f64 {
        self.a0 + self.a1 * z
    }

    fn beta(&self, z: f64) -> f64 {
        z * (self.b1 + self.b2 * z)
    }

    fn gamma(&self, z: f64) -> f64 {
        self.g0 + self.g1 * z
    }

    /// `(alpha^2 - beta gamma) / (z - s)` as a polynomial, valid when the
    /// numerator vanishes at `s`.
    fn deflated(&self, z: f64) -> f64 {
        let d3 = -self.b2 * self.g1;
        let d2 = self.a1 * self.a1 - self.b1 * self.g1 - self.b2 * self.g0;
        let d1 = 2.0 * self.a0 * self.a1 - self.b1 * self.g0;
        let e2 = d3;
        let e1 = d2 + self.s * e2;
        let e0 = d1 + self.s * e1;
        (e2 * z + e1) * z + e0
    }
}

/// Regular (pole-free) part: `A = a`, `zB = b0 + b1 z`, `C = g0`.
#[derive(Debug, Clone, Copy, Default)]
struct Regular {
    a: f64,
    b0: f64,
    b1: f64,
    g0: f64,
}

/// A group of equal cosines acting as one pole.
#[derive(Debug, Clone, Copy)]
struct Pole {
    term: PoleTerm,
    /// 1 for a simple pole of the residual, 2 for a double pole.
    order: u32,
}

/// The residual assembled from the inputs, with residue-free poles folded
/// into the regular part.
struct Residual {
    regular: Regular,
    poles: Vec<Pole>,
    /// Squared cosines that are roots independent of the signal.
    pinned: Vec<f64>,
    all_poles: Vec<f64>,
    scale: f64,
}

fn pole_terms(inp: &MasterInputs) -> (Vec<PoleTerm>, Regular) {
    let p = inp.cosines.len();
    let mut reg = Regular {
        a: inp.uv_star,
        b1: -inp.uu_star,
        g0: -inp.vv_star,
        ..Default::default()
    };
    for j in p..inp.u_star_v.len() {
        reg.a -= inp.u_star_v[j] * inp.v_star_v[j];
        reg.b0 += inp.u_star_v[j] * inp.u_star_v[j];
        reg.g0 += inp.v_star_v[j] * inp.v_star_v[j];
    }
    let terms = (0..p)
        .map(|i| {
            let c = inp.cosines[i];
            let (p1, p2) = (inp.u_star_u[i], inp.u_star_v[i]);
            let (q1, q2) = (inp.v_star_u[i], inp.v_star_v[i]);
            PoleTerm {
                s: c * c,
                a0: c * p2 * q1,
                a1: -p2 * q2 - p1 * q1 + c * p1 * q2,
                b1: p2 * p2 - 2.0 * c * p1 * p2,
                b2: p1 * p1,
                g0: q1 * q1 - 2.0 * c * q1 * q2,
                g1: q2 * q2,
            }
        })
        .collect();
    (terms, reg)
}

impl Residual {
    fn new(inp: &MasterInputs) -> Self {
        let (terms, mut regular) = pole_terms(inp);
        let scale = (inp.uu_star * inp.vv_star).max(f64::MIN_POSITIVE);
        let su = inp.uu_star.sqrt();
        let sv = inp.vv_star.sqrt();
        let tol = 1e-10;
        let mut poles = Vec::new();
        let mut pinned = Vec::new();
        let all_poles = terms.iter().map(|t| t.s).collect();
        let mut i = 0;
        while i < terms.len() {
            let mut j = i + 1;
            while j < terms.len() && (inp.cosines[i] - inp.cosines[j]).abs() <= REPEAT_TOL {
                j += 1;
            }
            let c = inp.cosines[i];
            let mut merged = PoleTerm {
                s: terms[i].s,
                ..Default::default()
            };
            // a_i = <u*,v_i> - c <u*,u_i>, b_i = <v*,u_i> - c <v*,v_i>
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for (t, term) in terms.iter().enumerate().take(j).skip(i) {
                merged.add(term);
                let a = inp.u_star_v[t] - c * inp.u_star_u[t];
                let b = inp.v_star_u[t] - c * inp.v_star_v[t];
                aa += a * a;
                bb += b * b;
                ab += a * b;
            }
            let m = j - i;
            let residue_free = c * aa.sqrt() <= tol * su && bb.sqrt() <= tol * sv;
            if residue_free {
                // Fold the removable term into the regular part.
                regular.a += merged.a1;
                regular.b0 += merged.b1 + merged.b2 * merged.s;
                regular.b1 += merged.b2;
                regular.g0 += merged.g1;
                pinned.extend(std::iter::repeat_n(merged.s, m));
            } else {
                let wedge = (aa * bb - ab * ab).max(0.0).sqrt();
                let order = if m >= 2 && c * wedge > tol * su * sv { 2 } else { 1 };
                pinned.extend(std::iter::repeat_n(merged.s, m - order as usize));
                poles.push(Pole { term: merged, order });
            }
            i = j;
        }
        Self {
            regular,
            poles,
            pinned,
            all_poles,
            scale,
        }
    }

    /// Regular part plus all pole terms except `skip`: returns `(A, zB, C)`.
    fn parts(&self, z: f64, skip: Option<usize>) -> (f64, f64, f64) {
        let r = &self.regular;
        let mut a = r.a;
        let mut b = r.b0 + r.b1 * z;
        let mut g = r.g0;
        for (idx, pole) in self.poles.iter().enumerate() {
            if Some(idx) == skip {
                continue;
            }
            let t = &pole.term;
            let d = z - t.s;
            a += t.alpha(z) / d;
            b += t.beta(z) / d;
            g += t.gamma(z) / d;
        }
        (a, b, g)
    }

    /// Residual `A^2 - z B C`, unnormalized.
    fn value(&self, z: f64) -> f64 {
        let (a, b, g) = self.parts(z, None);
        a * a - b * g
    }

    /// Residual and its derivative, unnormalized.
    fn value_and_derivative(&self, z: f64) -> (f64, f64) {
        let r = &self.regular;
        let (mut a, mut da) = (r.a, 0.0);
        let (mut b, mut db) = (r.b0 + r.b1 * z, r.b1);
        let (mut g, mut dg) = (r.g0, 0.0);
        for pole in &self.poles {
            let t = &pole.term;
            let d = z - t.s;
            let (al, be, ga) = (t.alpha(z), t.beta(z), t.gamma(z));
            let (dal, dbe, dga) = (t.a1, t.b1 + 2.0 * t.b2 * z, t.g1);
            a += al / d;
            da += (dal * d - al) / (d * d);
            b += be / d;
            db += (dbe * d - be) / (d * d);
            g += ga / d;
            dg += (dga * d - ga) / (d * d);
        }
        (a * a - b * g, 2.0 * a * da - db * g - b * dg)
    }

    /// Residual multiplied by `(z - s)^order` for every active pole, up to a
    /// positive factor; this is continuous and vanishes exactly at the free roots.
    fn reduced_sign_value(&self, z: f64) -> f64 {
        let nearest = self
            .poles
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| (z - x.term.s).abs().total_cmp(&(z - y.term.s).abs()));
        let mut sign = 1.0;
        let value = match nearest {
            Some((idx, pole)) if (z - pole.term.s).abs() < 1e-4 => {
                let t = &pole.term;
                let d = z - t.s;
                let (ar, br, gr) = self.parts(z, Some(idx));
                let (al, be, ga) = (t.alpha(z), t.beta(z), t.gamma(z));
                let cross = 2.0 * al * ar - be * gr - ga * br;
                let rest = ar * ar - br * gr;
                for (o, other) in self.poles.iter().enumerate() {
                    if o != idx && other.order % 2 == 1 && z < other.term.s {
                        sign = -sign;
                    }
                }
                if pole.order == 1 {
                    t.deflated(z) + cross + d * rest
                } else {
                    (al * al - be * ga) + d * cross + d * d * rest
                }
            }
            _ => {
                for pole in &self.poles {
                    if pole.order % 2 == 1 && z < pole.term.s {
                        sign = -sign;
                    }
                }
                self.value(z)
            }
        };
        sign * value
    }
}

/// Residual of the master equation at `z`, normalized by `<u*,u*><v*,v*>`.
pub fn master_residual(z: f64, inputs: &MasterInputs) -> Result<f64, MasterError> {
    inputs.check()?;
    for &c in &inputs.cosines {
        let s = c * c;
        if (z - s).abs() <= POLE_GUARD * (1.0 + z.abs()) {
            return Err(MasterError::PoleProximity { z, pole: s });
        }
    }
    let r = Residual::new(inputs);
    Ok(r.value(z) / r.scale)
}

/// Squared correlations between the noise span of `U` and the full span of `V`.
pub fn intermediate_correlations(inputs: &MasterInputs) -> Result<Vec<f64>, MasterError> {
    inputs.check()?;
    let p = inputs.cosines.len();
    let nv2 = inputs.vv_star - inputs.v_star_v.iter().map(|x| x * x).sum::<f64>();
    if nv2 <= 1e-13 * inputs.vv_star {
        return Err(MasterError::SignalInSpan);
    }
    let nv = nv2.sqrt();
    let g: Vec<f64> = (0..p)
        .map(|i| (inputs.v_star_u[i] - inputs.cosines[i] * inputs.v_star_v[i]) / nv)
        .collect();
    let mut mat = DMatrix::from_fn(p, p, |i, j| g[i] * g[j]);
    for i in 0..p {
        mat[(i, i)] += inputs.cosines[i] * inputs.cosines[i];
    }
    let mut y: Vec<f64> = SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    y.sort_by(|a, b| b.total_cmp(a));
    Ok(y)
}

/// Roots of the master equation with their bracketing data.
#[derive(Debug, Clone, Serialize)]
pub struct MasterRoots {
    /// `K` roots in `[0, 1]`, descending.
    pub roots: Vec<f64>,
    /// Intermediate sequence used for bracketing, descending.
    pub intermediate: Vec<f64>,
    /// Roots reported directly at a squared noise cosine (repeated or decoupled).
    pub pinned: Vec<f64>,
}

fn bisect(r: &Residual, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = r.reduced_sign_value(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Newton steps on the residual, kept only while they stay inside
/// `[lo, hi]` and reduce the residual.
fn polish(r: &Residual, z0: f64, lo: f64, hi: f64) -> f64 {
    let near_pole = r
        .all_poles
        .iter()
        .any(|&s| (z0 - s).abs() < 1e-6 * (1.0 + z0.abs()));
    if near_pole {
        return z0;
    }
    let mut z = z0;
    let (mut f, mut df) = r.value_and_derivative(z);
    for _ in 0..3 {
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let cand = z - f / df;
        if !(cand >= lo && cand <= hi) {
            break;
        }
        let (fc, dfc) = r.value_and_derivative(cand);
        if fc.abs() >= f.abs() {
            break;
        }
        z = cand;
        f = fc;
        df = dfc;
    }
    z
}

/// All `K` roots of the master equation in `[0, 1]`.
pub fn master_roots(inputs: &MasterInputs) -> Result<MasterRoots, MasterError> {
    inputs.check()?;
    let k = inputs.k();
    let r = Residual::new(inputs);
    let y = intermediate_correlations(inputs)?;

    // Bracket i holds root i: [y_i, y_{i-1}] with y_0 = 1 and y_K = 0.
    let brackets: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let hi = if i == 0 { 1.0 } else { y[i - 1] };
            let lo = if i + 1 == k { 0.0 } else { y[i] };
            (lo.min(hi), hi)
        })
        .collect();
    let ends: Vec<(f64, f64)> = brackets
        .iter()
        .map(|&(lo, hi)| (r.reduced_sign_value(lo), r.reduced_sign_value(hi)))
        .collect();
    let changes = |i: usize| {
        let (a, b) = ends[i];
        a != 0.0 && b != 0.0 && (a > 0.0) != (b > 0.0)
    };

    let mut taken = vec![false; k];
    let mut roots = Vec::with_capacity(k);
    let mut pinned = r.pinned.clone();
    pinned.sort_by(|a, b| b.total_cmp(a));
    for &s in &pinned {
        let tol = 1e-11;
        let fits = |i: usize| brackets[i].0 - tol <= s && s <= brackets[i].1 + tol;
        let pick = (0..k)
            .filter(|&i| !taken[i] && fits(i) && !changes(i))
            .min_by(|&a, &b| {
                let wa = brackets[a].1 - brackets[a].0;
                let wb = brackets[b].1 - brackets[b].0;
                wa.total_cmp(&wb)
            })
            .or_else(|| (0..k).find(|&i| !taken[i] && fits(i)));
        if let Some(i) = pick {
            taken[i] = true;
        }
        roots.push(s);
    }
    for i in 0..k {
        if taken[i] {
            continue;
        }
        let (lo, hi) = brackets[i];
        let (flo, fhi) = ends[i];
        let z = if hi - lo <= 1e-14 {
            0.5 * (lo + hi)
        } else if flo == 0.0 {
            lo
        } else if fhi == 0.0 {
            hi
        } else if changes(i) {
            polish(&r, bisect(&r, lo, hi, flo), lo, hi)
        } else if flo.abs() <= fhi.abs() {
            // The root sits on an endpoint up to rounding.
            lo
        } else {
            hi
        };
        roots.push(z);
    }
    if roots.len() != k {
        return Err(MasterError::RootCount {
            found: roots.len(),
            expected: k,
        });
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    Ok(MasterRoots {
        roots,
        intermediate: y,
        pinned,
    })
}

/// Checks `z_1 >= y_1 >= z_2 >= ... >= y_{K-1} >= z_K` and
/// `y_1 >= c_1^2 >= y_2 >= ... >= y_{K-1} >= c_{K-1}^2` on descending inputs,
/// allowing violations up to `tol`.
pub fn interlaces(roots: &[f64], intermediate: &[f64], cosines: &[f64], tol: f64) -> bool {
    let k = roots.len();
    if k == 0 || intermediate.len() + 1 != k || cosines.len() + 1 != k {
        return false;
    }
    let first = (0..k - 1).all(|i| roots[i] + tol >= intermediate[i] && intermediate[i] + tol >= roots[i + 1]);
    let second = (0..k - 1).all(|i| {
        let c2 = cosines[i] * cosines[i];
        intermediate[i] + tol >= c2 && intermediate.get(i + 1).is_none_or(|&y| c2 + tol >= y)
    });
    first && second
}

/// Canonical-vector statistics at a root of the master equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VectorStats {
    /// Squared coefficient of `u*` in the unit canonical variable.
    pub alpha0_sq: f64,
    /// Squared coefficient of `v*` in the unit canonical variable.
    pub beta0_sq: f64,
    /// Squared cosine between `u*` and the left canonical variable.
    pub cos2_x: f64,
    /// Squared cosine between `v*` and the right canonical variable.
    pub cos2_y: f64,
}

/// Coefficients of the canonical variables in the bases `(u*, u_1, ...)` and
/// `(v*, v_1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalCoefficients {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta0: f64,
    pub beta: Vec<f64>,
}

struct VectorParts {
    q_alpha: f64,
    /// `T_i / (z - c_i^2)` per left basis vector.
    left: Vec<f64>,
    /// `W_j / (z - c_j^2)` per right basis vector.
    right: Vec<f64>,
}

fn vector_parts(z: f64, inp: &MasterInputs) -> Result<VectorParts, MasterError> {
    inp.check()?;
    let p = inp.cosines.len();
    let n = inp.u_star_v.len();
    let guard = POLE_GUARD * (1.0 + z.abs());
    for &c in &inp.cosines {
        if (z - c * c).abs() <= guard {
            return Err(MasterError::PoleProximity { z, pole: c * c });
        }
    }
    if n > p && z.abs() <= guard {
        return Err(MasterError::PoleProximity { z, pole: 0.0 });
    }
    let cos = |j: usize| if j < p { inp.cosines[j] } else { 0.0 };

    let mut a = inp.uv_star;
    let mut b = -inp.uu_star;
    let mut c = -inp.vv_star;
    for j in 0..n {
        let cj = cos(j);
        let d = z - cj * cj;
        let (p2, q2) = (inp.u_star_v[j], inp.v_star_v[j]);
        let (p1, q1) = if j < p { (inp.u_star_u[j], inp.v_star_u[j]) } else { (0.0, 0.0) };
        a += p2 * (cj * q1 - z * q2) / d;
        b += (p2 * p2 - 2.0 * cj * p2 * p1) / d;
        c += z * q2 * q2 / d;
        if j < p {
            a -= z * p1 * (q1 - cj * q2) / d;
            b += z * p1 * p1 / d;
            c += (q1 * q1 - 2.0 * cj * q1 * q2) / d;
        }
    }
    let scale = (inp.uu_star * inp.vv_star).sqrt();
    if a.abs() <= 1e-12 * scale {
        return Err(MasterError::DegenerateQ(z));
    }
    let q_alpha = b / a;
    let q_beta = c / a;
    let left = (0..p)
        .map(|i| {
            let ci = inp.cosines[i];
            let t = ci * inp.u_star_v[i]
                - z * inp.u_star_u[i]
                - z * q_alpha * (inp.v_star_u[i] - ci * inp.v_star_v[i]);
            t / (z - ci * ci)
        })
        .collect();
    let right = (0..n)
        .map(|j| {
            let cj = cos(j);
            let (p1, q1) = if j < p { (inp.u_star_u[j], inp.v_star_u[j]) } else { (0.0, 0.0) };
            let w = -z * q_beta * (inp.u_star_v[j] - cj * p1) + cj * q1 - z * inp.v_star_v[j];
            w / (z - cj * cj)
        })
        .collect();
    Ok(VectorParts {
        q_alpha,
        left,
        right,
    })
}

fn normalization(own: f64, overlaps: &[f64], ratios: &[f64]) -> (f64, f64) {
    let mut inv = own;
    let mut proj = own;
    for (o, r) in overlaps.iter().zip(ratios) {
        inv += 2.0 * o * r + r * r;
        proj += o * r;
    }
    (1.0 / inv, proj)
}

/// Coefficients `alpha0, beta0 >= ...` of the unit canonical variables at a root `z`.
///
/// `alpha0 > 0`; the right variable is oriented so the pair correlates positively.
pub fn canonical_coefficients(z: f64, inputs: &MasterInputs) -> Result<CanonicalCoefficients, MasterError> {
    let parts = vector_parts(z, inputs)?;
    let (a0sq, _) = normalization(inputs.uu_star, &inputs.u_star_u, &parts.left);
    let (b0sq, _) = normalization(inputs.vv_star, &inputs.v_star_v, &parts.right);
    let alpha0 = a0sq.max(0.0).sqrt();
    // From the stationarity conditions, beta0 = -alpha0 sqrt(z) Q_alpha up to normalization.
    let sign = if -parts.q_alpha >= 0.0 { 1.0 } else { -1.0 };
    let beta0 = sign * b0sq.max(0.0).sqrt();
    Ok(CanonicalCoefficients {
        alpha0,
        alpha: parts.left.iter().map(|r| alpha0 * r).collect(),
        beta0,
        beta: parts.right.iter().map(|r| beta0 * r).collect(),
    })
}

/// Squared coefficients and squared cosines with the signal rows at a root `z`.
pub fn master_vector_stats(z: f64, inputs: &MasterInputs) -> Result<VectorStats, MasterError> {
    let parts = vector_parts(z, inputs)?;
    let (alpha0_sq, proj_u) = normalization(inputs.uu_star, &inputs.u_star_u, &parts.left);
    let (beta0_sq, proj_v) = normalization(inputs.vv_star, &inputs.v_star_v, &parts.right);
    Ok(VectorStats {
        alpha0_sq,
        beta0_sq,
        cos2_x: (alpha0_sq * proj_u * proj_u / inputs.uu_star).clamp(0.0, 1.0),
        cos2_y: (beta0_sq * proj_v * proj_v / inputs.vv_star).clamp(0.0, 1.0),
    })
}

/// Roots of the PCA master equation.
#[derive(Debug, Clone, Serialize)]
pub struct PcaRoots {
    /// Squared singular values of the full matrix, descending.
    pub roots: Vec<f64>,
    /// Squared coefficient of the unit signal direction in each left singular vector.
    pub alpha0_sq: Vec<f64>,
}

/// Solves the PCA master equation for a signal row of length `lambda_star`
/// with unit direction overlaps `overlaps[i] = <u*, u_i>` against noise rows
/// with singular values `noise_singulars` (descending).
pub fn pca_master(lambda_star: f64, noise_singulars: &[f64], overlaps: &[f64]) -> Result<PcaRoots, MasterError> {
    if noise_singulars.len() != overlaps.len() {
        return Err(MasterError::Shape);
    }
    let l2 = lambda_star * lambda_star;
    let mut pinned = Vec::new();
    let mut active: Vec<(f64, f64)> = Vec::new();
    for (&sv, &w) in noise_singulars.iter().zip(overlaps) {
        let d = sv * sv;
        if w.abs() <= 1e-13 {
            pinned.push(d);
        } else {
            active.push((d, w * w));
        }
    }
    active.sort_by(|a, b| b.0.total_cmp(&a.0));
    for pair in active.windows(2) {
        if (pair[0].0 - pair[1].0).abs() <= REPEAT_TOL * (1.0 + pair[0].0) {
            return Err(MasterError::RepeatedSingular(pair[0].0.sqrt()));
        }
    }
    let sums = |a: f64| -> (f64, f64) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for &(d, w2) in &active {
            let r = d * w2 / (a - d);
            s1 += r;
            s2 += r / (a - d);
        }
        (s1, s2)
    };
    let h = |a: f64| l2 * (1.0 + sums(a).0) - a;
    // h decreases between consecutive poles, so plain bisection on the sign suffices.
    let solve = |mut lo: f64, mut hi: f64| -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut roots = pinned.clone();
    let top = active.first().map(|x| x.0).unwrap_or(0.0);
    let mut hi = top + l2 + 1.0;
    while h(hi) > 0.0 {
        hi *= 2.0;
    }
    roots.push(solve(top, hi));
    for pair in active.windows(2) {
        roots.push(solve(pair[1].0, pair[0].0));
    }
    if let Some(&(bottom, _)) = active.last() {
        if h(0.0) > 0.0 {
            roots.push(solve(0.0, bottom));
        } else {
            roots.push(0.0);
        }
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    let alpha0_sq = roots
        .iter()
        .map(|&a| {
            if pinned.iter().any(|&p| (p - a).abs() <= REPEAT_TOL * (1.0 + a)) && !active.is_empty() {
                return 0.0;
            }
            let (s1, s2) = sums(a);
            1.0 / (1.0 + a * s2 / (1.0 + s1))
        })
        .collect();
    Ok(PcaRoots { roots, alpha0_sq })
}

/// Which transform a [`StieltjesEval`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StieltjesSource {
    EmpiricalC,
    EmpiricalLambdaShifted,
    WachterClosedForm,
}

/// Value and derivative of a resolvent-type transform at `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StieltjesEval {
    pub z: f64,
    pub value: f64,
    pub derivative: f64,
    pub source: StieltjesSource,
}

/// Summation range for [`empirical_g`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GMode {
    /// All values.
    Direct,
    /// Values with 1-based index `l..=K`.
    Shifted(usize),
}

/// `(1/S) sum 1/(z - x_k)` over the selected values and its derivative.
pub fn empirical_g(z: f64, values: &[f64], s: usize, mode: GMode) -> Result<StieltjesEval, MasterError> {
    let (slice, source) = match mode {
        GMode::Direct => (values, StieltjesSource::EmpiricalC),
        GMode::Shifted(l) => {
            let start = l.saturating_sub(1).min(values.len());
            (&values[start..], StieltjesSource::EmpiricalLambdaShifted)
        }
    };
    let (mut g, mut dg) = (0.0, 0.0);
    for &x in slice {
        let d = z - x;
        if d.abs() <= 1e-6 {
            return Err(MasterError::PoleProximity { z, pole: x });
        }
        g += 1.0 / d;
        dg -= 1.0 / (d * d);
    }
    let sf = s as f64;
    Ok(StieltjesEval {
        z,
        value: g / sf,
        derivative: dg / sf,
        source,
    })
}

/// Closed-form transform packaged as a [`StieltjesEval`].
pub fn wachter_g(z: f64, regime: &AsymptoticRegime) -> Result<StieltjesEval, MasterError> {
    let (value, derivative) = regime
        .stieltjes_real(z)
        .map_err(|_| MasterError::PoleProximity { z, pole: regime.lambda_plus })?;
    Ok(StieltjesEval {
        z,
        value,
        derivative,
        source: StieltjesSource::WachterClosedForm,
    })
}

struct Asym {
    n1: f64,
    n2: f64,
    d: f64,
}

fn asym_parts(z: f64, g: f64, k: f64, m: f64) -> Result<Asym, MasterError> {
    if z.abs() < 1e-300 {
        return Err(MasterError::DenominatorVanishes(z));
    }
    let d = 1.0 - m - z * k - z * (1.0 - z) * g;
    if d.abs() <= 1e-14 {
        return Err(MasterError::DenominatorVanishes(z));
    }
    Ok(Asym {
        n1: 1.0 - 2.0 * k - (m - k) / z - (1.0 - z) * g,
        n2: 1.0 - k - m - (1.0 - z) * g,
        d,
    })
}

/// Asymptotic squared signal correlation implied by an outlier at `lambda`.
pub fn asymptotic_r2(lambda: f64, g: &StieltjesEval, regime: &AsymptoticRegime) -> Result<f64, MasterError> {
    let p = asym_parts(lambda, g.value, regime.k_ratio(), regime.m_ratio())?;
    Ok(lambda * p.n1 * p.n2 / (p.d * p.d))
}

/// Asymptotic squared cosines `(cos^2 theta_x, cos^2 theta_y)` for an outlier
/// at `lambda` and squared signal correlation `r_sq`.
pub fn asymptotic_cos2(
    lambda: f64,
    g: &StieltjesEval,
    r_sq: f64,
    regime: &AsymptoticRegime,
) -> Result<(f64, f64), MasterError> {
    if r_sq <= 0.0 {
        return Err(MasterError::DenominatorVanishes(lambda));
    }
    let (k, m) = (regime.k_ratio(), regime.m_ratio());
    let z = lambda;
    let (gv, gd) = (g.value, g.derivative);
    let p = asym_parts(z, gv, k, m)?;
    let qx = -p.n1 / p.d;
    let qy = -p.n2 / p.d;
    let zz = z * z - z;

    let num_x = 1.0 - k - z * qx * (k + (1.0 - z) * gv);
    let den_x = 1.0 - 2.0 * k - 2.0 * k * z * qx
        + gv * (2.0 * z - 1.0 + 2.0 * z * (2.0 * z - 1.0) * qx + z * z * qx * qx / r_sq)
        + zz * gd * (1.0 + 2.0 * z * qx + z * qx * qx / r_sq);

    let num_y = 1.0 - m - z * qy * (m + (1.0 - z) * gv + (1.0 - z) / z * (m - k));
    let den_y = 1.0 - 2.0 * m - 2.0 * k * z * qy
        + (m - k) * (1.0 + qy * qy / r_sq)
        + gv * (2.0 * z - 1.0 + 2.0 * z * (2.0 * z - 1.0) * qy + z * z * qy * qy / r_sq)
        + zz * gd * (1.0 + 2.0 * z * qy + z * qy * qy / r_sq);
    if den_x.abs() <= 1e-14 || den_y.abs() <= 1e-14 {
        return Err(MasterError::DenominatorVanishes(z));
    }
    Ok((num_x * num_x / den_x, num_y * num_y / den_y))
}

/// Squared-root factors `(x, y)` of the numerators in [`asymptotic_cos2`].
/// Both equal 1 when `g` is the closed-form transform and `lambda = z_rho`.
pub fn asymptotic_numerator_factors(
    lambda: f64,
    g: &StieltjesEval,
    regime: &AsymptoticRegime,
) -> Result<(f64, f64), MasterError> {
    let (k, m) = (regime.k_ratio(), regime.m_ratio());
    let z = lambda;
    let p = asym_parts(z, g.value, k, m)?;
    let qx = -p.n1 / p.d;
    let qy = -p.n2 / p.d;
    let fx = 1.0 - k - z * qx * (k + (1.0 - z) * g.value);
    let fy = 1.0 - m - z * qy * (m + (1.0 - z) * g.value + (1.0 - z) / z * (m - k));
    Ok((fx, fy))
}
