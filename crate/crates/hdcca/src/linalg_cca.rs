//! Sample and population canonical correlation analysis, canonical bases of
//! a pair of subspaces, PCA spectra and angles between vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Largest admissible condition number of a Gram matrix `X X^T`.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Squared correlations closer than this are reported as ties.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CcaError {
    #[error("{side} matrix is rank deficient (Gram condition number {condition:.3e})")]
    RankDeficient { side: &'static str, condition: f64 },
    #[error("sample counts differ: {left} vs {right}")]
    SampleMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("covariance block {0} is not positive definite")]
    SingularCovariance(&'static str),
    #[error("covariance block shapes are inconsistent")]
    CovarianceShape,
    #[error("angle undefined for a zero vector")]
    ZeroVector,
    #[error("canonical bases need the left subspace to be at most as large as the right one ({left} > {right})")]
    BasisOrder { left: usize, right: usize },
}

/// Result of a sample CCA between a `K x S` matrix `U` and an `M x S` matrix `V`.
///
/// Column `i` of each matrix belongs to the `i`-th squared correlation. There
/// are `min(K, M)` of them. Left quantities always refer to `U`.
#[derive(Debug, Clone)]
pub struct CcaResult {
    pub correlations_sq: Vec<f64>,
    /// `K x r` matrix of weight vectors for `U`.
    pub left_weights: DMatrix<f64>,
    /// `M x r` matrix of weight vectors for `V`.
    pub right_weights: DMatrix<f64>,
    /// `S x r` unit canonical variables `U^T alpha_i / |U^T alpha_i|`.
    pub left_variables: DMatrix<f64>,
    /// `S x r` unit canonical variables `V^T beta_i / |V^T beta_i|`.
    pub right_variables: DMatrix<f64>,
    pub swapped: bool,
    /// Indices `i` with `lambda_i - lambda_{i+1} < TIE_TOL`.
    pub ties: Vec<usize>,
}

/// Orthonormal bases of two subspaces with diagonal cross products.
#[derive(Debug, Clone)]
pub struct CanonicalBasis {
    /// `S x p` orthonormal columns.
    pub u_basis: DMatrix<f64>,
    /// `S x n` orthonormal columns, `n >= p`.
    pub v_basis: DMatrix<f64>,
    /// `c_1 >= ... >= c_p`; the cosines of the remaining `v` columns are zero.
    pub cosines: Vec<f64>,
}

impl CanonicalBasis {
    /// Cosine paired with `v` column `j`, zero beyond the left dimension.
    pub fn cosine(&self, j: usize) -> f64 {
        self.cosines.get(j).copied().unwrap_or(0.0)
    }
}

/// Joint covariance of two random vectors split into blocks.
#[derive(Debug, Clone)]
pub struct PopulationSpec {
    pub cov_uu: DMatrix<f64>,
    pub cov_uv: DMatrix<f64>,
    pub cov_vv: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PopulationCca {
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors of `Suu^-1 Suv Svv^-1 Svu`, one per column.
    pub left_vectors: DMatrix<f64>,
    /// Unit-norm eigenvectors of `Svv^-1 Svu Suu^-1 Suv`, one per column.
    pub right_vectors: DMatrix<f64>,
}

impl PopulationSpec {
    /// Identity covariances with `cov(u_q, v_q) = r_q` for the leading coordinates.
    pub fn leading_signals(k: usize, m: usize, strengths: &[f64]) -> Self {
        let mut cov_uv = DMatrix::zeros(k, m);
        for (q, &r) in strengths.iter().enumerate() {
            cov_uv[(q, q)] = r;
        }
        Self {
            cov_uu: DMatrix::identity(k, k),
            cov_uv,
            cov_vv: DMatrix::identity(m, m),
        }
    }

    /// Squared correlation between `alpha^T u` and `beta^T v`.
    pub fn signal_r2(&self, alpha: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        let c_uv = alpha.dot(&(&self.cov_uv * beta));
        let c_uu = alpha.dot(&(&self.cov_uu * alpha));
        let c_vv = beta.dot(&(&self.cov_vv * beta));
        c_uv * c_uv / (c_uu * c_vv)
    }

    /// The full `(K + M) x (K + M)` covariance matrix.
    pub fn joint(&self) -> DMatrix<f64> {
        let (k, m) = (self.cov_uu.nrows(), self.cov_vv.nrows());
        let mut j = DMatrix::zeros(k + m, k + m);
        j.view_mut((0, 0), (k, k)).copy_from(&self.cov_uu);
        j.view_mut((0, k), (k, m)).copy_from(&self.cov_uv);
        j.view_mut((k, 0), (m, k)).copy_from(&self.cov_uv.transpose());
        j.view_mut((k, k), (m, m)).copy_from(&self.cov_vv);
        j
    }
}

/// Orthonormal basis of the row space of an `N x S` matrix together with the
/// map from basis coordinates to row weights.
struct RowSpace {
    /// `S x r` orthonormal columns.
    q: DMatrix<f64>,
    /// `N x r`; weights `w = map * a` satisfy `X^T w = q a`.
    map: DMatrix<f64>,
}

fn row_space(x: &DMatrix<f64>, side: &'static str) -> Result<RowSpace, CcaError> {
    let (n, s) = x.shape();
    if n == 0 {
        return Ok(RowSpace {
            q: DMatrix::zeros(s, 0),
            map: DMatrix::zeros(0, 0),
        });
    }
    if n < s {
        let qr = x.transpose().qr();
        let r = qr.r();
        let sv = r.singular_values();
        let (max, min) = sv
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
        let condition = if min > 0.0 { (max / min).powi(2) } else { f64::INFINITY };
        if condition > MAX_GRAM_CONDITION {
            return Err(CcaError::RankDeficient { side, condition });
        }
        let map = r
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or(CcaError::RankDeficient { side, condition })?;
        return Ok(RowSpace { q: qr.q(), map });
    }
    // At least as many rows as samples: the Gram matrix is singular by
    // construction, so keep the numerical row space and use minimum-norm weights.
    let svd = x.transpose().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&i| sv[i] > max * 1e-10 * (n.max(s) as f64))
        .collect();
    let mut q = DMatrix::zeros(s, keep.len());
    let mut map = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &u.column(i));
        let w = v_t.row(i).transpose() / sv[i];
        map.set_column(c, &w);
    }
    Ok(RowSpace { q, map })
}

/// Largest-magnitude coordinate positive.
fn sign_of_largest(v: &DVector<f64>) -> f64 {
    let mut best = 0.0f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn sorted_svd(
    c: &DMatrix<f64>,
) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (p, n) = c.shape();
    let r = p.min(n);
    if r == 0 {
        return (Vec::new(), DMatrix::zeros(p, 0), DMatrix::zeros(n, 0));
    }
    let svd = c.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut a = DMatrix::zeros(p, r);
    let mut b = DMatrix::zeros(n, r);
    let mut sv = Vec::with_capacity(r);
    for (c, &i) in order.iter().enumerate() {
        a.set_column(c, &u.column(i));
        b.set_column(c, &v_t.row(i).transpose());
        sv.push(svd.singular_values[i].clamp(0.0, 1.0));
    }
    (sv, a, b)
}

fn check_samples(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(), CcaError> {
    if u.ncols() != v.ncols() {
        return Err(CcaError::SampleMismatch {
            left: u.ncols(),
            right: v.ncols(),
        });
    }
    if u.nrows() == 0 || v.nrows() == 0 || u.ncols() == 0 {
        return Err(CcaError::Empty("data matrix"));
    }
    Ok(())
}

/// Squared sample canonical correlations only, sorted descending.
pub fn sample_correlations(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>, CcaError> {
    check_samples(u, v)?;
    let ru = row_space(u, "left")?;
    let rv = row_space(v, "right")?;
    let c = ru.q.transpose() * &rv.q;
    let mut sv: Vec<f64> = c.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(u.nrows().min(v.nrows()));
    Ok(sv.into_iter().map(|s| s * s).collect())
}

/// Sample CCA of the rows of `U` (`K x S`) against the rows of `V` (`M x S`).
pub fn sample_cca(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<CcaResult, CcaError> {
    check_samples(u, v)?;
    let swapped = u.nrows() > v.nrows();
    let (a_mat, b_mat) = if swapped { (v, u) } else { (u, v) };
    let ra = row_space(a_mat, if swapped { "right" } else { "left" })?;
    let rb = row_space(b_mat, if swapped { "left" } else { "right" })?;
    let c = ra.q.transpose() * &rb.q;
    let (sv, a, b) = sorted_svd(&c);

    let r = a_mat.nrows().min(b_mat.nrows());
    let s = u.ncols();
    let mut wa = DMatrix::zeros(a_mat.nrows(), r);
    let mut wb = DMatrix::zeros(b_mat.nrows(), r);
    let mut xa = DMatrix::zeros(s, r);
    let mut xb = DMatrix::zeros(s, r);
    let mut lambdas = vec![0.0; r];
    for i in 0..sv.len().min(r) {
        let mut ai = a.column(i).into_owned();
        let mut bi = b.column(i).into_owned();
        let mut alpha = &ra.map * &ai;
        let mut beta = &rb.map * &bi;
        let sign = sign_of_largest(if swapped { &beta } else { &alpha });
        ai *= sign;
        bi *= sign;
        alpha *= sign;
        beta *= sign;
        wa.set_column(i, &alpha);
        wb.set_column(i, &beta);
        xa.set_column(i, &(&ra.q * &ai));
        xb.set_column(i, &(&rb.q * &bi));
        lambdas[i] = sv[i] * sv[i];
    }
    let ties = (0..r.saturating_sub(1))
        .filter(|&i| lambdas[i] - lambdas[i + 1] < TIE_TOL)
        .collect();
    let (left_weights, right_weights, left_variables, right_variables) = if swapped {
        (wb, wa, xb, xa)
    } else {
        (wa, wb, xa, xb)
    };
    Ok(CcaResult {
        correlations_sq: lambdas,
        left_weights,
        right_weights,
        left_variables,
        right_variables,
        swapped,
        ties,
    })
}

/// Orthonormal bases of the row spaces of `U_sub` (`p x S`) and `V_sub`
/// (`n x S`, `n >= p`) with `<u_i, v_j> = c_i delta_ij`.
pub fn canonical_bases(u_sub: &DMatrix<f64>, v_sub: &DMatrix<f64>) -> Result<CanonicalBasis, CcaError> {
    if u_sub.ncols() != v_sub.ncols() {
        return Err(CcaError::SampleMismatch {
            left: u_sub.ncols(),
            right: v_sub.ncols(),
        });
    }
    let (p, n) = (u_sub.nrows(), v_sub.nrows());
    if p > n {
        return Err(CcaError::BasisOrder { left: p, right: n });
    }
    let ru = row_space(u_sub, "left")?;
    let rv = row_space(v_sub, "right")?;
    let s = u_sub.ncols();
    if ru.q.ncols() < p || rv.q.ncols() < n {
        return Err(CcaError::RankDeficient {
            side: "subspace",
            condition: f64::INFINITY,
        });
    }
    let c = ru.q.transpose() * &rv.q;
    let (cosines, a, b) = sorted_svd(&c);

    let u_basis = &ru.q * &a;
    let mut coords = DMatrix::zeros(n, n);
    coords.view_mut((0, 0), (n, p)).copy_from(&b);
    if n > p {
        // Complete b to an orthonormal basis of R^n via the projector onto its complement.
        let proj = DMatrix::identity(n, n) - &b * b.transpose();
        let eig = SymmetricEigen::new(proj);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        for (c, &i) in order.iter().take(n - p).enumerate() {
            coords.set_column(p + c, &eig.eigenvectors.column(i));
        }
    }
    let v_basis = &rv.q * coords;
    debug_assert_eq!(u_basis.nrows(), s);
    Ok(CanonicalBasis {
        u_basis,
        v_basis,
        cosines,
    })
}

/// Population CCA: eigen-decomposition of `Suu^-1 Suv Svv^-1 Svu`.
pub fn population_cca(spec: &PopulationSpec) -> Result<PopulationCca, CcaError> {
    let (k, m) = (spec.cov_uu.nrows(), spec.cov_vv.nrows());
    if spec.cov_uu.ncols() != k || spec.cov_vv.ncols() != m || spec.cov_uv.shape() != (k, m) {
        return Err(CcaError::CovarianceShape);
    }
    let lu = spec
        .cov_uu
        .clone()
        .cholesky()
        .ok_or(CcaError::SingularCovariance("uu"))?
        .l();
    let lv = spec
        .cov_vv
        .clone()
        .cholesky()
        .ok_or(CcaError::SingularCovariance("vv"))?
        .l();
    // W = Lu^-1 Suv Lv^-T
    let t = lu
        .solve_lower_triangular(&spec.cov_uv)
        .ok_or(CcaError::SingularCovariance("uu"))?;
    let w = lv
        .solve_lower_triangular(&t.transpose())
        .ok_or(CcaError::SingularCovariance("vv"))?
        .transpose();
    let (sv, a, b) = sorted_svd(&w);
    let lut = lu.transpose();
    let lvt = lv.transpose();
    let mut left = lut
        .solve_upper_triangular(&a)
        .ok_or(CcaError::SingularCovariance("uu"))?;
    let mut right = lvt
        .solve_upper_triangular(&b)
        .ok_or(CcaError::SingularCovariance("vv"))?;
    for mut col in left.column_iter_mut().chain(right.column_iter_mut()) {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        let sign = sign_of_largest(&col.clone_owned());
        col *= sign;
    }
    let mut eigenvalues: Vec<f64> = sv.iter().map(|s| s * s).collect();
    eigenvalues.resize(k, 0.0);
    Ok(PopulationCca {
        eigenvalues,
        left_vectors: left,
        right_vectors: right,
    })
}

/// Subtracts each row's mean.
pub fn demean_rows(x: &mut DMatrix<f64>) {
    let s = x.ncols();
    if s == 0 {
        return;
    }
    for mut row in x.row_iter_mut() {
        let mean = row.sum() / s as f64;
        row.add_scalar_mut(-mean);
    }
}

/// Descending eigenvalues of `X X^T / S`.
pub fn pca_spectrum(x: &DMatrix<f64>, demean: bool) -> Vec<f64> {
    let (n, s) = x.shape();
    if n == 0 || s == 0 {
        return vec![0.0; n];
    }
    let mut x = x.clone();
    if demean {
        demean_rows(&mut x);
    }
    let mut ev: Vec<f64> = x.singular_values().iter().map(|v| v * v / s as f64).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.resize(n, 0.0);
    ev
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle {
    pub cos_sq: f64,
    pub sin_sq: f64,
    pub degrees: f64,
}

/// Angle between the lines spanned by `x` and `y`.
pub fn angle_between(x: &[f64], y: &[f64]) -> Result<Angle, CcaError> {
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xx += a * a;
        yy += b * b;
        xy += a * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(CcaError::ZeroVector);
    }
    let cos_sq = (xy * xy / (xx * yy)).clamp(0.0, 1.0);
    let sin_sq = 1.0 - cos_sq;
    let degrees = sin_sq.sqrt().atan2(cos_sq.sqrt()).to_degrees();
    Ok(Angle {
        cos_sq,
        sin_sq,
        degrees,
    })
}
