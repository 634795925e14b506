#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `K x S` and `M x S` Gaussian matrices whose first rows have correlation `r`.
pub fn planted_pair(rng: &mut ChaCha8Rng, k: usize, m: usize, s: usize, r: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let u = gaussian(rng, k, s);
    let mut v = gaussian(rng, m, s);
    let w = (1.0 - r * r).sqrt();
    for j in 0..s {
        v[(0, j)] = r * u[(0, j)] + w * v[(0, j)];
    }
    (u, v)
}

/// Eigenvalues of `(UU^T)^-1 U V^T (V V^T)^-1 V U^T` by explicit inversion, descending.
pub fn gram_inverse_cca(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
    let vv = v * v.transpose();
    let uv = u * v.transpose();
    let vv_inv = vv.try_inverse().expect("invertible");
    // Symmetrize through the Cholesky factor of UU^T so the eigen solver is symmetric.
    let l = (u * u.transpose()).cholesky().expect("spd").l();
    let l_inv = l.clone().try_inverse().expect("invertible");
    let mat = &l_inv * &uv * &vv_inv * uv.transpose() * l_inv.transpose();
    let mut ev: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}
