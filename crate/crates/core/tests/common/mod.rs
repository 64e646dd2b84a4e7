//! Dense reference matrices built straight from the definitions, without
//! going through the FFT-based operators under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `-Laplacian` on `n` points of `[-l, l)` as the Fourier sum
/// `(1/n) sum_m (m dk)^2 e^{i m dk (x - y)}`, `m = -n/2 .. n/2 - 1`.
pub fn dense_kinetic_1d(n: usize, l: f64) -> DMatrix<C64> {
    let dk = std::f64::consts::PI / l;
    let dx = 2.0 * l / n as f64;
    let half = (n / 2) as i64;
    DMatrix::from_fn(n, n, |a, b| {
        let r = (a as f64 - b as f64) * dx;
        (-half..half).map(|m| {
            let k = m as f64 * dk;
            C64::from_polar(k * k, k * r)
        }).sum::<C64>() / n as f64
    })
}

pub fn dense_h_1d(n: usize, l: f64, v: &[f64]) -> DMatrix<C64> {
    let mut h = dense_kinetic_1d(n, l);
    for i in 0..n {
        h[(i, i)] += v[i];
    }
    h
}

/// Eigenpairs sorted by eigenvalue.
pub fn sorted_eigen(h: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let e = SymmetricEigen::new(h.clone());
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|a, b| e.eigenvalues[*a].partial_cmp(&e.eigenvalues[*b]).unwrap());
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(h.nrows(), idx.len(), |r, c| e.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

pub fn expm_hermitian(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let e = SymmetricEigen::new(h.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| C64::from_polar(1.0, -l * t)));
    &e.eigenvectors * d * e.eigenvectors.adjoint()
}

pub fn random_potential(n: usize, depth: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| -depth * rng.random_range(0.0..1.0)).collect()
}

pub fn random_vector(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

pub fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
