//! Lanczos approximation of `exp(-i H t) v` for Hermitian operators given
//! only through their action.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::grid::{axpy, dot, norm_sq};

pub trait HermitianOp {
    fn dim(&self) -> usize;
    /// `y = H x`; `y` is overwritten.
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

/// Adapter for closures.
pub struct FnOp<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[C64], &mut [C64])> HermitianOp for FnOp<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        (self.f)(x, y)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    #[error("vector length {found} does not match operator dimension {expected}")]
    Length { expected: usize, found: usize },
    #[error("Krylov step could not reach tolerance {tol:.1e} (estimate {estimate:.3e} at step {step:.3e})")]
    Breakdown { tol: f64, estimate: f64, step: f64 },
}

#[derive(Clone, Debug)]
pub struct KrylovOptions {
    pub max_dim: usize,
    /// Bound on the a-posteriori error estimate per substep.
    pub tol: f64,
    pub min_step: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { max_dim: 40, tol: 1e-12, min_step: 1e-9 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct KrylovReport {
    pub substeps: usize,
    pub max_dim_used: usize,
    pub max_estimate: f64,
}

/// `exp(-i H t) v`, advancing in substeps whose Krylov error estimate is
/// below `opts.tol`. Negative `t` is allowed.
pub fn expm_apply(
    op: &dyn HermitianOp,
    v: &[C64],
    t: f64,
    opts: &KrylovOptions,
) -> Result<(Vec<C64>, KrylovReport), KrylovError> {
    let n = op.dim();
    if v.len() != n {
        return Err(KrylovError::Length { expected: n, found: v.len() });
    }
    let mut report = KrylovReport::default();
    let mut w = v.to_vec();
    let mut remaining = t;
    let sign = t.signum();
    while remaining.abs() > 0.0 {
        let beta0 = norm_sq(&w).sqrt();
        if beta0 == 0.0 {
            break;
        }
        let mut basis: Vec<Vec<C64>> = vec![w.iter().map(|z| z / beta0).collect()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut scratch = vec![C64::new(0.0, 0.0); n];
        let mut breakdown = false;
        let mut hnorm: f64 = 0.0;
        for j in 0..opts.max_dim {
            op.apply(&basis[j], &mut scratch);
            let a = dot(&basis[j], &scratch).re;
            alphas.push(a);
            let mut r = scratch.clone();
            // full reorthogonalization, twice
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &r);
                    axpy(-c, b, &mut r);
                }
            }
            let beta = norm_sq(&r).sqrt();
            hnorm = hnorm.max(a.abs() + beta + betas.last().copied().unwrap_or(0.0));
            if beta <= 1e-13 * hnorm.max(1.0) {
                breakdown = true;
                break;
            }
            betas.push(beta);
            if j + 1 < opts.max_dim {
                basis.push(r.iter().map(|z| z / beta).collect());
            }
            // early exit once the full remaining step is already accurate
            if j >= 3 {
                let est = estimate(&alphas, &betas, remaining) * beta0;
                if est <= opts.tol {
                    break;
                }
            }
        }
        let m = alphas.len();
        report.max_dim_used = report.max_dim_used.max(m);
        let mut h = remaining;
        let mut est = if breakdown { 0.0 } else { estimate(&alphas, &betas[..m.min(betas.len())], h) * beta0 };
        while est > opts.tol {
            h *= 0.5;
            if h.abs() < opts.min_step {
                return Err(KrylovError::Breakdown { tol: opts.tol, estimate: est, step: h });
            }
            est = estimate(&alphas, &betas[..m.min(betas.len())], h) * beta0;
        }
        report.max_estimate = report.max_estimate.max(est);
        let coeffs = small_exp_column(&alphas, &betas[..m.saturating_sub(1)], h);
        let mut next = vec![C64::new(0.0, 0.0); n];
        for (b, c) in basis.iter().zip(&coeffs) {
            axpy(c * beta0, b, &mut next);
        }
        w = next;
        remaining -= h;
        report.substeps += 1;
        if remaining * sign <= 0.0 {
            break;
        }
    }
    Ok((w, report))
}

/// First column of `exp(-i T h)` for the tridiagonal `T` with diagonal
/// `alphas` and off-diagonal `betas` (length `alphas.len() - 1`).
fn small_exp_column(alphas: &[f64], betas: &[f64], h: f64) -> Vec<C64> {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (0..m)
        .map(|r| {
            (0..m)
                .map(|k| {
                    let q = eig.eigenvectors[(r, k)] * eig.eigenvectors[(0, k)];
                    C64::from_polar(q, -eig.eigenvalues[k] * h)
                })
                .sum()
        })
        .collect()
}

/// `beta_m |[exp(-i T h)]_{m-1, 0}|`, the standard Lanczos residual estimate.
fn estimate(alphas: &[f64], betas: &[f64], h: f64) -> f64 {
    let m = alphas.len();
    if betas.len() < m {
        return 0.0;
    }
    let col = small_exp_column(alphas, &betas[..m - 1], h);
    betas[m - 1] * col[m - 1].norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<C64>::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    fn dense_exp(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
        let eig = SymmetricEigen::new(h.clone());
        let d = DMatrix::<C64>::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -l * t)));
        &eig.eigenvectors * d * eig.eigenvectors.adjoint()
    }

    #[test]
    fn matches_dense_exponential() {
        let n = 60;
        let h = random_hermitian(n, 7);
        let op = FnOp {
            dim: n,
            f: |x: &[C64], y: &mut [C64]| {
                let xv = nalgebra::DVector::from_column_slice(x);
                y.copy_from_slice((&h * xv).as_slice());
            },
        };
        let v: Vec<C64> = (0..n).map(|i| C64::new((i as f64).cos(), 0.1 * i as f64 / n as f64)).collect();
        for &t in &[0.3, -1.7, 5.0] {
            let (out, rep) = expm_apply(&op, &v, t, &KrylovOptions::default()).unwrap();
            let exact = dense_exp(&h, t) * nalgebra::DVector::from_column_slice(&v);
            let err = out.iter().zip(exact.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "t={t} err={err} substeps={}", rep.substeps);
            assert!((norm_sq(&out) - norm_sq(&v)).abs() < 1e-12 * norm_sq(&v));
        }
    }

    #[test]
    fn eigenvector_only_picks_up_phase() {
        let n = 8;
        let diag: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 1.0).collect();
        let op = FnOp {
            dim: n,
            f: |x: &[C64], y: &mut [C64]| {
                for i in 0..x.len() {
                    y[i] = x[i] * diag[i];
                }
            },
        };
        let mut v = vec![C64::new(0.0, 0.0); n];
        v[3] = C64::new(1.0, 0.0);
        let (out, _) = expm_apply(&op, &v, 0.9, &KrylovOptions::default()).unwrap();
        assert!((out[3] - C64::from_polar(1.0, -diag[3] * 0.9)).norm() < 1e-12);
    }
}
