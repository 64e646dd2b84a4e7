mod common;

use common::*;
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use polaron_core::electron::{apply_h, apply_resolvent, ground_state, EigenOptions, ResolventOptions};
use polaron_core::grid::Grid;

const N: usize = 16;
const L: f64 = 4.0;

#[test]
fn kinetic_matches_fourier_sum() {
    let g = Grid::new(1, N, L).unwrap();
    let t = dense_kinetic_1d(N, L);
    let x = random_vector(N, 3);
    let dense = &t * DVector::from_column_slice(&x);
    assert!(max_diff(&g.apply_kinetic(&x), dense.as_slice()) < 1e-11);
}

#[test]
fn ground_state_matches_dense_diagonalization() {
    let g = Grid::new(1, N, L).unwrap();
    for seed in 0..4 {
        let v = random_potential(N, 6.0, seed);
        let (vals, vecs) = sorted_eigen(&dense_h_1d(N, L, &v));
        let gs = ground_state(&g, &v, &EigenOptions::default(), None).unwrap();
        assert!((gs.e - vals[0]).abs() < 1e-9, "seed {seed}: {} vs {}", gs.e, vals[0]);
        assert!((gs.gap - (vals[1] - vals[0])).abs() < 1e-8);
        // psi carries the grid weight; the dense vector is plain-normalized
        let w = g.dx().sqrt();
        let ov: C64 = (0..N).map(|i| vecs[(i, 0)].conj() * gs.psi_gs[i] * w).sum();
        assert!((ov.norm() - 1.0).abs() < 1e-9);
        let s: C64 = gs.psi_gs.iter().sum();
        assert!(s.re > 0.0 && s.im.abs() < 1e-12);
        let r = apply_h(&g, &v, &gs.psi_gs);
        let res: f64 = r.iter().zip(&gs.psi_gs).map(|(a, b)| (a - b * gs.e).norm_sqr()).sum::<f64>().sqrt() * w;
        assert!(res < 1e-8);
    }
}

#[test]
fn resolvent_matches_spectral_sum() {
    let g = Grid::new(1, N, L).unwrap();
    let v = random_potential(N, 6.0, 11);
    let (vals, vecs) = sorted_eigen(&dense_h_1d(N, L, &v));
    let gs = ground_state(&g, &v, &EigenOptions::default(), None).unwrap();
    let x = random_vector(N, 5);
    let xv = DVector::from_column_slice(&x);
    let mut exact = DVector::<C64>::zeros(N);
    for n in 1..N {
        let col = vecs.column(n);
        let c = col.dotc(&xv);
        exact += col * (c / (vals[n] - vals[0]));
    }
    let y = apply_resolvent(&g, &gs, &x, &ResolventOptions { cg_tol: 1e-12, max_iter: 5000 }).unwrap();
    let scale = exact.iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(max_diff(&y, exact.as_slice()) < 1e-8 * scale);
}
