mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use polaron_core::electron::{ground_state, EigenOptions, Lattice, ResolventOptions};
use polaron_core::fluctuations::fock::{fock_generator, FockSpace};
use polaron_core::fluctuations::{assemble_kernel, bogoliubov_step, moments, quadratic_generator, BogoliubovState, KernelF};
use polaron_core::grid::Grid;
use polaron_core::krylov::HermitianOp;
use polaron_core::landau_pekar::gaussian_field;

#[test]
fn kernel_matches_dense_resolvent() {
    let (n, l) = (16, 4.0);
    let lat = Lattice::new(Grid::new(1, n, l).unwrap(), 2.5).unwrap();
    let phi = gaussian_field(&lat, -2.0, 1.5, 0.3);
    let v = lat.potential(&phi);
    let gs = ground_state(&lat.grid, &v, &EigenOptions::default(), None).unwrap();
    let k = assemble_kernel(&lat, &gs, &ResolventOptions { cg_tol: 1e-13, max_iter: 5000 }, None).unwrap();

    let (vals, vecs) = sorted_eigen(&dense_h_1d(n, l, &v));
    let mut r = DMatrix::<C64>::zeros(n, n);
    for j in 1..n {
        let c = vecs.column(j);
        r += &c * c.adjoint() / C64::new(vals[j] - vals[0], 0.0);
    }
    let dx = lat.grid.dx();
    let pos: Vec<f64> = (0..n).map(|i| -l + i as f64 * dx).collect();
    let m = lat.n_modes();
    // unit-normalized psi from the dense problem, phase irrelevant for F
    let psi = vecs.column(0).into_owned();
    let src: Vec<DVector<C64>> = (0..m)
        .map(|j| {
            let kx = lat.grid.k_vector(lat.modes.lattice_index(j))[0];
            DVector::from_fn(n, |x, _| C64::from_polar(1.0, kx * pos[x]) * psi[x])
        })
        .collect();
    let mut worst: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            let exact = src[a].dotc(&(&r * &src[b])) * lat.coupling[a] * lat.coupling[b];
            worst = worst.max((exact - k.f[(a, b)]).norm());
        }
        assert!(k.f[(a, a)].re >= 0.0 && k.f[(a, a)].im == 0.0);
    }
    assert!(worst < 1e-8, "entrywise error {worst:e}");
    assert!(k.hermiticity_defect < 1e-10);
    let tr: f64 = (0..m).map(|a| k.f[(a, a)].re).sum::<f64>() * lat.grid.dk();
    assert!((k.trace_term - tr).abs() < 1e-12);
}

/// Truncated single-mode lowering operator, `cap + 1` levels.
fn lowering(cap: usize) -> DMatrix<C64> {
    DMatrix::from_fn(cap + 1, cap + 1, |r, c| if c == r + 1 { C64::new((c as f64).sqrt(), 0.0) } else { C64::new(0.0, 0.0) })
}

/// Operator on mode `which` of two modes, as a Kronecker product.
fn on_mode(op: &DMatrix<C64>, which: usize) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(op.nrows(), op.nrows());
    if which == 0 { op.kronecker(&id) } else { id.kronecker(op) }
}

#[test]
fn two_mode_generator_matches_operator_expansion() {
    // alpha^2 A = sum W(-j,-l) B_j B*_l + W(-j,l) B_j B_l + W(j,-l) B*_j B*_l + W(j,l) B*_j B_l
    let w = DMatrix::from_row_slice(2, 2, &[C64::new(0.3, 0.0), C64::new(0.07, 0.02), C64::new(0.07, -0.02), C64::new(0.21, 0.0)]);
    let alpha = 1.7;
    let pairs = [1usize, 0];
    let blocks = quadratic_generator(&KernelF::from_matrix(w.clone(), 1.0), &pairs, 1.0).unwrap();
    let cap = 8;
    let b = [on_mode(&lowering(cap), 0), on_mode(&lowering(cap), 1)];
    let bd = [b[0].adjoint(), b[1].adjoint()];
    let dim = (cap + 1) * (cap + 1);
    let mut a = DMatrix::<C64>::zeros(dim, dim);
    let mut num = DMatrix::<C64>::zeros(dim, dim);
    for j in 0..2 {
        num += &bd[j] * &b[j];
        for l in 0..2 {
            let (mj, ml) = (pairs[j], pairs[l]);
            a += &b[j] * &bd[l] * w[(mj, ml)] + &b[j] * &b[l] * w[(mj, l)] + &bd[j] * &bd[l] * w[(j, ml)] + &bd[j] * &b[l] * w[(j, l)];
        }
    }
    let reference = (num - a) / C64::new(alpha * alpha, 0.0);

    let n_max = 6;
    let space = FockSpace::new(2, n_max);
    let gen = fock_generator(&space, &blocks, alpha);
    // compare on inputs in shells <= n_max - 2, where truncation does not bite
    for i in 0..space.dim() {
        if space.total(i) + 2 > n_max {
            continue;
        }
        let mut x = vec![C64::new(0.0, 0.0); space.dim()];
        x[i] = C64::new(1.0, 0.0);
        let mut y = vec![C64::new(0.0, 0.0); space.dim()];
        gen.apply(&x, &mut y);
        let occ = space.occupations(i);
        let col = occ[0] as usize * (cap + 1) + occ[1] as usize;
        for (k, yk) in y.iter().enumerate() {
            let o = space.occupations(k);
            let row = o[0] as usize * (cap + 1) + o[1] as usize;
            assert!((yk - reference[(row, col)]).norm() < 1e-13, "state {i} -> {k}");
        }
    }
}

#[test]
fn two_mode_squeezing_closed_form() {
    // W = w I gives eps (n0 + n1) + lambda (B0* B1* + h.c.), eps = 1 - 2w, lambda = -2w
    let w = 0.15;
    let alpha = 2.0;
    let blocks = quadratic_generator(&KernelF::from_matrix(DMatrix::identity(2, 2) * C64::new(w, 0.0), 1.0), &[1, 0], 1.0).unwrap();
    let (eps, lam) = (1.0 - 2.0 * w, -2.0 * w);
    let om = (eps * eps - lam * lam).sqrt();
    let mut s = BogoliubovState::vacuum(2);
    let dt = 0.002;
    for step in 1..=2000 {
        s = bogoliubov_step(&s, &blocks, alpha, dt).unwrap();
        if step % 500 == 0 {
            let tau = step as f64 * dt / (alpha * alpha);
            let n1 = (lam / om * (om * tau).sin()).powi(2);
            let mo = moments(&s, alpha);
            assert!((mo.n_expect - 2.0 * n1 / (alpha * alpha)).abs() < 1e-7, "{} vs {}", mo.n_expect, 2.0 * n1 / (alpha * alpha));
            assert!((mo.vacuum_overlap.norm() - 1.0 / (1.0 + n1).sqrt()).abs() < 1e-7);
        }
    }
}
