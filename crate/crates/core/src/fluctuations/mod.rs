//! Quadratic fluctuation dynamics `i d/dt Y = (N - A_t) Y`.
//!
//! Mode operators are normalized, `B_j = alpha dk^{d/2} a(k_j)` with
//! `[B_j, B*_l] = delta_jl`, so `N = alpha^{-2} sum B*_j B_j` and
//!
//! ```text
//! N - A_t = alpha^{-2} [ B* P B + (B* Q B* + h.c.) - c0 ]
//! P(a,b) = delta_ab - W(a,b) - W(-b,-a)
//! Q(a,b) = -1/2 [ W(a,-b) + W(b,-a) ]
//! W      = dk^d F,   c0 = tr W
//! ```
//!
//! where `-j` is the mode paired with `j`. The Gaussian path tracks the
//! linear map `B(t) = U B + V B*` through `u = U`, `v = conj(V)`.

pub mod fock;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::electron::{apply_resolvent, ElectronError, GroundStateData, Lattice, ResolventOptions};
use crate::grid::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluctuationError {
    #[error(transparent)]
    Electron(#[from] ElectronError),
    #[error("pairing table does not match kernel size {0}")]
    Pairing(usize),
    #[error("symplectic invariants violated: drift {0:.3e}")]
    Invariant(f64),
    #[error("singular implicit-midpoint system")]
    Singular,
    #[error("gap {gap:.4e} is below floor {floor:.4e}")]
    Gap { gap: f64, floor: f64 },
}

/// `F(j,l) = g_j g_l <e^{i k_j x} psi, R e^{i k_l x} psi>` on the mode set.
#[derive(Clone, Debug)]
pub struct KernelF {
    pub f: DMatrix<C64>,
    /// `max |F - F^dagger|` before symmetrization.
    pub hermiticity_defect: f64,
    /// `dk^d sum_j F(j,j)`.
    pub trace_term: f64,
    pub t: f64,
}

impl KernelF {
    pub fn zeros(m: usize) -> Self {
        Self { f: DMatrix::zeros(m, m), hermiticity_defect: 0.0, trace_term: 0.0, t: 0.0 }
    }

    /// Wraps an explicit matrix, hermitizing it.
    pub fn from_matrix(f: DMatrix<C64>, dk_vol: f64) -> Self {
        let defect = (&f - f.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut h = (&f + f.adjoint()) * C64::new(0.5, 0.0);
        for i in 0..h.nrows() {
            h[(i, i)] = C64::new(h[(i, i)].re, 0.0);
        }
        let trace_term = dk_vol * (0..h.nrows()).map(|i| h[(i, i)].re).sum::<f64>();
        Self { f: h, hermiticity_defect: defect, trace_term, t: 0.0 }
    }

    /// Entrywise average, for midpoint generators.
    pub fn midpoint(a: &Self, b: &Self) -> Self {
        Self {
            f: (&a.f + &b.f) * C64::new(0.5, 0.0),
            hermiticity_defect: a.hermiticity_defect.max(b.hermiticity_defect),
            trace_term: 0.5 * (a.trace_term + b.trace_term),
            t: 0.5 * (a.t + b.t),
        }
    }
}

/// One resolvent solve per mode (in parallel, order-preserving), then all
/// pairwise inner products.
pub fn assemble_kernel(
    lat: &Lattice,
    gs: &GroundStateData,
    ropts: &ResolventOptions,
    gap_floor: Option<f64>,
) -> Result<KernelF, FluctuationError> {
    if let Some(floor) = gap_floor {
        if gs.gap <= floor {
            return Err(FluctuationError::Gap { gap: gs.gap, floor });
        }
    }
    let grid = &lat.grid;
    let m = lat.n_modes();
    let sources: Vec<Vec<C64>> = (0..m)
        .map(|j| {
            let pw = grid.plane_wave(lat.modes.lattice_index(j));
            pw.iter().zip(&gs.psi_gs).map(|(e, p)| e * p).collect()
        })
        .collect();
    let solved: Vec<Result<Vec<C64>, ElectronError>> =
        sources.par_iter().map(|x| apply_resolvent(grid, gs, x, ropts)).collect();
    let mut cols = Vec::with_capacity(m);
    for s in solved {
        cols.push(s?);
    }
    let w = grid.cell_volume();
    let f = DMatrix::from_fn(m, m, |j, l| dot(&sources[j], &cols[l]) * (w * lat.coupling[j] * lat.coupling[l]));
    Ok(KernelF::from_matrix(f, grid.k_cell_volume()))
}

/// Coefficient blocks of `alpha^2 (N - A)`: `B* P B + (B* Q B* + h.c.) - constant`.
#[derive(Clone, Debug)]
pub struct GeneratorBlocks {
    pub p: DMatrix<C64>,
    pub q: DMatrix<C64>,
    pub constant: f64,
}

pub fn quadratic_generator(kernel: &KernelF, pairs: &[usize], dk_vol: f64) -> Result<GeneratorBlocks, FluctuationError> {
    let m = kernel.f.nrows();
    if pairs.len() != m || pairs.iter().enumerate().any(|(j, &p)| p >= m || pairs[p] != j) {
        return Err(FluctuationError::Pairing(m));
    }
    let w = &kernel.f * C64::new(dk_vol, 0.0);
    let p = DMatrix::from_fn(m, m, |a, b| {
        let id = if a == b { 1.0 } else { 0.0 };
        C64::new(id, 0.0) - w[(a, b)] - w[(pairs[b], pairs[a])]
    });
    let q = DMatrix::from_fn(m, m, |a, b| -(w[(a, pairs[b])] + w[(b, pairs[a])]) * 0.5);
    Ok(GeneratorBlocks { p, q, constant: kernel.trace_term })
}

/// Gaussian state `Y_t` through its Bogoliubov map; `theta` is the phase of
/// `<Omega, Y_t>`.
#[derive(Clone, Debug)]
pub struct BogoliubovState {
    pub u: DMatrix<C64>,
    pub v: DMatrix<C64>,
    pub theta: f64,
    pub t: f64,
}

impl BogoliubovState {
    pub fn vacuum(m: usize) -> Self {
        Self { u: DMatrix::identity(m, m), v: DMatrix::zeros(m, m), theta: 0.0, t: 0.0 }
    }

    /// `max(|u'u - v'v - 1|, |u^T v - v^T u|)`.
    pub fn invariant_drift(&self) -> f64 {
        let m = self.u.nrows();
        let a = self.u.adjoint() * &self.u - self.v.adjoint() * &self.v - DMatrix::<C64>::identity(m, m);
        let b = self.u.transpose() * &self.v - self.v.transpose() * &self.u;
        a.iter().chain(b.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `Z = (u^dagger)^{-1} v^dagger`, the pair amplitude of the Gaussian state.
    pub fn pair_amplitude(&self) -> Option<DMatrix<C64>> {
        self.u.adjoint().lu().solve(&self.v.adjoint())
    }

    fn phase_rate(&self, blocks: &GeneratorBlocks, alpha: f64) -> f64 {
        let z = self.pair_amplitude().expect("u is invertible on the symplectic manifold");
        let s: C64 = blocks.q.iter().zip(z.iter()).map(|(q, z)| q.conj() * z).sum();
        (blocks.constant - s.re) / (alpha * alpha)
    }

    /// Projects back onto the symplectic manifold: `S <- S (Sigma S^dagger Sigma S)^{-1/2}`.
    fn recondition(&mut self) {
        let m = self.u.nrows();
        let mut s = DMatrix::<C64>::zeros(2 * m, 2 * m);
        s.view_mut((0, 0), (m, m)).copy_from(&self.u);
        s.view_mut((m, 0), (m, m)).copy_from(&self.v);
        s.view_mut((0, m), (m, m)).copy_from(&self.v.map(|z| z.conj()));
        s.view_mut((m, m), (m, m)).copy_from(&self.u.map(|z| z.conj()));
        let mut sigma = DMatrix::<C64>::identity(2 * m, 2 * m);
        for i in m..2 * m {
            sigma[(i, i)] = C64::new(-1.0, 0.0);
        }
        let y = &sigma * s.adjoint() * &sigma * &s;
        let e = y - DMatrix::<C64>::identity(2 * m, 2 * m);
        let e2 = &e * &e;
        let e3 = &e2 * &e;
        let inv_sqrt = DMatrix::<C64>::identity(2 * m, 2 * m) - &e * C64::new(0.5, 0.0) + &e2 * C64::new(0.375, 0.0)
            - e3 * C64::new(0.3125, 0.0);
        let s = s * inv_sqrt;
        self.u = s.view((0, 0), (m, m)).into_owned();
        self.v = s.view((m, 0), (m, m)).into_owned();
    }
}

pub const RECONDITION_THRESHOLD: f64 = 1e-10;
pub const INVARIANT_ABORT: f64 = 1e-6;

/// Implicit-midpoint (Cayley) step of `i d/dt [u; v] = alpha^{-2} K [u; v]`,
/// `K = [[P, 2Q], [-2 conj Q, -conj P]]`, for blocks held fixed over the
/// step. The phase of the vacuum overlap advances by the trapezoidal rule.
pub fn bogoliubov_step(
    state: &BogoliubovState,
    blocks: &GeneratorBlocks,
    alpha: f64,
    dt: f64,
) -> Result<BogoliubovState, FluctuationError> {
    let m = state.u.nrows();
    let h = dt / (alpha * alpha);
    let mut k = DMatrix::<C64>::zeros(2 * m, 2 * m);
    k.view_mut((0, 0), (m, m)).copy_from(&blocks.p);
    k.view_mut((0, m), (m, m)).copy_from(&(&blocks.q * C64::new(2.0, 0.0)));
    k.view_mut((m, 0), (m, m)).copy_from(&(blocks.q.map(|z| z.conj()) * C64::new(-2.0, 0.0)));
    k.view_mut((m, m), (m, m)).copy_from(&(-blocks.p.map(|z| z.conj())));
    let ident = DMatrix::<C64>::identity(2 * m, 2 * m);
    let half = C64::new(0.0, 0.5 * h);
    let lhs = &ident + &k * half;
    let rhs = &ident - &k * half;
    let mut y = DMatrix::<C64>::zeros(2 * m, m);
    y.view_mut((0, 0), (m, m)).copy_from(&state.u);
    y.view_mut((m, 0), (m, m)).copy_from(&state.v);
    let y_new = lhs.lu().solve(&(rhs * y)).ok_or(FluctuationError::Singular)?;
    let mut next = BogoliubovState {
        u: y_new.view((0, 0), (m, m)).into_owned(),
        v: y_new.view((m, 0), (m, m)).into_owned(),
        theta: state.theta,
        t: state.t + dt,
    };
    let drift = next.invariant_drift();
    if drift > INVARIANT_ABORT {
        return Err(FluctuationError::Invariant(drift));
    }
    if drift > RECONDITION_THRESHOLD {
        next.recondition();
    }
    next.theta += 0.5 * dt * (state.phase_rate(blocks, alpha) + next.phase_rate(blocks, alpha));
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct Moments {
    /// `alpha^{-2} sum_j <B*_j B_j>`.
    pub n_expect: f64,
    /// `<B*_a B_b> = (v v^dagger)_{ab}`.
    pub occupation: DMatrix<C64>,
    /// `<Omega, Y_t> = |det u|^{-1/2} e^{i theta}`.
    pub vacuum_overlap: C64,
}

impl Moments {
    /// `|| Y_t - Omega ||`.
    pub fn vacuum_distance(&self) -> f64 {
        (2.0 * (1.0 - self.vacuum_overlap.re)).max(0.0).sqrt()
    }
}

pub fn moments(state: &BogoliubovState, alpha: f64) -> Moments {
    let occupation = &state.v * state.v.adjoint();
    let tr: f64 = (0..occupation.nrows()).map(|i| occupation[(i, i)].re).sum();
    let det = state.u.clone().lu().determinant().norm();
    Moments {
        n_expect: tr / (alpha * alpha),
        occupation,
        vacuum_overlap: C64::from_polar(det.powf(-0.5), state.theta),
    }
}

/// Comparison of `|| Y_t - Omega ||` against `c0 alpha^{-2} t`.
#[derive(Clone, Debug)]
pub struct RemarkReport {
    /// `(t, measured distance, c0 alpha^{-2} t)`.
    pub points: Vec<(f64, f64, f64)>,
    /// Whether every point with `t <= delta alpha^2` has measured `>= margin * c0 alpha^{-2} t`.
    pub holds: bool,
}

pub fn remark_lower_bound(series: &[(f64, f64)], alpha: f64, c0: f64, delta: f64, margin: f64) -> RemarkReport {
    let a2 = alpha * alpha;
    let points: Vec<(f64, f64, f64)> = series.iter().map(|&(t, d)| (t, d, c0 * t / a2)).collect();
    let holds = points.iter().filter(|p| p.0 <= delta * a2 * (1.0 + 1e-12)).all(|p| p.1 >= margin * p.2);
    RemarkReport { points, holds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fock::{fock_generator, fock_step, FockSpace};

    fn blocks_from(w: DMatrix<C64>, pairs: &[usize]) -> GeneratorBlocks {
        let k = KernelF::from_matrix(w, 1.0);
        quadratic_generator(&k, pairs, 1.0).unwrap()
    }

    #[test]
    fn zero_kernel_is_number_operator() {
        let b = quadratic_generator(&KernelF::zeros(4), &[1, 0, 3, 2], 0.5).unwrap();
        assert_eq!(b.p, DMatrix::<C64>::identity(4, 4));
        assert!(b.q.iter().all(|z| z.norm() == 0.0));
        assert_eq!(b.constant, 0.0);
    }

    #[test]
    fn free_rotation() {
        let b = quadratic_generator(&KernelF::zeros(2), &[1, 0], 1.0).unwrap();
        let alpha = 2.0;
        let mut s = BogoliubovState::vacuum(2);
        for _ in 0..100 {
            s = bogoliubov_step(&s, &b, alpha, 0.01).unwrap();
        }
        // Cayley rotation angle for a unit eigenvalue
        let h = 0.01 / 4.0;
        let step = (C64::new(1.0, -0.5 * h) / C64::new(1.0, 0.5 * h)).powu(100);
        assert!((s.u[(0, 0)] - step).norm() < 1e-12, "{}", (s.u[(0, 0)] - step).norm());
        assert!((step - C64::from_polar(1.0, -1.0 / 4.0)).norm() < 1e-6);
        assert!(s.v.iter().all(|z| z.norm() == 0.0));
        let mo = moments(&s, alpha);
        assert_eq!(mo.n_expect, 0.0);
        assert!((mo.vacuum_overlap.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn blocks_are_hermitian_and_symmetric() {
        let w = DMatrix::from_fn(4, 4, |i, j| C64::new(0.1 / (1.0 + (i + j) as f64), 0.03 * (i as f64 - j as f64)));
        let b = blocks_from(w, &[1, 0, 3, 2]);
        assert!((&b.p - b.p.adjoint()).iter().all(|z| z.norm() < 1e-15));
        assert!((&b.q - b.q.transpose()).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn symplectic_invariants_survive_long_runs() {
        let w = DMatrix::from_fn(2, 2, |i, j| if i == j { C64::new(0.2, 0.0) } else { C64::new(0.05, 0.02) });
        let b = blocks_from(w, &[1, 0]);
        let mut s = BogoliubovState::vacuum(2);
        for _ in 0..2000 {
            s = bogoliubov_step(&s, &b, 1.5, 0.05).unwrap();
        }
        assert!(s.invariant_drift() < 1e-9);
    }

    #[test]
    fn gaussian_and_fock_agree() {
        let w = DMatrix::from_fn(2, 2, |i, j| if i == j { C64::new(0.12, 0.0) } else { C64::new(0.04, 0.0) });
        let b = blocks_from(w, &[1, 0]);
        let alpha = 1.0;
        let space = FockSpace::new(2, 10);
        let gen = fock_generator(&space, &b, alpha);
        let mut x = space.vacuum();
        let mut s = BogoliubovState::vacuum(2);
        let dt = 0.002;
        for _ in 0..250 {
            s = bogoliubov_step(&s, &b, alpha, dt).unwrap();
            x = fock_step(&space, &gen, &x, dt, 1e-3, &Default::default()).unwrap().0;
        }
        let mo = moments(&s, alpha);
        let n_fock = space.number_expectation(&x) / (alpha * alpha);
        assert!((mo.n_expect - n_fock).abs() < 1e-7, "{} vs {}", mo.n_expect, n_fock);
        assert!((mo.vacuum_overlap - x[0]).norm() < 1e-7, "{} vs {}", mo.vacuum_overlap, x[0]);
    }
}
