//! The one-body operator `h = -Laplacian + V_phi`: potential assembly from a
//! phonon field, the density source `sigma_psi`, ground state with gap, and
//! the reduced resolvent `q (h - e)^{-1} q`.
//!
//! Phonon fields are mode vectors indexed like [`ModeSet`]; electron states
//! are position-space arrays normalized with the `dx^d` weight.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::grid::{axpy, dot, norm_sq, Basis, ComplexField, Grid, GridError, ModeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElectronError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("phonon field has weight outside the mode set")]
    Support,
    #[error("array length {found} does not match expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("spectral gap {gap:.6e} fell below the floor {floor:.6e}")]
    GapCollapse { gap: f64, floor: f64 },
    #[error("resolvent solve stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    Stagnation { iterations: usize, residual: f64 },
}

/// Grid, phonon modes and the coupling profile on those modes.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub grid: Grid,
    pub modes: ModeSet,
    pub coupling: Vec<f64>,
}

impl Lattice {
    pub fn new(grid: Grid, cutoff: f64) -> Result<Self, GridError> {
        let modes = ModeSet::new(&grid, cutoff)?;
        Self::with_modes(grid, modes)
    }

    pub fn with_modes(grid: Grid, modes: ModeSet) -> Result<Self, GridError> {
        let coupling = crate::grid::coupling_amplitudes(&grid, &modes)?;
        Ok(Self { grid, modes, coupling })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// `||phi||^2 = dk^d sum_j |phi_j|^2`.
    pub fn field_norm_sq(&self, phi: &[C64]) -> f64 {
        self.grid.k_cell_volume() * norm_sq(phi)
    }

    /// `<a, b> = dk^d sum_j conj(a_j) b_j`.
    pub fn field_inner(&self, a: &[C64], b: &[C64]) -> C64 {
        dot(a, b) * self.grid.k_cell_volume()
    }

    pub fn state_norm_sq(&self, psi: &[C64]) -> f64 {
        self.grid.cell_volume() * norm_sq(psi)
    }

    pub fn state_inner(&self, a: &[C64], b: &[C64]) -> C64 {
        dot(a, b) * self.grid.cell_volume()
    }

    /// `V_phi(x) = 2 Re sum_j dk^d g_j phi_j e^{i k_j x}`.
    pub fn potential(&self, phi: &[C64]) -> Vec<f64> {
        let grid = &self.grid;
        let w = grid.k_cell_volume();
        let mut buf = vec![C64::new(0.0, 0.0); grid.len()];
        for (j, &idx) in self.modes.lattice_indices().iter().enumerate() {
            buf[idx] += phi[j] * self.coupling[j] * w;
        }
        grid.lattice_inverse(&mut buf);
        buf.iter().map(|z| 2.0 * z.re).collect()
    }

    /// `sigma_psi(k_j) = g_j sum_x e^{-i k_j x} |psi(x)|^2 dx^d`.
    pub fn sigma(&self, psi: &[C64]) -> Vec<C64> {
        let grid = &self.grid;
        let mut rho: Vec<C64> = psi.iter().map(|z| C64::new(z.norm_sqr(), 0.0)).collect();
        grid.lattice_forward(&mut rho);
        let w = grid.cell_volume();
        self.modes
            .lattice_indices()
            .iter()
            .zip(&self.coupling)
            .map(|(&idx, &g)| rho[idx] * g * w)
            .collect()
    }

    /// Potential built from a full-lattice momentum field.
    pub fn potential_from_field(&self, phi: &ComplexField) -> Result<Vec<f64>, ElectronError> {
        if phi.basis != Basis::Momentum {
            return Err(GridError::BasisMismatch { expected: Basis::Momentum, found: phi.basis }.into());
        }
        if phi.values.len() != self.grid.len() {
            return Err(ElectronError::Length { expected: self.grid.len(), found: phi.values.len() });
        }
        let modes = self.modes.from_field(phi).ok_or(ElectronError::Support)?;
        Ok(self.potential(&modes))
    }

    /// `sigma_psi` as a full-lattice momentum field (zero off the mode set).
    pub fn sigma_from_psi(&self, psi: &ComplexField) -> Result<ComplexField, ElectronError> {
        if psi.basis != Basis::Position {
            return Err(GridError::BasisMismatch { expected: Basis::Position, found: psi.basis }.into());
        }
        let n = self.state_norm_sq(&psi.values);
        if (n - 1.0).abs() > 1e-8 {
            log::warn!("sigma_from_psi: state norm^2 is {n}, proceeding");
        }
        Ok(self.modes.to_field(&self.grid, &self.sigma(&psi.values)))
    }

    /// LP energy `<psi, h_phi psi> + ||phi||^2`, using `<psi, V psi> = 2 Re <phi, sigma>`.
    pub fn pekar_energy(&self, psi: &[C64], phi: &[C64]) -> f64 {
        let kin = self.state_inner(psi, &self.grid.apply_kinetic(psi)).re;
        let sigma = self.sigma(psi);
        kin + 2.0 * self.field_inner(phi, &sigma).re + self.field_norm_sq(phi)
    }
}

/// `(-Laplacian + V) psi`.
pub fn apply_h(grid: &Grid, v: &[f64], psi: &[C64]) -> Vec<C64> {
    let mut out = grid.apply_kinetic(psi);
    for ((o, p), vx) in out.iter_mut().zip(psi).zip(v) {
        *o += p * vx;
    }
    out
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub eig_tol: f64,
    pub max_iter: usize,
    /// Abort with [`ElectronError::GapCollapse`] when the gap drops below this.
    pub gap_floor: Option<f64>,
    pub max_basis: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { eig_tol: 1e-9, max_iter: 600, gap_floor: None, max_basis: 30 }
    }
}

#[derive(Clone, Debug)]
pub struct GroundStateData {
    pub e: f64,
    pub psi_gs: Vec<C64>,
    pub gap: f64,
    pub v: Vec<f64>,
    pub residual: f64,
    /// First excited eigenvalue and vector (weight-normalized), kept for warm starts.
    pub e1: f64,
    pub excited: Vec<C64>,
    pub iterations: usize,
}

const BLOCK: usize = 3;

fn orthonormalize_into(basis: &[Vec<C64>], mut t: Vec<C64>) -> Option<Vec<C64>> {
    let n0 = norm_sq(&t).sqrt();
    if n0 == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, &t);
            axpy(-c, b, &mut t);
        }
    }
    let n1 = norm_sq(&t).sqrt();
    if n1 < 1e-10 * n0 {
        return None;
    }
    t.iter_mut().for_each(|z| *z /= n1);
    Some(t)
}

fn hermitian_eig(h: &nalgebra::DMatrix<C64>) -> (Vec<f64>, nalgebra::DMatrix<C64>) {
    let sym = nalgebra::SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..sym.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| sym.eigenvalues[a].total_cmp(&sym.eigenvalues[b]));
    let vals = order.iter().map(|&i| sym.eigenvalues[i]).collect();
    let vecs = nalgebra::DMatrix::from_fn(h.nrows(), order.len(), |r, c| sym.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn initial_guesses(grid: &Grid, v: &[f64]) -> Vec<Vec<C64>> {
    let n = grid.len();
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if vmax > vmin { 4.0 / (vmax - vmin) } else { 0.0 };
    let base: Vec<C64> = v.iter().map(|&x| C64::new((-(x - vmin) * scale).exp(), 0.0)).collect();
    let mut out = vec![base.clone()];
    let dk = grid.dk();
    for axis in 0..grid.dim() {
        for trig in 0..2 {
            let g: Vec<C64> = (0..n)
                .map(|i| {
                    let x = grid.position(i)[axis] * dk;
                    let f = if trig == 0 { x.cos() } else { x.sin() };
                    base[i] * f
                })
                .collect();
            out.push(g);
        }
    }
    out
}

/// Two lowest eigenpairs of `-Laplacian + V` by a preconditioned block
/// Davidson iteration with thick restart.
pub fn ground_state(
    grid: &Grid,
    v: &[f64],
    opts: &EigenOptions,
    warm: Option<&GroundStateData>,
) -> Result<GroundStateData, ElectronError> {
    let n = grid.len();
    if v.len() != n {
        return Err(ElectronError::Length { expected: n, found: v.len() });
    }
    let op = |x: &[C64]| apply_h(grid, v, x);
    let vmean = v.iter().sum::<f64>() / n as f64;
    let floor = grid.dk().powi(2).max(1e-3);
    let precond = |r: &[C64], theta: f64| {
        let mut t = r.to_vec();
        grid.apply_multiplier(&mut t, |ksq| C64::new(1.0 / (ksq + vmean - theta).max(floor), 0.0));
        t
    };

    let mut guesses = Vec::new();
    if let Some(w) = warm {
        guesses.push(w.psi_gs.clone());
        guesses.push(w.excited.clone());
    }
    guesses.extend(initial_guesses(grid, v));

    let mut basis: Vec<Vec<C64>> = Vec::new();
    for g in guesses {
        if let Some(b) = orthonormalize_into(&basis, g) {
            basis.push(b);
        }
    }
    let mut images: Vec<Vec<C64>> = basis.iter().map(|b| op(b)).collect();
    let mut last_res = f64::INFINITY;
    // upper triangle of the projected matrix, one column per basis vector
    let mut cols: Vec<Vec<C64>> = Vec::new();

    for iter in 0..opts.max_iter {
        let m = basis.len();
        while cols.len() < m {
            let j = cols.len();
            cols.push((0..=j).map(|i| dot(&basis[i], &images[j])).collect());
        }
        let mut hs = nalgebra::DMatrix::<C64>::zeros(m, m);
        for (j, col) in cols.iter().enumerate() {
            for (i, &val) in col.iter().enumerate() {
                hs[(i, j)] = val;
                hs[(j, i)] = val.conj();
            }
            hs[(j, j)] = C64::new(col[j].re, 0.0);
        }
        let (theta, y) = hermitian_eig(&hs);
        let nb = BLOCK.min(m);
        let mut ritz = Vec::with_capacity(nb);
        let mut ritz_img = Vec::with_capacity(nb);
        let mut res = Vec::with_capacity(nb);
        for c in 0..nb {
            let mut x = vec![C64::new(0.0, 0.0); n];
            let mut ax = vec![C64::new(0.0, 0.0); n];
            for i in 0..m {
                axpy(y[(i, c)], &basis[i], &mut x);
                axpy(y[(i, c)], &images[i], &mut ax);
            }
            let mut r = ax.clone();
            axpy(C64::new(-theta[c], 0.0), &x, &mut r);
            res.push(r);
            ritz.push(x);
            ritz_img.push(ax);
        }
        let rnorm: Vec<f64> = res.iter().map(|r| norm_sq(r).sqrt()).collect();
        last_res = rnorm[0].max(*rnorm.get(1).unwrap_or(&0.0));

        if nb >= 2 && rnorm[0] <= opts.eig_tol && rnorm[1] <= opts.eig_tol {
            // confirm against a freshly applied operator
            let fresh: Vec<f64> = (0..2)
                .map(|c| {
                    let mut r = op(&ritz[c]);
                    axpy(C64::new(-theta[c], 0.0), &ritz[c], &mut r);
                    norm_sq(&r).sqrt()
                })
                .collect();
            if fresh[0] <= opts.eig_tol && fresh[1] <= opts.eig_tol {
                return finish(grid, v, opts, theta[0], theta[1], &ritz[0], &ritz[1], fresh[0], iter);
            }
            basis = ritz;
            images = basis.iter().map(|b| op(b)).collect();
            cols.clear();
            continue;
        }

        if m + nb > opts.max_basis {
            let keep = (2 * BLOCK).min(m);
            let mut nbasis = ritz.clone();
            let mut nimg = ritz_img.clone();
            for c in nb..keep {
                let mut x = vec![C64::new(0.0, 0.0); n];
                let mut ax = vec![C64::new(0.0, 0.0); n];
                for i in 0..m {
                    axpy(y[(i, c)], &basis[i], &mut x);
                    axpy(y[(i, c)], &images[i], &mut ax);
                }
                nbasis.push(x);
                nimg.push(ax);
            }
            basis = nbasis;
            images = nimg;
            cols.clear();
        }

        let mut added = 0;
        for c in 0..nb {
            if rnorm[c] <= opts.eig_tol * 0.1 {
                continue;
            }
            let t = precond(&res[c], theta[c]);
            if let Some(b) = orthonormalize_into(&basis, t) {
                images.push(op(&b));
                basis.push(b);
                added += 1;
            }
        }
        if added == 0 {
            // the preconditioned residuals fell inside the span; restart from Ritz vectors
            basis = ritz;
            images = basis.iter().map(|b| op(b)).collect();
            cols.clear();
        }
    }
    Err(ElectronError::NonConvergence { iterations: opts.max_iter, residual: last_res })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &Grid,
    v: &[f64],
    opts: &EigenOptions,
    e: f64,
    e1: f64,
    x0: &[C64],
    x1: &[C64],
    residual: f64,
    iterations: usize,
) -> Result<GroundStateData, ElectronError> {
    let w = grid.cell_volume().sqrt();
    let psi_gs = fix_phase(x0, w);
    let excited: Vec<C64> = x1.iter().map(|z| z / w).collect();
    let gap = e1 - e;
    if let Some(floor) = opts.gap_floor {
        if gap < floor {
            return Err(ElectronError::GapCollapse { gap, floor });
        }
    }
    Ok(GroundStateData { e, psi_gs, gap, v: v.to_vec(), residual, e1, excited, iterations })
}

/// Rotates so the sum of samples is real positive, drops the imaginary part
/// and renormalizes; `w = dx^{d/2}` converts Euclidean to weighted norm.
fn fix_phase(x: &[C64], w: f64) -> Vec<C64> {
    let s: C64 = x.iter().sum();
    let rot = if s.norm() > 0.0 { s.conj() / s.norm() } else { C64::new(1.0, 0.0) };
    let mut out: Vec<C64> = x.iter().map(|z| C64::new((z * rot).re, 0.0)).collect();
    let nrm = norm_sq(&out).sqrt() * w;
    out.iter_mut().for_each(|z| *z /= nrm);
    out
}

#[derive(Clone, Debug)]
pub struct ResolventOptions {
    pub cg_tol: f64,
    pub max_iter: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        Self { cg_tol: 1e-10, max_iter: 5000 }
    }
}

/// `y = q (h - e)^{-1} q x` by preconditioned conjugate gradients on the
/// orthogonal complement of the ground state.
pub fn apply_resolvent(
    grid: &Grid,
    gs: &GroundStateData,
    x: &[C64],
    opts: &ResolventOptions,
) -> Result<Vec<C64>, ElectronError> {
    let n = grid.len();
    if x.len() != n {
        return Err(ElectronError::Length { expected: n, found: x.len() });
    }
    // Euclidean-normalized ground state for the projector
    let g_norm = norm_sq(&gs.psi_gs).sqrt();
    let g: Vec<C64> = gs.psi_gs.iter().map(|z| z / g_norm).collect();
    let project = |w: &mut Vec<C64>| {
        let c = dot(&g, w);
        axpy(-c, &g, w);
    };
    let vmean = gs.v.iter().sum::<f64>() / n as f64;
    let shift = (vmean - gs.e).max(gs.gap);
    let precond = |r: &[C64]| {
        let mut z = r.to_vec();
        grid.apply_multiplier(&mut z, |ksq| C64::new(1.0 / (ksq + shift), 0.0));
        let c = dot(&g, &z);
        axpy(-c, &g, &mut z);
        z
    };
    let op = |w: &[C64]| {
        let mut out = apply_h(grid, &gs.v, w);
        axpy(C64::new(-gs.e, 0.0), w, &mut out);
        let c = dot(&g, &out);
        axpy(-c, &g, &mut out);
        out
    };

    let mut b = x.to_vec();
    project(&mut b);
    let bnorm = norm_sq(&b).sqrt();
    let mut y = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok(y);
    }
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut rel = 1.0;
    for _ in 0..opts.max_iter {
        let ap = op(&p);
        let pap = dot(&p, &ap).re;
        if pap <= 0.0 {
            break;
        }
        let a = rz / pap;
        axpy(C64::new(a, 0.0), &p, &mut y);
        axpy(C64::new(-a, 0.0), &ap, &mut r);
        project(&mut y);
        project(&mut r);
        rel = norm_sq(&r).sqrt() / bnorm;
        if rel <= opts.cg_tol {
            return Ok(y);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + *pi * beta;
        }
        project(&mut p);
    }
    // a true residual check guards against drift in the recurrence
    let mut true_r = b;
    let hy = op(&y);
    axpy(C64::new(-1.0, 0.0), &hy, &mut true_r);
    let true_rel = norm_sq(&true_r).sqrt() / bnorm;
    if true_rel <= opts.cg_tol {
        return Ok(y);
    }
    Err(ElectronError::Stagnation { iterations: opts.max_iter, residual: rel.max(true_rel) })
}
