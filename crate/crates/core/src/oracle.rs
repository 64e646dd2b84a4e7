//! Exact reference dynamics on (spatial grid) x (truncated Fock space).
//!
//! Vectors are indexed `fock_index * n_grid + x` and carry orthonormal
//! coefficients, so an electron wavefunction `psi(x)` enters as
//! `psi(x) dx^{d/2}`. The interaction uses the same normalized mode
//! operators as [`crate::fluctuations`].

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electron::{Lattice, ResolventOptions};
use crate::fluctuations::fock::{fock_generator, FockSpace};
use crate::fluctuations::{
    assemble_kernel, bogoliubov_step, moments, quadratic_generator, BogoliubovState, FluctuationError, KernelF,
};
use crate::grid::{axpy, dot, norm_sq};
use crate::krylov::{expm_apply, HermitianOp, KrylovError, KrylovOptions};
use crate::landau_pekar::{lp_step, LpError, LpOptions, PekarState};

pub const DEFAULT_DIM_CAP: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle dimension {dim} exceeds cap {cap}")]
    DimCap { dim: usize, cap: usize },
    #[error("truncation leakage {leakage:.3e} exceeds tolerance {tol:.3e}")]
    Leakage { leakage: f64, tol: f64 },
    #[error("matrix shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("trajectory mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Fluctuation(#[from] FluctuationError),
}

#[derive(Clone, Debug)]
pub struct OracleSpace {
    pub lat: Lattice,
    pub fock: FockSpace,
    pub alpha: f64,
}

impl OracleSpace {
    pub fn new(lat: Lattice, alpha: f64, n_max: usize, dim_cap: usize) -> Result<Self, OracleError> {
        let fock = FockSpace::new(lat.n_modes(), n_max);
        let dim = fock.dim() * lat.grid.len();
        if dim > dim_cap {
            return Err(OracleError::DimCap { dim, cap: dim_cap });
        }
        Ok(Self { lat, fock, alpha })
    }

    /// Number of spatial points.
    pub fn ng(&self) -> usize {
        self.lat.grid.len()
    }

    pub fn dim(&self) -> usize {
        self.fock.dim() * self.ng()
    }

    /// `psi (x) y` with `psi` normalized in the weighted grid norm.
    pub fn product(&self, psi: &[C64], fock_vec: &[C64]) -> Vec<C64> {
        let w = self.lat.grid.cell_volume().sqrt();
        let ng = self.ng();
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        for (i, f) in fock_vec.iter().enumerate() {
            for x in 0..ng {
                out[i * ng + x] = f * psi[x] * w;
            }
        }
        out
    }

    /// `B_j` (lower) or `B*_j` (raise) acting on the phonon factor.
    pub fn apply_mode(&self, j: usize, raise: bool, v: &[C64]) -> Vec<C64> {
        let ng = self.ng();
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        for i in 0..self.fock.dim() {
            let e = if raise { self.fock.raise_entry(j, i) } else { self.fock.lower_entry(j, i) };
            if let Some((k, c)) = e {
                for x in 0..ng {
                    out[k * ng + x] += v[i * ng + x] * c;
                }
            }
        }
        out
    }

    /// Weight in the top occupation shell.
    pub fn leakage(&self, v: &[C64]) -> f64 {
        let ng = self.ng();
        (0..self.fock.dim())
            .filter(|&i| self.fock.total(i) == self.fock.n_max())
            .map(|i| norm_sq(&v[i * ng..(i + 1) * ng]))
            .sum()
    }

    /// `alpha dk^{d/2} phi_j`, the displacement of `B_j` under `W(alpha^2 phi)`.
    pub fn displacement(&self, phi: &[C64]) -> Vec<C64> {
        let s = self.alpha * self.lat.grid.k_cell_volume().sqrt();
        phi.iter().map(|p| p * s).collect()
    }
}

/// `-Laplacian + V + shift + N + sum_j [ f_j(x) B*_j + h.c. ]`.
pub struct FrameOperator<'a> {
    space: &'a OracleSpace,
    v: Vec<f64>,
    shift: f64,
    /// `coef[j][x]`, the coefficient of `B*_j`.
    coef: Vec<Vec<C64>>,
}

impl<'a> FrameOperator<'a> {
    /// `f_j(x) = alpha^{-1} dk^{d/2} (g_j e^{-i k_j x} - sigma_j)`.
    fn with_source(space: &'a OracleSpace, sigma: Option<&[C64]>) -> Vec<Vec<C64>> {
        let lat = &space.lat;
        let c = lat.grid.k_cell_volume().sqrt() / space.alpha;
        (0..lat.n_modes())
            .map(|j| {
                let k = lat.modes.lattice_index(j);
                (0..lat.grid.len())
                    .map(|x| {
                        let s = sigma.map_or(C64::new(0.0, 0.0), |s| s[j]);
                        (C64::from_polar(lat.coupling[j], -lat.grid.phase_arg(k, x)) - s) * c
                    })
                    .collect()
            })
            .collect()
    }
}

impl HermitianOp for FrameOperator<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let sp = self.space;
        let ng = sp.ng();
        let a2 = sp.alpha * sp.alpha;
        for i in 0..sp.fock.dim() {
            let block = &x[i * ng..(i + 1) * ng];
            let kin = sp.lat.grid.apply_kinetic(block);
            let n_i = sp.fock.total(i) as f64 / a2;
            for p in 0..ng {
                y[i * ng + p] = kin[p] + block[p] * (self.v[p] + self.shift + n_i);
            }
        }
        for (j, coef) in self.coef.iter().enumerate() {
            for i in 0..sp.fock.dim() {
                if let Some((k, c)) = sp.fock.raise_entry(j, i) {
                    for p in 0..ng {
                        y[k * ng + p] += coef[p] * x[i * ng + p] * c;
                    }
                }
                if let Some((k, c)) = sp.fock.lower_entry(j, i) {
                    for p in 0..ng {
                        y[k * ng + p] += coef[p].conj() * x[i * ng + p] * c;
                    }
                }
            }
        }
    }
}

/// Matrix-free lab-frame Hamiltonian `-Laplacian + N + phi(G_x)`.
pub fn build_hamiltonian(space: &OracleSpace) -> FrameOperator<'_> {
    let coef = FrameOperator::with_source(space, None);
    FrameOperator { space, v: vec![0.0; space.ng()], shift: 0.0, coef }
}

/// Generator of the fluctuation vector: `h_phi - e + N + sum_j [f_j B*_j + h.c.]`
/// with `f_j = alpha^{-1} dk^{d/2} (g_j e^{-i k_j x} - sigma_j)`.
pub fn fluctuation_generator<'a>(space: &'a OracleSpace, phi: &[C64], sigma: &[C64], e: f64) -> FrameOperator<'a> {
    let coef = FrameOperator::with_source(space, Some(sigma));
    FrameOperator { space, v: space.lat.potential(phi), shift: -e, coef }
}

/// Free electron plus number operator, for tests with the coupling off.
pub fn decoupled_hamiltonian(space: &OracleSpace) -> FrameOperator<'_> {
    let coef = vec![vec![C64::new(0.0, 0.0); space.ng()]; space.lat.n_modes()];
    FrameOperator { space, v: vec![0.0; space.ng()], shift: 0.0, coef }
}

pub fn krylov_propagate(
    op: &dyn HermitianOp,
    psi: &[C64],
    dt: f64,
    opts: &KrylovOptions,
) -> Result<Vec<C64>, OracleError> {
    Ok(expm_apply(op, psi, dt, opts)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeylSign {
    Plus,
    Minus,
}

struct WeylGenerator<'a> {
    space: &'a OracleSpace,
    beta: Vec<C64>,
}

impl HermitianOp for WeylGenerator<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }
    // i (sum beta_j B*_j - conj(beta_j) B_j)
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let i = C64::new(0.0, 1.0);
        for (j, b) in self.beta.iter().enumerate() {
            if *b == C64::new(0.0, 0.0) {
                continue;
            }
            axpy(i * b, &self.space.apply_mode(j, true, x), y);
            axpy(-i * b.conj(), &self.space.apply_mode(j, false, x), y);
        }
    }
}

/// `W(f) psi` (or `W(-f) psi = W*(f) psi`) for a mode vector `f`, via a
/// Krylov exponential of the anti-Hermitian generator. Returns the vector
/// and its top-shell leakage.
pub fn apply_weyl(
    space: &OracleSpace,
    f: &[C64],
    psi: &[C64],
    sign: WeylSign,
    leak_tol: f64,
    opts: &KrylovOptions,
) -> Result<(Vec<C64>, f64), OracleError> {
    // a*(f) = alpha^{-1} dk^{d/2} sum f_j B*_j
    let s = space.lat.grid.k_cell_volume().sqrt() / space.alpha * if sign == WeylSign::Plus { 1.0 } else { -1.0 };
    let beta: Vec<C64> = f.iter().map(|z| z * s).collect();
    if beta.iter().all(|b| b.norm() == 0.0) {
        return Ok((psi.to_vec(), space.leakage(psi)));
    }
    let gen = WeylGenerator { space, beta };
    let (out, _) = expm_apply(&gen, psi, 1.0, opts)?;
    let leakage = space.leakage(&out);
    if leakage > leak_tol {
        return Err(OracleError::Leakage { leakage, tol: leak_tol });
    }
    Ok((out, leakage))
}

/// `e^{i(Theta_e + Theta_omega)} W*(alpha^2 phi_t) psi_t` for a lab-frame state.
pub fn fluctuation_vector(
    space: &OracleSpace,
    psi_t: &[C64],
    phi_t: &[C64],
    theta_e: f64,
    theta_omega: f64,
    leak_tol: f64,
    opts: &KrylovOptions,
) -> Result<Vec<C64>, OracleError> {
    if phi_t.len() != space.lat.n_modes() || psi_t.len() != space.dim() {
        return Err(OracleError::Mismatch("field or state size differs from the oracle space".into()));
    }
    let a2 = space.alpha * space.alpha;
    let f: Vec<C64> = phi_t.iter().map(|p| p * a2).collect();
    let (v, _) = apply_weyl(space, &f, psi_t, WeylSign::Minus, leak_tol, opts)?;
    let ph = C64::from_polar(1.0, theta_e + theta_omega);
    Ok(v.into_iter().map(|z| z * ph).collect())
}

#[derive(Clone, Debug)]
pub struct ReducedDensities {
    /// Electron density matrix in the orthonormal grid basis.
    pub gamma_el: DMatrix<C64>,
    /// `gamma_ph[(j, l)] = alpha^{-2} <B*_l B_j>`, directly comparable with `dk^d phi_j conj(phi_l)`.
    pub gamma_ph: DMatrix<C64>,
}

fn electron_density(space: &OracleSpace, v: &[C64]) -> DMatrix<C64> {
    let ng = space.ng();
    let mut g = DMatrix::<C64>::zeros(ng, ng);
    for i in 0..space.fock.dim() {
        let b = &v[i * ng..(i + 1) * ng];
        for x in 0..ng {
            for y in 0..ng {
                g[(x, y)] += b[x] * b[y].conj();
            }
        }
    }
    g
}

/// Densities of a lab-frame state.
pub fn reduced_densities(space: &OracleSpace, psi: &[C64]) -> ReducedDensities {
    let m = space.lat.n_modes();
    let lowered: Vec<Vec<C64>> = (0..m).map(|j| space.apply_mode(j, false, psi)).collect();
    let a2 = space.alpha * space.alpha;
    let gamma_ph = DMatrix::from_fn(m, m, |j, l| dot(&lowered[l], &lowered[j]) / a2);
    ReducedDensities { gamma_el: electron_density(space, psi), gamma_ph }
}

/// Densities of the lab-frame state `W(alpha^2 phi) xi`, evaluated on `xi`
/// through the shift `B_j -> B_j + beta_j`.
pub fn reduced_densities_from_fluctuation(space: &OracleSpace, xi: &[C64], phi: &[C64]) -> ReducedDensities {
    let m = space.lat.n_modes();
    let beta = space.displacement(phi);
    let shifted: Vec<Vec<C64>> = (0..m)
        .map(|j| {
            let mut b = space.apply_mode(j, false, xi);
            axpy(beta[j], xi, &mut b);
            b
        })
        .collect();
    let a2 = space.alpha * space.alpha;
    let gamma_ph = DMatrix::from_fn(m, m, |j, l| dot(&shifted[l], &shifted[j]) / a2);
    ReducedDensities { gamma_el: electron_density(space, xi), gamma_ph }
}

/// `dk^d |phi><phi|` on the mode set.
pub fn field_projector(lat: &Lattice, phi: &[C64]) -> DMatrix<C64> {
    let w = lat.grid.k_cell_volume();
    DMatrix::from_fn(phi.len(), phi.len(), |j, l| phi[j] * phi[l].conj() * w)
}

/// `|psi><psi|` in the orthonormal grid basis.
pub fn state_projector(lat: &Lattice, psi: &[C64]) -> DMatrix<C64> {
    let w = lat.grid.cell_volume();
    DMatrix::from_fn(psi.len(), psi.len(), |x, y| psi[x] * psi[y].conj() * w)
}

/// Trace norm of `a - b` for Hermitian `a`, `b`.
pub fn trace_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64, OracleError> {
    if a.shape() != b.shape() {
        return Err(OracleError::Shape(a.shape(), b.shape()));
    }
    let d = a - b;
    let h = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    Ok(SymmetricEigen::new(h).eigenvalues.iter().map(|l| l.abs()).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhononWindows {
    pub n_leq: f64,
    pub n_gt: f64,
}

/// `<N_{<=K}>` and `<N_{>K}>` on a vector that is already in the displaced frame.
pub fn phonon_number_windows(space: &OracleSpace, displaced: &[C64], k_cut: f64) -> PhononWindows {
    let a2 = space.alpha * space.alpha;
    let mut w = PhononWindows { n_leq: 0.0, n_gt: 0.0 };
    for j in 0..space.lat.n_modes() {
        let n = norm_sq(&space.apply_mode(j, false, displaced)) / a2;
        if space.lat.grid.k_norm(space.lat.modes.lattice_index(j)) <= k_cut {
            w.n_leq += n;
        } else {
            w.n_gt += n;
        }
    }
    w
}

/// Same windows evaluated on a lab-frame state through the shift identity
/// `W N_S W* = N_S - phi(chi_S phi) + ||chi_S phi||^2`, without applying `W*`.
pub fn phonon_windows_lab(space: &OracleSpace, psi: &[C64], phi: &[C64], k_cut: f64) -> PhononWindows {
    let a2 = space.alpha * space.alpha;
    let beta = space.displacement(phi);
    let mut w = PhononWindows { n_leq: 0.0, n_gt: 0.0 };
    for j in 0..space.lat.n_modes() {
        let low = space.apply_mode(j, false, psi);
        let n = norm_sq(&low);
        let b = dot(psi, &low);
        // alpha^{-2} <(B - beta)^* (B - beta)>
        let val = (n - 2.0 * (beta[j].conj() * b).re + beta[j].norm_sqr() * norm_sq(psi)) / a2;
        if space.lat.grid.k_norm(space.lat.modes.lattice_index(j)) <= k_cut {
            w.n_leq += val;
        } else {
            w.n_gt += val;
        }
    }
    w
}

/// `<psi, N psi>` with `N = alpha^{-2} sum B*B`.
pub fn number_expectation(space: &OracleSpace, v: &[C64]) -> f64 {
    let ng = space.ng();
    let a2 = space.alpha * space.alpha;
    (0..space.fock.dim()).map(|i| space.fock.total(i) as f64 * norm_sq(&v[i * ng..(i + 1) * ng])).sum::<f64>() / a2
}

pub fn energy_expectation(op: &dyn HermitianOp, v: &[C64]) -> f64 {
    let mut y = vec![C64::new(0.0, 0.0); v.len()];
    op.apply(v, &mut y);
    dot(v, &y).re
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub n_max: usize,
    pub leak_tol: f64,
    pub dim_cap: usize,
    pub krylov: KrylovOptions,
    pub resolvent: ResolventOptions,
    /// Momentum window for the phonon-number split.
    pub k_window: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            n_max: 4,
            leak_tol: 1e-4,
            dim_cap: DEFAULT_DIM_CAP,
            krylov: KrylovOptions::default(),
            resolvent: ResolventOptions { cg_tol: 1e-13, max_iter: 5000 },
            k_window: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub t: f64,
    /// `|| xi_t - psi_{phi_t} (x) Y_t ||`
    pub corrected: f64,
    /// `|| xi_t - psi_{phi_t} (x) Omega ||`
    pub uncorrected: f64,
    pub gamma_el_distance: f64,
    pub gamma_ph_distance: f64,
    /// `<N>` of `xi_t`, the phonons outside the coherent state.
    pub displaced_number: f64,
    pub windows: PhononWindows,
    pub xi_norm: f64,
    pub xi_leakage: f64,
    pub fock_leakage: f64,
    /// `|| Y_t - Omega ||` from the Fock path.
    pub vacuum_distance: f64,
    /// Gaussian minus Fock, on `<N>` and on `|<Omega, Y_t>|`.
    pub gaussian_n_diff: f64,
    pub gaussian_overlap_diff: f64,
    pub gap: f64,
    pub c0: f64,
}

#[derive(Debug)]
pub struct OracleRun {
    pub records: Vec<OracleRecord>,
    pub c0: f64,
    pub error: Option<OracleError>,
}

struct Tracker {
    xi: Vec<C64>,
    fock: Vec<C64>,
    gauss: BogoliubovState,
    kernel: KernelF,
}

fn record(space: &OracleSpace, lp: &PekarState, tr: &Tracker, c0: f64, k_window: f64) -> OracleRecord {
    let lat = &space.lat;
    let a2 = space.alpha * space.alpha;
    let target = space.product(&lp.gs.psi_gs, &tr.fock);
    let vacuum = space.product(&lp.gs.psi_gs, &space.fock.vacuum());
    let diff = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let dens = reduced_densities_from_fluctuation(space, &tr.xi, &lp.phi);
    let el = trace_distance(&dens.gamma_el, &state_projector(lat, &lp.psi)).unwrap_or(f64::NAN);
    let ph = trace_distance(&dens.gamma_ph, &field_projector(lat, &lp.phi)).unwrap_or(f64::NAN);
    let gm = moments(&tr.gauss, space.alpha);
    let fock_n = space.fock.number_expectation(&tr.fock) / a2;
    OracleRecord {
        t: lp.t,
        corrected: diff(&tr.xi, &target),
        uncorrected: diff(&tr.xi, &vacuum),
        gamma_el_distance: el,
        gamma_ph_distance: ph,
        displaced_number: number_expectation(space, &tr.xi),
        windows: phonon_number_windows(space, &tr.xi, k_window),
        xi_norm: norm_sq(&tr.xi).sqrt(),
        xi_leakage: space.leakage(&tr.xi),
        fock_leakage: space.fock.leakage(&tr.fock),
        vacuum_distance: (2.0 * (1.0 - tr.fock[0].re)).max(0.0).sqrt(),
        gaussian_n_diff: gm.n_expect - fock_n,
        gaussian_overlap_diff: gm.vacuum_overlap.norm() - tr.fock[0].norm(),
        gap: lp.gs.gap,
        c0,
    }
}

/// Full comparison run in the frame of the moving coherent state: the
/// fluctuation vector `xi_t` is propagated with its own generator (exponential
/// midpoint rule), alongside the Landau-Pekar solution and the quadratic
/// dynamics on both the Fock and the Gaussian paths.
pub fn run_fluctuation_frame(
    lat: &Lattice,
    lp: &mut PekarState,
    t_final: f64,
    lp_opts: &LpOptions,
    opts: &OracleOptions,
    record_stride: usize,
) -> OracleRun {
    let space = match OracleSpace::new(lat.clone(), lp.alpha, opts.n_max, opts.dim_cap) {
        Ok(s) => s,
        Err(e) => return OracleRun { records: Vec::new(), c0: f64::NAN, error: Some(e) },
    };
    let kernel = match assemble_kernel(lat, &lp.gs, &opts.resolvent, None) {
        Ok(k) => k,
        Err(e) => return OracleRun { records: Vec::new(), c0: f64::NAN, error: Some(e.into()) },
    };
    let c0 = kernel.trace_term;
    let m = lat.n_modes();
    let mut tr = Tracker {
        xi: space.product(&lp.gs.psi_gs, &space.fock.vacuum()),
        fock: space.fock.vacuum(),
        gauss: BogoliubovState::vacuum(m),
        kernel,
    };
    let mut records = vec![record(&space, lp, &tr, c0, opts.k_window)];
    let steps = if t_final == 0.0 { 0 } else { (t_final.abs() / lp_opts.dt).ceil() as usize };
    let dt = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let stride = record_stride.max(1);
    let pairs = lat.modes.pairs().to_vec();
    let dk_vol = lat.grid.k_cell_volume();
    let step_once = |lp: &mut PekarState, tr: &mut Tracker| -> Result<(), OracleError> {
        let phi0 = lp.phi.clone();
        let sigma0 = lat.sigma(&lp.psi);
        let e0 = lp.gs.e;
        lp_step(lat, lp, dt, lp_opts)?;
        lp.sync(lat, lp_opts)?;
        let sigma1 = lat.sigma(&lp.psi);
        let avg = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect::<Vec<C64>>();
        let gen = fluctuation_generator(&space, &avg(&phi0, &lp.phi), &avg(&sigma0, &sigma1), 0.5 * (e0 + lp.gs.e));
        tr.xi = krylov_propagate(&gen, &tr.xi, dt, &opts.krylov)?;
        let mut k1 = assemble_kernel(lat, &lp.gs, &opts.resolvent, None)?;
        k1.t = lp.t;
        let blocks = quadratic_generator(&KernelF::midpoint(&tr.kernel, &k1), &pairs, dk_vol)?;
        let fg = fock_generator(&space.fock, &blocks, space.alpha);
        tr.fock = expm_apply(&fg, &tr.fock, dt, &opts.krylov)?.0;
        tr.gauss = bogoliubov_step(&tr.gauss, &blocks, space.alpha, dt)?;
        tr.kernel = k1;
        Ok(())
    };
    for n in 1..=steps {
        if let Err(e) = step_once(lp, &mut tr) {
            return OracleRun { records, c0, error: Some(e) };
        }
        if n % stride == 0 || n == steps {
            let r = record(&space, lp, &tr, c0, opts.k_window);
            if r.xi_leakage > opts.leak_tol {
                let leakage = r.xi_leakage;
                records.push(r);
                return OracleRun { records, c0, error: Some(OracleError::Leakage { leakage, tol: opts.leak_tol }) };
            }
            records.push(r);
        }
    }
    OracleRun { records, c0, error: None }
}
