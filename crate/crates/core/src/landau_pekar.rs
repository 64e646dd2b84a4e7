//! Time integration of the coupled electron/classical-field system
//!
//! ```text
//! i d/dt psi        = (-Laplacian + V_phi) psi
//! i alpha^2 d/dt phi = phi + sigma_psi
//! ```
//!
//! by Strang splitting into the kinetic flow and the exactly solvable
//! interaction flow, with the ground state of `h_phi` tracked along the way.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electron::{ground_state, EigenOptions, ElectronError, GroundStateData, Lattice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error(transparent)]
    Electron(#[from] ElectronError),
    #[error("norm drift {drift:.3e} exceeds tolerance {tol:.3e}")]
    NormDrift { drift: f64, tol: f64 },
    #[error("time step {dt} exceeds dt_max {max}")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("t_final {t_final} exceeds horizon_guard * alpha^2 = {limit}")]
    Horizon { t_final: f64, limit: f64 },
    #[error("alpha must be >= 1 and finite, got {0}")]
    Alpha(f64),
    #[error("field or state length mismatch")]
    Shape,
}

#[derive(Clone, Debug)]
pub struct LpOptions {
    pub dt: f64,
    pub dt_max: f64,
    pub eig: EigenOptions,
    /// Ground state is recomputed when `||phi - phi_cached||` exceeds this.
    pub refresh_tol: f64,
    pub tol_norm: f64,
    /// `None` means 0.1 times the initial gap.
    pub gap_floor: Option<f64>,
    pub horizon_guard: Option<f64>,
    pub record_stride: usize,
    /// Ground state and `Theta_e` are updated every this many steps.
    pub refresh_stride: usize,
    pub track_ground_state: bool,
}

impl LpOptions {
    pub fn for_cutoff(cutoff: f64) -> Self {
        let dt_max = 0.05 / cutoff.powi(2).max(1.0);
        Self {
            dt: dt_max,
            dt_max,
            eig: EigenOptions::default(),
            refresh_tol: 1e-6,
            tol_norm: 1e-8,
            gap_floor: None,
            horizon_guard: None,
            record_stride: 1,
            refresh_stride: 1,
            track_ground_state: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PekarState {
    pub t: f64,
    pub alpha: f64,
    pub psi: Vec<C64>,
    pub phi: Vec<C64>,
    /// Ground-state data for `phi_cached`.
    pub gs: GroundStateData,
    pub phi_cached: Vec<C64>,
    pub theta_e: f64,
    pub theta_omega: f64,
    /// Gap at construction time.
    pub gap0: f64,
    /// Distance below which the cache counts as current for `phi`.
    pub cache_tol: f64,
    quad_t: f64,
    quad_e: f64,
    pending: usize,
}

impl PekarState {
    /// Initial data `(psi_{phi0}, phi0)`.
    pub fn new(lat: &Lattice, alpha: f64, phi0: Vec<C64>, eig: &EigenOptions) -> Result<Self, LpError> {
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(LpError::Alpha(alpha));
        }
        if phi0.len() != lat.n_modes() {
            return Err(LpError::Shape);
        }
        let v = lat.potential(&phi0);
        let mut opts = eig.clone();
        opts.gap_floor = None;
        let gs = ground_state(&lat.grid, &v, &opts, None)?;
        let psi = gs.psi_gs.clone();
        let gap0 = gs.gap;
        let gs_e = gs.e;
        Ok(Self { t: 0.0, alpha, psi, phi_cached: phi0.clone(), phi: phi0, gs, theta_e: 0.0, theta_omega: 0.0, gap0, cache_tol: 0.0, quad_t: 0.0, quad_e: gs_e, pending: 0 })
    }

    /// Arbitrary electron initial state; outside the regime the adiabatic
    /// statements cover.
    pub fn new_unsupported(
        lat: &Lattice,
        alpha: f64,
        psi: Vec<C64>,
        phi0: Vec<C64>,
        eig: &EigenOptions,
    ) -> Result<Self, LpError> {
        if psi.len() != lat.grid.len() {
            return Err(LpError::Shape);
        }
        let mut s = Self::new(lat, alpha, phi0, eig)?;
        s.psi = psi;
        Ok(s)
    }

    pub fn energy(&self, lat: &Lattice) -> f64 {
        lat.pekar_energy(&self.psi, &self.phi)
    }

    pub fn norm(&self, lat: &Lattice) -> f64 {
        lat.state_norm_sq(&self.psi).sqrt()
    }

    /// `omega = -Re <phi, sigma_psi>`, equal to `alpha^2 Im <phi, d/dt phi> + ||phi||^2`
    /// along the flow.
    pub fn omega(&self, lat: &Lattice) -> f64 {
        -lat.field_inner(&self.phi, &lat.sigma(&self.psi)).re
    }

    /// `d/dt phi` from the field equation.
    pub fn phi_dot(&self, lat: &Lattice) -> Vec<C64> {
        let sigma = lat.sigma(&self.psi);
        let f = C64::new(0.0, -1.0 / (self.alpha * self.alpha));
        self.phi.iter().zip(&sigma).map(|(p, s)| f * (p + s)).collect()
    }

    pub fn cache_is_fresh(&self, lat: &Lattice) -> bool {
        let diff: Vec<C64> = self.phi.iter().zip(&self.phi_cached).map(|(a, b)| a - b).collect();
        lat.field_norm_sq(&diff).sqrt() <= self.cache_tol
    }

    /// `|| psi - e^{-i Theta_e} psi_{phi_t} ||`, using the cached ground state.
    pub fn adiabatic_error(&self, lat: &Lattice) -> f64 {
        if !self.cache_is_fresh(lat) {
            log::debug!("adiabatic_error evaluated against a stale ground-state cache");
        }
        let ph = C64::from_polar(1.0, -self.theta_e);
        let diff: Vec<C64> = self.psi.iter().zip(&self.gs.psi_gs).map(|(a, b)| a - ph * b).collect();
        lat.state_norm_sq(&diff).sqrt().min(2.0)
    }

    /// Recomputes the ground state unless the cache is within `refresh_tol` of `phi`.
    pub fn refresh(&mut self, lat: &Lattice, opts: &LpOptions) -> Result<(), LpError> {
        self.cache_tol = opts.refresh_tol;
        if self.cache_is_fresh(lat) {
            return Ok(());
        }
        let mut eig = opts.eig.clone();
        eig.gap_floor = Some(opts.gap_floor.unwrap_or(0.1 * self.gap0));
        let v = lat.potential(&self.phi);
        self.gs = ground_state(&lat.grid, &v, &eig, Some(&self.gs))?;
        self.phi_cached = self.phi.clone();
        Ok(())
    }

    /// Brings the ground state and `Theta_e` up to the current time.
    pub fn sync(&mut self, lat: &Lattice, opts: &LpOptions) -> Result<(), LpError> {
        if !opts.track_ground_state || self.pending == 0 {
            return Ok(());
        }
        self.refresh(lat, opts)?;
        self.theta_e += 0.5 * (self.t - self.quad_t) * (self.quad_e + self.gs.e);
        self.quad_t = self.t;
        self.quad_e = self.gs.e;
        self.pending = 0;
        Ok(())
    }
}

/// Half-open kinetic propagator `e^{-i |k|^2 tau}` applied in place.
fn kinetic(lat: &Lattice, psi: &mut [C64], tau: f64) {
    lat.grid.apply_multiplier(psi, |ksq| C64::from_polar(1.0, -ksq * tau));
}

/// Exact flow of the interaction and field-energy part over `dt`:
/// `sigma` is frozen because `|psi|^2` is invariant under a potential step.
fn interaction(lat: &Lattice, alpha: f64, psi: &mut [C64], phi: &mut [C64], dt: f64) {
    let sigma = lat.sigma(psi);
    let a2 = alpha * alpha;
    let theta = dt / a2;
    let rot = C64::from_polar(1.0, -theta);
    let half = (0.5 * theta).sin();
    let one_minus_rot = C64::new(2.0 * half * half, theta.sin());
    let mut integral = Vec::with_capacity(phi.len());
    for (p, s) in phi.iter_mut().zip(&sigma) {
        let shifted = *p + s;
        integral.push(shifted * C64::new(0.0, -a2) * one_minus_rot - s * dt);
        *p = rot * shifted - s;
    }
    let v = lat.potential(&integral);
    for (z, vx) in psi.iter_mut().zip(&v) {
        *z *= C64::from_polar(1.0, -vx);
    }
}

/// One Strang step `K(dt/2) B(dt) K(dt/2)`; negative `dt` runs backwards.
/// Phase quadratures use the trapezoidal rule with refreshed ground-state data.
pub fn lp_step(lat: &Lattice, state: &mut PekarState, dt: f64, opts: &LpOptions) -> Result<(), LpError> {
    if dt.abs() > opts.dt_max * (1.0 + 1e-12) {
        return Err(LpError::StepTooLarge { dt: dt.abs(), max: opts.dt_max });
    }
    let w_old = state.omega(lat);
    kinetic(lat, &mut state.psi, 0.5 * dt);
    interaction(lat, state.alpha, &mut state.psi, &mut state.phi, dt);
    kinetic(lat, &mut state.psi, 0.5 * dt);
    state.t += dt;
    let drift = (state.norm(lat) - 1.0).abs();
    if drift > opts.tol_norm {
        return Err(LpError::NormDrift { drift, tol: opts.tol_norm });
    }
    state.pending += 1;
    if state.pending >= opts.refresh_stride.max(1) {
        state.sync(lat, opts)?;
    }
    state.theta_omega += 0.5 * dt * (w_old + state.omega(lat));
    Ok(())
}

/// Propagates the field alone with `sigma` held at a given value; useful
/// for checking the exact phonon substep.
pub fn rotate_field(phi: &[C64], sigma: &[C64], alpha: f64, dt: f64) -> Vec<C64> {
    let rot = C64::from_polar(1.0, -dt / (alpha * alpha));
    phi.iter().zip(sigma).map(|(p, s)| rot * (p + s) - s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpRecord {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub e: f64,
    pub gap: f64,
    pub omega: f64,
    pub theta_e: f64,
    pub theta_omega: f64,
    pub adiabatic_error: f64,
}

impl LpRecord {
    pub fn capture(lat: &Lattice, s: &PekarState) -> Self {
        let tracked = s.cache_is_fresh(lat);
        Self {
            t: s.t,
            norm: s.norm(lat),
            energy: s.energy(lat),
            e: if tracked { s.gs.e } else { f64::NAN },
            gap: if tracked { s.gs.gap } else { f64::NAN },
            omega: s.omega(lat),
            theta_e: s.theta_e,
            theta_omega: s.theta_omega,
            adiabatic_error: if tracked { s.adiabatic_error(lat) } else { f64::NAN },
        }
    }
}

#[derive(Debug)]
pub struct Evolution {
    pub records: Vec<LpRecord>,
    /// Set when the run stopped early; `records` then holds the partial trajectory.
    pub error: Option<LpError>,
}

/// Fixed-step loop to `t_final` (relative to the current time). The step is
/// adjusted down so that an integer number of steps lands on `t_final`.
/// `observer` sees the state at every recorded step.
pub fn evolve(
    lat: &Lattice,
    state: &mut PekarState,
    t_final: f64,
    opts: &LpOptions,
    mut observer: impl FnMut(&PekarState, &LpRecord),
) -> Evolution {
    if let Some(h) = opts.horizon_guard {
        let limit = h * state.alpha * state.alpha;
        if t_final.abs() > limit {
            return Evolution { records: Vec::new(), error: Some(LpError::Horizon { t_final, limit }) };
        }
    }
    let steps = if t_final == 0.0 { 0 } else { (t_final.abs() / opts.dt).ceil() as usize };
    let dt = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let stride = opts.record_stride.max(1);
    let first = LpRecord::capture(lat, state);
    observer(state, &first);
    let mut records = vec![first];
    for n in 1..=steps {
        if let Err(e) = lp_step(lat, state, dt, opts) {
            return Evolution { records, error: Some(e) };
        }
        if n % stride == 0 || n == steps {
            if let Err(e) = state.sync(lat, opts) {
                return Evolution { records, error: Some(e) };
            }
            let r = LpRecord::capture(lat, state);
            observer(state, &r);
            records.push(r);
        }
    }
    Evolution { records, error: None }
}

/// `phi0(k) = A e^{-|k|^2/w^2} e^{i chi}` on every mode.
pub fn gaussian_field(lat: &Lattice, amplitude: f64, width: f64, phase: f64) -> Vec<C64> {
    lat.modes
        .lattice_indices()
        .iter()
        .map(|&i| C64::from_polar(amplitude * (-lat.grid.k_norm_sq(i) / (width * width)).exp(), phase))
        .collect()
}

/// `phi0 = -c sigma_{psi_trial}`; at `c = 1` and `psi_trial = psi_{phi0}` this is stationary.
pub fn seeded_field(lat: &Lattice, c: f64, psi_trial: &[C64]) -> Vec<C64> {
    lat.sigma(psi_trial).into_iter().map(|s| -c * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn setup() -> (Lattice, Vec<C64>) {
        let lat = Lattice::new(Grid::new(1, 32, 5.0).unwrap(), 3.0).unwrap();
        let phi: Vec<C64> = (0..lat.n_modes())
            .map(|j| {
                let k = lat.grid.k_norm(lat.modes.lattice_index(j));
                C64::new(-1.2 * (-k * k / 4.0).exp(), 0.0)
            })
            .collect();
        (lat, phi)
    }

    #[test]
    fn free_rotation_when_sigma_vanishes() {
        let phi = vec![C64::new(0.4, -0.1), C64::new(0.2, 0.3)];
        let out = rotate_field(&phi, &[C64::new(0.0, 0.0); 2], 2.0, 0.3);
        let rot = C64::from_polar(1.0, -0.3 / 4.0);
        for (a, b) in out.iter().zip(&phi) {
            assert!((a - rot * b).norm() < 1e-15);
        }
    }

    #[test]
    fn uniform_density_rotates_field_exactly() {
        let (lat, phi) = setup();
        let mut s = PekarState::new(&lat, 2.0, phi.clone(), &EigenOptions::default()).unwrap();
        let amp = (1.0 / lat.grid.half_length() / 2.0).sqrt();
        s.psi = vec![C64::new(amp, 0.0); lat.grid.len()];
        let mut opts = LpOptions::for_cutoff(3.0);
        opts.track_ground_state = false;
        lp_step(&lat, &mut s, opts.dt, &opts).unwrap();
        let rot = C64::from_polar(1.0, -opts.dt / 4.0);
        for (a, b) in s.phi.iter().zip(&phi) {
            assert!((a - rot * b).norm() < 1e-14);
        }
    }

    #[test]
    fn norm_and_phase_invariance() {
        let (lat, phi) = setup();
        let mut s = PekarState::new(&lat, 3.0, phi, &EigenOptions::default()).unwrap();
        let e0 = s.energy(&lat);
        let mut rotated = s.clone();
        rotated.psi.iter_mut().for_each(|z| *z *= C64::from_polar(1.0, 1.3));
        assert!((rotated.energy(&lat) - e0).abs() < 1e-14 * e0.abs().max(1.0));
        let opts = LpOptions::for_cutoff(3.0);
        for _ in 0..20 {
            lp_step(&lat, &mut s, opts.dt, &opts).unwrap();
        }
        assert!((s.norm(&lat) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_has_zero_energy_and_phase_rate() {
        let lat = Lattice::new(Grid::new(1, 16, 3.0).unwrap(), 2.0).unwrap();
        let s = PekarState::new(&lat, 2.0, vec![C64::new(0.0, 0.0); lat.n_modes()], &EigenOptions::default()).unwrap();
        assert!(s.energy(&lat).abs() < 1e-12);
        assert_eq!(s.omega(&lat), 0.0);
        assert!(s.adiabatic_error(&lat) < 1e-12);
    }

    #[test]
    fn zero_steps_gives_single_record() {
        let (lat, phi) = setup();
        let mut s = PekarState::new(&lat, 2.0, phi, &EigenOptions::default()).unwrap();
        let ev = evolve(&lat, &mut s, 0.0, &LpOptions::for_cutoff(3.0), |_, _| {});
        assert_eq!(ev.records.len(), 1);
        assert!(ev.error.is_none());
        assert!(ev.records[0].adiabatic_error < 1e-12);
    }

    #[test]
    fn oversized_step_rejected() {
        let (lat, phi) = setup();
        let mut s = PekarState::new(&lat, 2.0, phi, &EigenOptions::default()).unwrap();
        let opts = LpOptions::for_cutoff(3.0);
        assert!(matches!(lp_step(&lat, &mut s, 1.0, &opts), Err(LpError::StepTooLarge { .. })));
    }

    #[test]
    fn horizon_guard_rejects_long_runs() {
        let (lat, phi) = setup();
        let mut s = PekarState::new(&lat, 2.0, phi, &EigenOptions::default()).unwrap();
        let opts = LpOptions { horizon_guard: Some(0.1), ..LpOptions::for_cutoff(3.0) };
        let ev = evolve(&lat, &mut s, 1.0, &opts, |_, _| {});
        assert!(matches!(ev.error, Some(LpError::Horizon { .. })));
    }
}
