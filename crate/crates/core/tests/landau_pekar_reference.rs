mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use polaron_core::electron::{EigenOptions, Lattice};
use polaron_core::grid::Grid;
use polaron_core::landau_pekar::{gaussian_field, lp_step, LpOptions, PekarState};

const N: usize = 16;
const L: f64 = 4.0;
const CUT: f64 = 2.5;

struct Dense {
    t: DMatrix<C64>,
    k: Vec<f64>,
    g: Vec<f64>,
    x: Vec<f64>,
    dk: f64,
    dx: f64,
}

impl Dense {
    fn new(lat: &Lattice) -> Self {
        let m = lat.n_modes();
        let k: Vec<f64> = (0..m).map(|j| lat.grid.k_vector(lat.modes.lattice_index(j))[0]).collect();
        let dx = 2.0 * L / N as f64;
        Self {
            t: dense_kinetic_1d(N, L),
            g: k.iter().map(|k| 1.0 / k.abs()).collect(),
            k,
            x: (0..N).map(|i| -L + i as f64 * dx).collect(),
            dk: std::f64::consts::PI / L,
            dx,
        }
    }

    /// `V(x) = 2 Re sum_j dk g_j phi_j e^{i k_j x}`
    fn potential(&self, phi: &[C64]) -> Vec<f64> {
        self.x
            .iter()
            .map(|x| 2.0 * self.dk * (0..phi.len()).map(|j| self.g[j] * phi[j] * C64::from_polar(1.0, self.k[j] * x)).sum::<C64>().re)
            .collect()
    }

    /// `sigma_j = g_j sum_x e^{-i k_j x} |psi(x)|^2 dx`
    fn sigma(&self, psi: &[C64]) -> Vec<C64> {
        (0..self.k.len())
            .map(|j| self.g[j] * self.dx * self.x.iter().zip(psi).map(|(x, p)| C64::from_polar(p.norm_sqr(), -self.k[j] * x)).sum::<C64>())
            .collect()
    }

    fn rhs(&self, alpha: f64, psi: &[C64], phi: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let v = self.potential(phi);
        let tp = &self.t * DVector::from_column_slice(psi);
        let i = C64::new(0.0, 1.0);
        let dpsi = (0..N).map(|x| -i * (tp[x] + psi[x] * v[x])).collect();
        let s = self.sigma(psi);
        let dphi = phi.iter().zip(&s).map(|(p, s)| -i * (p + s) / (alpha * alpha)).collect();
        (dpsi, dphi)
    }

    fn rk4(&self, alpha: f64, psi: &mut Vec<C64>, phi: &mut Vec<C64>, dt: f64) {
        let add = |a: &[C64], b: &[C64], h: f64| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| x + y * h).collect() };
        let (k1p, k1f) = self.rhs(alpha, psi, phi);
        let (k2p, k2f) = self.rhs(alpha, &add(psi, &k1p, dt / 2.0), &add(phi, &k1f, dt / 2.0));
        let (k3p, k3f) = self.rhs(alpha, &add(psi, &k2p, dt / 2.0), &add(phi, &k2f, dt / 2.0));
        let (k4p, k4f) = self.rhs(alpha, &add(psi, &k3p, dt), &add(phi, &k3f, dt));
        for i in 0..psi.len() {
            psi[i] += (k1p[i] + k2p[i] * 2.0 + k3p[i] * 2.0 + k4p[i]) * (dt / 6.0);
        }
        for i in 0..phi.len() {
            phi[i] += (k1f[i] + k2f[i] * 2.0 + k3f[i] * 2.0 + k4f[i]) * (dt / 6.0);
        }
    }
}

fn setup(alpha: f64) -> (Lattice, PekarState) {
    let lat = Lattice::new(Grid::new(1, N, L).unwrap(), CUT).unwrap();
    let phi = gaussian_field(&lat, -2.0, 1.5, 0.5);
    let s = PekarState::new(&lat, alpha, phi, &EigenOptions::default()).unwrap();
    (lat, s)
}

#[test]
fn potential_and_sigma_match_definitions() {
    let (lat, s) = setup(2.0);
    let d = Dense::new(&lat);
    for (a, b) in lat.coupling.iter().zip(&d.g) {
        assert!((a - b).abs() < 1e-14);
    }
    let v = lat.potential(&s.phi);
    assert!(v.iter().zip(d.potential(&s.phi)).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(max_diff(&lat.sigma(&s.psi), &d.sigma(&s.psi)) < 1e-12);
}

#[test]
fn strang_converges_to_rk4_reference_at_second_order() {
    let alpha = 2.0;
    let t_final = 1.0;
    let (lat, s0) = setup(alpha);
    let d = Dense::new(&lat);
    let (mut psi, mut phi) = (s0.psi.clone(), s0.phi.clone());
    let fine = 20_000;
    for _ in 0..fine {
        d.rk4(alpha, &mut psi, &mut phi, t_final / fine as f64);
    }
    let mut errs = Vec::new();
    for steps in [100usize, 200, 400] {
        let mut s = s0.clone();
        let mut opts = LpOptions::for_cutoff(CUT);
        opts.dt_max = 1.0;
        opts.track_ground_state = false;
        for _ in 0..steps {
            lp_step(&lat, &mut s, t_final / steps as f64, &opts).unwrap();
        }
        let e = max_diff(&s.psi, &psi).max(max_diff(&s.phi, &phi));
        errs.push(e);
    }
    let r1 = errs[0] / errs[1];
    let r2 = errs[1] / errs[2];
    assert!(errs[2] < 1e-4, "{errs:?}");
    assert!((r1 - 4.0).abs() < 0.4 && (r2 - 4.0).abs() < 0.4, "ratios {r1} {r2}");
}

#[test]
fn omega_matches_field_time_derivative() {
    // omega = alpha^2 Im <phi, d/dt phi> + ||phi||^2 along the flow; the
    // symmetric step makes the central difference second order in h
    let alpha = 3.0;
    let (lat, mut s) = setup(alpha);
    let mut opts = LpOptions::for_cutoff(CUT);
    opts.track_ground_state = false;
    for _ in 0..50 {
        lp_step(&lat, &mut s, 1e-3, &opts).unwrap();
    }
    let omega = s.omega(&lat);
    let errs: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&h| {
            let (mut back, mut fwd) = (s.clone(), s.clone());
            lp_step(&lat, &mut back, -h, &opts).unwrap();
            lp_step(&lat, &mut fwd, h, &opts).unwrap();
            let dphi: Vec<C64> = fwd.phi.iter().zip(&back.phi).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            (alpha * alpha * lat.field_inner(&s.phi, &dphi).im + lat.field_norm_sq(&s.phi) - omega).abs()
        })
        .collect();
    assert!(errs[2] < 1e-7, "{errs:?}");
    assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
}
