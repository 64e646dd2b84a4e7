//! Periodic box discretization: spatial grid, folded momentum lattice,
//! unitary Fourier transform with explicit measure weights, phonon mode sets
//! and the `1/|k|` coupling profile.
//!
//! Positions are `x_j = -L + j dx` along every axis, `dx = 2L/N`. Momenta
//! are `k = dk * m` with `m` folded to `{-N/2, ..., N/2 - 1}` and `dk = pi/L`.
//! Flat indices run with axis 0 fastest. Momentum-space arrays are stored in
//! FFT order (`m = p` for `p < N/2`, `m = p - N` otherwise).
//!
//! The transform pair is normalized so that lattice sums approximate the
//! continuum integrals:
//!
//! ```text
//! f^(k) = (2 pi)^(-d/2) sum_x e^{-i k.x} f(x) dx^d
//! f(x)  = (2 pi)^(-d/2) sum_k e^{+i k.x} f^(k) dk^d
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1 or 3, got {0}")]
    Dimension(usize),
    #[error("N must be even and at least 8, got {0}")]
    Points(usize),
    #[error("half box length must be positive and finite, got {0}")]
    Length(f64),
    #[error("basis mismatch: expected {expected:?}, found {found:?}")]
    BasisMismatch { expected: Basis, found: Basis },
    #[error("field length {found} does not match grid size {expected}")]
    Length2 { expected: usize, found: usize },
    #[error("UV cutoff {cutoff} must be positive and below the Nyquist radius {nyquist}")]
    Cutoff { cutoff: f64, nyquist: f64 },
    #[error("mode set is empty (cutoff {0} is below the smallest lattice momentum)")]
    EmptyModes(f64),
    #[error("zero mode present in mode set")]
    ZeroMode,
    #[error("mode set is not closed under k -> -k (lattice index {0})")]
    NotClosed(usize),
    #[error("lattice index {0} out of range or duplicated")]
    BadIndex(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Position,
    Momentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Periodic box `[-L, L]^d` with `N` points per axis.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_length: f64,
    dx: f64,
    dk: f64,
    m_int: Vec<[i64; 3]>,
    k_sq: Vec<f64>,
    neg: Vec<usize>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("half_length", &self.half_length)
            .field("dx", &self.dx)
            .field("dk", &self.dk)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.half_length == other.half_length
    }
}

fn fold(p: usize, n: usize) -> i64 {
    if p < n / 2 {
        p as i64
    } else {
        p as i64 - n as i64
    }
}

fn unfold(m: i64, n: usize) -> usize {
    m.rem_euclid(n as i64) as usize
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_length: f64) -> Result<Self, GridError> {
        if dim != 1 && dim != 3 {
            return Err(GridError::Dimension(dim));
        }
        if n % 2 != 0 || n < 8 {
            return Err(GridError::Points(n));
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(GridError::Length(half_length));
        }
        let dx = 2.0 * half_length / n as f64;
        let dk = PI / half_length;
        let len = n.pow(dim as u32);
        let mut m_int = Vec::with_capacity(len);
        let mut k_sq = Vec::with_capacity(len);
        let mut neg = Vec::with_capacity(len);
        for idx in 0..len {
            let mut m = [0i64; 3];
            let mut rest = idx;
            for slot in m.iter_mut().take(dim) {
                *slot = fold(rest % n, n);
                rest /= n;
            }
            let ksq = m.iter().map(|&c| (c as f64 * dk).powi(2)).sum();
            let mut nidx = 0usize;
            for axis in (0..dim).rev() {
                nidx = nidx * n + unfold(-m[axis], n);
            }
            m_int.push(m);
            k_sq.push(ksq);
            neg.push(nidx);
        }
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(n);
        let fft_inv = planner.plan_fft_inverse(n);
        Ok(Self { dim, n, half_length, dx, dk, m_int, k_sq, neg, fft_fwd, fft_inv })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of lattice points, `N^d`.
    pub fn len(&self) -> usize {
        self.m_int.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_int.is_empty()
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dk(&self) -> f64 {
        self.dk
    }

    /// Spatial measure weight `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    /// Momentum measure weight `dk^d`.
    pub fn k_cell_volume(&self) -> f64 {
        self.dk.powi(self.dim as i32)
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut rest = idx;
        for slot in x.iter_mut().take(self.dim) {
            *slot = -self.half_length + (rest % self.n) as f64 * self.dx;
            rest /= self.n;
        }
        x
    }

    /// Integer lattice coordinates of momentum index `idx` (folded).
    pub fn lattice_coords(&self, idx: usize) -> [i64; 3] {
        self.m_int[idx]
    }

    pub fn k_vector(&self, idx: usize) -> [f64; 3] {
        let m = self.m_int[idx];
        [m[0] as f64 * self.dk, m[1] as f64 * self.dk, m[2] as f64 * self.dk]
    }

    pub fn k_norm_sq(&self, idx: usize) -> f64 {
        self.k_sq[idx]
    }

    pub fn k_norm_sq_all(&self) -> &[f64] {
        &self.k_sq
    }

    pub fn k_norm(&self, idx: usize) -> f64 {
        self.k_sq[idx].sqrt()
    }

    pub fn zero_index(&self) -> usize {
        0
    }

    /// Lattice index of `-k` (folded; exact for every point off the Nyquist planes).
    pub fn negate(&self, idx: usize) -> usize {
        self.neg[idx]
    }

    /// `k . x` for lattice index `k_idx` and spatial index `x_idx`.
    pub fn phase_arg(&self, k_idx: usize, x_idx: usize) -> f64 {
        let k = self.k_vector(k_idx);
        let x = self.position(x_idx);
        k[0] * x[0] + k[1] * x[1] + k[2] * x[2]
    }

    /// Plane wave `e^{i k.x}` sampled on the spatial grid.
    pub fn plane_wave(&self, k_idx: usize) -> Vec<C64> {
        (0..self.len()).map(|x| C64::from_polar(1.0, self.phase_arg(k_idx, x))).collect()
    }

    /// Largest radius for which every retained lattice point has an exact negation.
    pub fn nyquist_radius(&self) -> f64 {
        (self.n / 2) as f64 * self.dk
    }

    fn sign(&self, idx: usize) -> f64 {
        let m = self.m_int[idx];
        if (m[0] + m[1] + m[2]).rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn fft_axes(&self, data: &mut [C64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.fft_inv } else { &self.fft_fwd };
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // axis 0 is contiguous
        for line in data.chunks_exact_mut(n) {
            plan.process_with_scratch(line, &mut scratch);
        }
        if self.dim == 1 {
            return;
        }
        let mut line = vec![C64::new(0.0, 0.0); n];
        for axis in 1..self.dim {
            let stride = n.pow(axis as u32);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }

    /// Unnormalized lattice sum `sum_x e^{-i k.x} f(x)` for every lattice momentum.
    pub fn lattice_forward(&self, data: &mut [C64]) {
        self.fft_axes(data, false);
        for (idx, v) in data.iter_mut().enumerate() {
            *v *= self.sign(idx);
        }
    }

    /// Unnormalized lattice sum `sum_k e^{+i k.x} g(k)` for every grid point.
    pub fn lattice_inverse(&self, data: &mut [C64]) {
        for (idx, v) in data.iter_mut().enumerate() {
            *v *= self.sign(idx);
        }
        self.fft_axes(data, true);
    }

    /// Applies `f(|k|^2)` as a Fourier multiplier to a position-space array.
    pub fn apply_multiplier(&self, data: &mut [C64], mult: impl Fn(f64) -> C64) {
        self.fft_axes(data, false);
        let scale = 1.0 / self.len() as f64;
        for (v, &ksq) in data.iter_mut().zip(&self.k_sq) {
            *v *= mult(ksq) * scale;
        }
        self.fft_axes(data, true);
    }

    /// Spectral `-Laplacian` applied to a position-space array.
    pub fn apply_kinetic(&self, psi: &[C64]) -> Vec<C64> {
        let mut out = psi.to_vec();
        self.apply_multiplier(&mut out, |ksq| C64::new(ksq, 0.0));
        out
    }

    pub fn transform(&self, field: &ComplexField, direction: Direction) -> Result<ComplexField, GridError> {
        field.check_len(self)?;
        let expected = match direction {
            Direction::Forward => Basis::Position,
            Direction::Inverse => Basis::Momentum,
        };
        if field.basis != expected {
            return Err(GridError::BasisMismatch { expected, found: field.basis });
        }
        let norm = (2.0 * PI).powf(-(self.dim as f64) / 2.0);
        let mut values = field.values.clone();
        let basis = match direction {
            Direction::Forward => {
                self.lattice_forward(&mut values);
                let w = norm * self.cell_volume();
                values.iter_mut().for_each(|v| *v *= w);
                Basis::Momentum
            }
            Direction::Inverse => {
                self.lattice_inverse(&mut values);
                let w = norm * self.k_cell_volume();
                values.iter_mut().for_each(|v| *v *= w);
                Basis::Position
            }
        };
        Ok(ComplexField { basis, values })
    }

    /// Weighted inner product, conjugate-linear in `a`.
    pub fn inner(&self, a: &ComplexField, b: &ComplexField) -> Result<C64, GridError> {
        a.check_len(self)?;
        b.check_len(self)?;
        if a.basis != b.basis {
            return Err(GridError::BasisMismatch { expected: a.basis, found: b.basis });
        }
        let w = match a.basis {
            Basis::Position => self.cell_volume(),
            Basis::Momentum => self.k_cell_volume(),
        };
        Ok(dot(&a.values, &b.values) * w)
    }

    pub fn norm(&self, a: &ComplexField) -> Result<f64, GridError> {
        Ok(self.inner(a, a)?.re.max(0.0).sqrt())
    }
}

/// Euclidean `sum conj(a) b`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sq(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `y += s x`
pub fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Complex samples over the spatial grid or the momentum lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub basis: Basis,
    pub values: Vec<C64>,
}

impl ComplexField {
    pub fn new(basis: Basis, values: Vec<C64>) -> Self {
        Self { basis, values }
    }

    pub fn zeros(grid: &Grid, basis: Basis) -> Self {
        Self { basis, values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    fn check_len(&self, grid: &Grid) -> Result<(), GridError> {
        if self.values.len() != grid.len() {
            return Err(GridError::Length2 { expected: grid.len(), found: self.values.len() });
        }
        Ok(())
    }
}

/// Phonon modes: lattice momenta with `0 < |k| <= cutoff`, stored as
/// consecutive `(k, -k)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    indices: Vec<usize>,
    pair: Vec<usize>,
    cutoff: f64,
}

impl ModeSet {
    pub fn new(grid: &Grid, cutoff: f64) -> Result<Self, GridError> {
        let nyquist = grid.nyquist_radius();
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(GridError::Cutoff { cutoff, nyquist });
        }
        let tol = 1e-12 * cutoff * cutoff;
        let mut reps: Vec<usize> = (0..grid.len())
            .filter(|&i| {
                let ksq = grid.k_norm_sq(i);
                ksq > 0.0 && ksq <= cutoff * cutoff + tol && is_positive_rep(grid.lattice_coords(i))
            })
            .collect();
        if reps.is_empty() {
            return Err(GridError::EmptyModes(cutoff));
        }
        reps.sort_by(|&a, &b| {
            let ka = grid.lattice_coords(a);
            let kb = grid.lattice_coords(b);
            let na: i64 = ka.iter().map(|c| c * c).sum();
            let nb: i64 = kb.iter().map(|c| c * c).sum();
            na.cmp(&nb).then(kb.cmp(&ka))
        });
        let mut indices = Vec::with_capacity(2 * reps.len());
        let mut pair = Vec::with_capacity(2 * reps.len());
        for (r, &i) in reps.iter().enumerate() {
            indices.push(i);
            indices.push(grid.negate(i));
            pair.push(2 * r + 1);
            pair.push(2 * r);
        }
        Ok(Self { indices, pair, cutoff })
    }

    /// Mode set from explicit lattice indices. Closure under negation is
    /// checked; the zero mode is allowed here so that callers can exercise
    /// the rejection paths downstream.
    pub fn from_indices(grid: &Grid, indices: Vec<usize>) -> Result<Self, GridError> {
        let mut seen = std::collections::HashMap::new();
        for (pos, &i) in indices.iter().enumerate() {
            if i >= grid.len() || seen.insert(i, pos).is_some() {
                return Err(GridError::BadIndex(i));
            }
        }
        let mut pair = Vec::with_capacity(indices.len());
        for &i in &indices {
            let ni = grid.negate(i);
            let exact = grid.lattice_coords(ni).iter().zip(grid.lattice_coords(i)).all(|(a, b)| *a == -b);
            match seen.get(&ni) {
                Some(&p) if exact => pair.push(p),
                _ => return Err(GridError::NotClosed(i)),
            }
        }
        let cutoff = indices.iter().map(|&i| grid.k_norm(i)).fold(0.0, f64::max);
        Ok(Self { indices, pair, cutoff })
    }

    /// Number of modes `M`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Lattice index of mode `j`.
    pub fn lattice_index(&self, j: usize) -> usize {
        self.indices[j]
    }

    pub fn lattice_indices(&self) -> &[usize] {
        &self.indices
    }

    /// Mode index of `-k_j`.
    pub fn pair(&self, j: usize) -> usize {
        self.pair[j]
    }

    pub fn pairs(&self) -> &[usize] {
        &self.pair
    }

    pub fn contains_zero(&self, grid: &Grid) -> bool {
        self.indices.iter().any(|&i| grid.k_norm_sq(i) == 0.0)
    }

    /// Scatters a mode vector onto the full momentum lattice.
    pub fn to_field(&self, grid: &Grid, modes: &[C64]) -> ComplexField {
        let mut f = ComplexField::zeros(grid, Basis::Momentum);
        for (&i, &v) in self.indices.iter().zip(modes) {
            f.values[i] = v;
        }
        f
    }

    /// Gathers the mode components of a momentum field; `None` if the field
    /// has weight outside the mode set.
    pub fn from_field(&self, field: &ComplexField) -> Option<Vec<C64>> {
        let mut inside = vec![false; field.values.len()];
        for &i in &self.indices {
            inside[i] = true;
        }
        if field.values.iter().zip(&inside).any(|(v, &ins)| !ins && *v != C64::new(0.0, 0.0)) {
            return None;
        }
        Some(self.indices.iter().map(|&i| field.values[i]).collect())
    }
}

fn is_positive_rep(m: [i64; 3]) -> bool {
    for c in m {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

/// Radial coupling `g(k_j) = 1/|k_j|` for every mode.
pub fn coupling_amplitudes(grid: &Grid, modes: &ModeSet) -> Result<Vec<f64>, GridError> {
    if modes.contains_zero(grid) {
        return Err(GridError::ZeroMode);
    }
    Ok(modes.lattice_indices().iter().map(|&i| 1.0 / grid.k_norm(i)).collect())
}
