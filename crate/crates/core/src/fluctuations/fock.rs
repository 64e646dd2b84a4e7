//! Occupation-number basis over `M` modes truncated at total occupation
//! `n_max`, with the quadratic generator as an exactly Hermitian sparse matrix.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64 as C64;

use super::GeneratorBlocks;
use crate::krylov::{expm_apply, HermitianOp, KrylovError, KrylovOptions};

#[derive(Clone, Debug)]
pub struct FockSpace {
    modes: usize,
    n_max: usize,
    states: Vec<Vec<u8>>,
    /// `lower[m][i] = Some((j, sqrt(n_m)))` with `B_m |i> = sqrt(n_m) |j>`.
    lower: Vec<Vec<Option<(usize, f64)>>>,
    raise: Vec<Vec<Option<(usize, f64)>>>,
    total: Vec<usize>,
}

fn enumerate(modes: usize, budget: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() == modes {
        out.push(prefix.clone());
        return;
    }
    for n in 0..=budget {
        prefix.push(n as u8);
        enumerate(modes, budget - n, prefix, out);
        prefix.pop();
    }
}

impl FockSpace {
    pub fn new(modes: usize, n_max: usize) -> Self {
        assert!(n_max < 256, "occupations are stored as u8");
        let mut states = Vec::new();
        enumerate(modes, n_max, &mut Vec::with_capacity(modes), &mut states);
        let total: Vec<usize> = states.iter().map(|s| s.iter().map(|&n| n as usize).sum()).collect();
        let mut order: Vec<usize> = (0..states.len()).collect();
        // shells in increasing total occupation, lexicographic inside a shell
        order.sort_by(|&a, &b| total[a].cmp(&total[b]).then(states[b].cmp(&states[a])));
        let states: Vec<Vec<u8>> = order.iter().map(|&i| states[i].clone()).collect();
        let total: Vec<usize> = order.iter().map(|&i| total[i]).collect();
        let index: HashMap<Vec<u8>, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut lower = vec![vec![None; states.len()]; modes];
        let mut raise = vec![vec![None; states.len()]; modes];
        for (i, s) in states.iter().enumerate() {
            for m in 0..modes {
                if s[m] > 0 {
                    let mut t = s.clone();
                    t[m] -= 1;
                    lower[m][i] = Some((index[&t], (s[m] as f64).sqrt()));
                }
                if total[i] < n_max {
                    let mut t = s.clone();
                    t[m] += 1;
                    raise[m][i] = Some((index[&t], (s[m] as f64 + 1.0).sqrt()));
                }
            }
        }
        Self { modes, n_max, states, lower, raise, total }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn occupations(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn total(&self, i: usize) -> usize {
        self.total[i]
    }

    pub fn vacuum(&self) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.dim()];
        v[0] = C64::new(1.0, 0.0);
        v
    }

    pub fn lower_entry(&self, m: usize, i: usize) -> Option<(usize, f64)> {
        self.lower[m][i]
    }

    pub fn raise_entry(&self, m: usize, i: usize) -> Option<(usize, f64)> {
        self.raise[m][i]
    }

    /// `B_m x` (in the truncated space).
    pub fn apply_lower(&self, m: usize, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim()];
        for (i, e) in self.lower[m].iter().enumerate() {
            if let Some((j, c)) = e {
                y[*j] += x[i] * c;
            }
        }
        y
    }

    /// `B*_m x`, dropping anything pushed past `n_max`.
    pub fn apply_raise(&self, m: usize, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim()];
        for (i, e) in self.raise[m].iter().enumerate() {
            if let Some((j, c)) = e {
                y[*j] += x[i] * c;
            }
        }
        y
    }

    /// Weight in the top shell `sum n = n_max`.
    pub fn leakage(&self, x: &[C64]) -> f64 {
        x.iter().zip(&self.total).filter(|(_, &t)| t == self.n_max).map(|(z, _)| z.norm_sqr()).sum()
    }

    /// `sum_m <x, B*_m B_m x>`.
    pub fn number_expectation(&self, x: &[C64]) -> f64 {
        x.iter().zip(&self.total).map(|(z, &t)| z.norm_sqr() * t as f64).sum()
    }

    /// `<x, B*_a B_b x>` for all `a, b`.
    pub fn occupation_matrix(&self, x: &[C64]) -> nalgebra::DMatrix<C64> {
        let lowered: Vec<Vec<C64>> = (0..self.modes).map(|m| self.apply_lower(m, x)).collect();
        nalgebra::DMatrix::from_fn(self.modes, self.modes, |a, b| crate::grid::dot(&lowered[a], &lowered[b]))
    }

    /// `z exp(1/2 sum Z_ab B*_a B*_b) Omega` truncated at `n_max`.
    pub fn gaussian_state(&self, z: C64, zmat: &nalgebra::DMatrix<C64>) -> Vec<C64> {
        let mut term = self.vacuum();
        let mut out = term.clone();
        for k in 1..=self.n_max / 2 {
            let mut next = vec![C64::new(0.0, 0.0); self.dim()];
            for a in 0..self.modes {
                for b in 0..self.modes {
                    let c = zmat[(a, b)] * 0.5;
                    if c == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let t = self.apply_raise(a, &self.apply_raise(b, &term));
                    crate::grid::axpy(c, &t, &mut next);
                }
            }
            term = next.iter().map(|x| x / k as f64).collect();
            crate::grid::axpy(C64::new(1.0, 0.0), &term, &mut out);
        }
        out.iter().map(|x| x * z).collect()
    }
}

/// Sparse Hermitian matrix in row-compressed form.
#[derive(Clone, Debug)]
pub struct SparseHermitian {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseHermitian {
    /// Builds from lower-triangle-or-diagonal contributions; the upper
    /// triangle is the conjugate mirror and the diagonal is made real, so
    /// Hermiticity holds exactly.
    pub fn from_lower(dim: usize, lower: BTreeMap<(usize, usize), C64>) -> Self {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
        for (&(r, c), &v) in &lower {
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            if r == c {
                rows[r].push((c, C64::new(v.re, 0.0)));
            } else {
                rows[r].push((c, v));
                rows[c].push((r, v.conj()));
            }
        }
        let mut row_start = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            row_start.push(cols.len());
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
        }
        row_start.push(cols.len());
        Self { dim, row_start, cols, vals }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (a, b) = (self.row_start[r], self.row_start[r + 1]);
        match self.cols[a..b].binary_search(&c) {
            Ok(k) => self.vals[a + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for k in self.row_start[r]..self.row_start[r + 1] {
                m[(r, self.cols[k])] = self.vals[k];
            }
        }
        m
    }
}

impl HermitianOp for SparseHermitian {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }
}

/// `alpha^{-2} [B* P B + (B* Q B* + h.c.) - c0]` on the truncated space.
pub fn fock_generator(space: &FockSpace, blocks: &GeneratorBlocks, alpha: f64) -> SparseHermitian {
    let m = space.modes();
    let s = 1.0 / (alpha * alpha);
    let mut lower: BTreeMap<(usize, usize), C64> = BTreeMap::new();
    for i in 0..space.dim() {
        *lower.entry((i, i)).or_default() += C64::new(-blocks.constant * s, 0.0);
        for b in 0..m {
            let Some((j, cb)) = space.lower_entry(b, i) else { continue };
            for a in 0..m {
                let Some((k, ca)) = space.raise_entry(a, j) else { continue };
                // B*_a B_b maps i -> k; keep entries with k >= i
                if k >= i {
                    *lower.entry((k, i)).or_default() += blocks.p[(a, b)] * (ca * cb * s);
                }
            }
        }
        for b in 0..m {
            let Some((j, cb)) = space.raise_entry(b, i) else { continue };
            for a in 0..m {
                let Some((k, ca)) = space.raise_entry(a, j) else { continue };
                // pair creation raises the shell, so k > i: lower triangle
                *lower.entry((k, i)).or_default() += blocks.q[(a, b)] * (ca * cb * s);
            }
        }
    }
    SparseHermitian::from_lower(space.dim(), lower)
}

#[derive(Clone, Debug)]
pub struct FockStepReport {
    pub leakage: f64,
    /// Set when `leakage` exceeds the tolerance; the vector is then untrusted.
    pub flagged: bool,
    pub substeps: usize,
}

/// `exp(-i G dt) x` by Krylov propagation, with the top-shell weight recorded.
pub fn fock_step(
    space: &FockSpace,
    gen: &SparseHermitian,
    x: &[C64],
    dt: f64,
    leak_tol: f64,
    opts: &KrylovOptions,
) -> Result<(Vec<C64>, FockStepReport), KrylovError> {
    let (y, rep) = expm_apply(gen, x, dt, opts)?;
    let leakage = space.leakage(&y);
    Ok((y, FockStepReport { leakage, flagged: leakage > leak_tol, substeps: rep.substeps }))
}
