//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are rejected. `Display` writes the canonical form, which is what the
//! config hash is computed from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64 as C64;
use polaron_core::electron::{ground_state, EigenOptions, Lattice};
use polaron_core::grid::Grid;
use polaron_core::landau_pekar::{gaussian_field, seeded_field, LpOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Lp,
    Bogoliubov,
    Oracle,
    Sweep,
    Compare,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Lp => "lp",
            RunKind::Bogoliubov => "bogoliubov",
            RunKind::Oracle => "oracle",
            RunKind::Sweep => "sweep",
            RunKind::Compare => "compare",
        }
    }
}

impl FromStr for RunKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "lp" => RunKind::Lp,
            "bogoliubov" => RunKind::Bogoliubov,
            "oracle" => RunKind::Oracle,
            "sweep" => RunKind::Sweep,
            "compare" => RunKind::Compare,
            _ => return Err(format!("unknown run kind `{s}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldFamily {
    /// `A e^{-|k|^2/w^2} e^{i chi}`
    Gaussian { amplitude: f64, width: f64, phase: f64 },
    /// `-c sigma` of a normalized Gaussian trial state of the given width.
    Seeded { c: f64, trial_width: f64 },
}

/// Every documented key with its default; `None` marks keys without a default.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("kind", Some("lp")),
    ("d", Some("1")),
    ("n", Some("64")),
    ("half_length", Some("8")),
    ("cutoff", Some("3")),
    ("alpha", Some("4")),
    ("dt", None),
    ("t_final", Some("0.5")),
    ("t_units", Some("alpha2")),
    ("phi0", Some("gaussian")),
    ("phi0_amplitude", Some("-2")),
    ("phi0_width", Some("1.5")),
    ("phi0_phase", Some("0.5")),
    ("phi0_c", Some("1")),
    ("phi0_trial_width", Some("1")),
    ("phi0_noise", Some("0")),
    ("seed", Some("0")),
    ("min_gap", Some("0.5")),
    ("n_max", Some("4")),
    ("leak_tol", Some("1e-4")),
    ("dim_cap", Some("5000000")),
    ("k_window", None),
    ("fock", Some("false")),
    ("eig_tol", Some("1e-9")),
    ("cg_tol", Some("1e-10")),
    ("gap_floor", None),
    ("tol_norm", Some("1e-8")),
    ("refresh_stride", Some("1")),
    ("record_stride", Some("1")),
    ("sweep_kind", Some("lp")),
    ("output_dir", Some("out")),
    ("tag", Some("run")),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: RunKind,
    pub d: usize,
    pub n: usize,
    pub half_length: f64,
    pub cutoff: f64,
    /// One value for single runs, at least three for sweeps.
    pub alphas: Vec<f64>,
    /// `None` uses the stability limit for the cutoff.
    pub dt: Option<f64>,
    pub t_final: f64,
    /// `t_final` is multiplied by `alpha^2` when set.
    pub t_in_alpha2: bool,
    pub phi0: FieldFamily,
    /// Amplitude of a seeded random perturbation added to every mode of `phi0`.
    pub phi0_noise: f64,
    pub seed: u64,
    pub min_gap: f64,
    pub n_max: usize,
    pub leak_tol: f64,
    pub dim_cap: usize,
    pub k_window: Option<f64>,
    /// Also run the truncated Fock path in `bogoliubov` runs.
    pub fock: bool,
    pub eig_tol: f64,
    pub cg_tol: f64,
    pub gap_floor: Option<f64>,
    pub tol_norm: f64,
    pub refresh_stride: usize,
    pub record_stride: usize,
    pub sweep_kind: RunKind,
    pub output_dir: PathBuf,
    pub tag: String,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

impl RunConfig {
    pub fn from_str_config(text: &str) -> Result<Self, HarnessError> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(HarnessError::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(HarnessError::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        Self::from_map(&map)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str_config(&text)
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self, HarnessError> {
        let get = |k: &str| -> Option<&str> {
            map.get(k).map(String::as_str).or_else(|| KEYS.iter().find(|(n, _)| *n == k).and_then(|(_, d)| *d))
        };
        let req = |k: &str| get(k).ok_or_else(|| HarnessError::Config(format!("missing `{k}`")));
        let opt_f = |k: &str| -> Result<Option<f64>, HarnessError> { get(k).map(|v| parse(k, v)).transpose() };

        let kind: RunKind = req("kind")?.parse().map_err(HarnessError::Config)?;
        let alphas = req("alpha")?
            .split(',')
            .map(|s| parse::<f64>("alpha", s.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        let t_units = req("t_units")?;
        let t_in_alpha2 = match t_units {
            "alpha2" => true,
            "absolute" => false,
            other => return Err(HarnessError::Config(format!("`t_units` must be alpha2 or absolute, got `{other}`"))),
        };
        let phi0 = match req("phi0")? {
            "gaussian" => FieldFamily::Gaussian {
                amplitude: parse("phi0_amplitude", req("phi0_amplitude")?)?,
                width: parse("phi0_width", req("phi0_width")?)?,
                phase: parse("phi0_phase", req("phi0_phase")?)?,
            },
            "seeded" => FieldFamily::Seeded {
                c: parse("phi0_c", req("phi0_c")?)?,
                trial_width: parse("phi0_trial_width", req("phi0_trial_width")?)?,
            },
            other => return Err(HarnessError::Config(format!("unknown phi0 family `{other}`"))),
        };
        let cfg = RunConfig {
            kind,
            d: parse("d", req("d")?)?,
            n: parse("n", req("n")?)?,
            half_length: parse("half_length", req("half_length")?)?,
            cutoff: parse("cutoff", req("cutoff")?)?,
            alphas,
            dt: opt_f("dt")?,
            t_final: parse("t_final", req("t_final")?)?,
            t_in_alpha2,
            phi0,
            phi0_noise: parse("phi0_noise", req("phi0_noise")?)?,
            seed: parse("seed", req("seed")?)?,
            min_gap: parse("min_gap", req("min_gap")?)?,
            n_max: parse("n_max", req("n_max")?)?,
            leak_tol: parse("leak_tol", req("leak_tol")?)?,
            dim_cap: parse("dim_cap", req("dim_cap")?)?,
            k_window: opt_f("k_window")?,
            fock: parse("fock", req("fock")?)?,
            eig_tol: parse("eig_tol", req("eig_tol")?)?,
            cg_tol: parse("cg_tol", req("cg_tol")?)?,
            gap_floor: opt_f("gap_floor")?,
            tol_norm: parse("tol_norm", req("tol_norm")?)?,
            refresh_stride: parse("refresh_stride", req("refresh_stride")?)?,
            record_stride: parse("record_stride", req("record_stride")?)?,
            sweep_kind: req("sweep_kind")?.parse().map_err(HarnessError::Config)?,
            output_dir: PathBuf::from(req("output_dir")?),
            tag: req("tag")?.to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks only; the ground-state assumption on `phi0` is
    /// checked separately by [`RunConfig::check_initial_field`].
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(1..=3).contains(&self.d) {
            return bad(format!("d must be 1, 2 or 3, got {}", self.d));
        }
        if self.n < 4 || self.n % 2 != 0 {
            return bad(format!("n must be even and >= 4, got {}", self.n));
        }
        if !(self.half_length > 0.0 && self.half_length.is_finite()) {
            return bad("half_length must be positive".into());
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a >= 1.0 && a.is_finite())) {
            return bad("every alpha must be finite and >= 1".into());
        }
        if self.kind == RunKind::Sweep {
            if self.sweep_kind == RunKind::Sweep {
                return bad("sweep_kind cannot be sweep".into());
            }
        } else if self.alphas.len() != 1 {
            return bad(format!("kind {} takes a single alpha", self.kind.as_str()));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be finite and >= 0".into());
        }
        let positive = [
            ("eig_tol", Some(self.eig_tol)),
            ("cg_tol", Some(self.cg_tol)),
            ("tol_norm", Some(self.tol_norm)),
            ("leak_tol", Some(self.leak_tol)),
            ("dt", self.dt),
            ("gap_floor", self.gap_floor),
            ("k_window", self.k_window),
            ("min_gap", Some(self.min_gap)),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if self.phi0_noise < 0.0 {
            return bad("phi0_noise must be >= 0".into());
        }
        if self.n_max == 0 || self.refresh_stride == 0 || self.record_stride == 0 {
            return bad("n_max, refresh_stride and record_stride must be >= 1".into());
        }
        if let FieldFamily::Gaussian { width, .. } = self.phi0 {
            if !(width > 0.0) {
                return bad("phi0_width must be positive".into());
            }
        }
        if let FieldFamily::Seeded { trial_width, .. } = self.phi0 {
            if !(trial_width > 0.0) {
                return bad("phi0_trial_width must be positive".into());
            }
        }
        if self.tag.is_empty() || self.tag.contains(['/', '\\']) {
            return bad("tag must be a non-empty file stem".into());
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<Lattice, HarnessError> {
        let grid = Grid::new(self.d, self.n, self.half_length).map_err(|e| HarnessError::Config(e.to_string()))?;
        Lattice::new(grid, self.cutoff).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn initial_field(&self, lat: &Lattice) -> Vec<C64> {
        let mut phi = match self.phi0 {
            FieldFamily::Gaussian { amplitude, width, phase } => gaussian_field(lat, amplitude, width, phase),
            FieldFamily::Seeded { c, trial_width } => {
                let g = &lat.grid;
                let mut psi: Vec<C64> = (0..g.len())
                    .map(|i| {
                        let r2: f64 = g.position(i)[..g.dim()].iter().map(|x| x * x).sum();
                        C64::new((-r2 / (2.0 * trial_width * trial_width)).exp(), 0.0)
                    })
                    .collect();
                let nrm = lat.state_norm_sq(&psi).sqrt();
                psi.iter_mut().for_each(|z| *z /= nrm);
                seeded_field(lat, c, &psi)
            }
        };
        if self.phi0_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for z in phi.iter_mut() {
                *z += C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * self.phi0_noise;
            }
        }
        phi
    }

    /// Rejects `phi0` unless `h_{phi0}` has a negative, gapped ground state.
    pub fn check_initial_field(&self, lat: &Lattice, phi0: &[C64]) -> Result<(f64, f64), HarnessError> {
        let v = lat.potential(phi0);
        let opts = self.eigen_options();
        let gs = ground_state(&lat.grid, &v, &opts, None)
            .map_err(|e| HarnessError::Assumption(format!("ground state of h_phi0 not found: {e}")))?;
        if !(gs.e < 0.0) {
            return Err(HarnessError::Assumption(format!("e(phi0) = {:.6e} is not negative", gs.e)));
        }
        if gs.gap < self.min_gap {
            return Err(HarnessError::Assumption(format!("gap of h_phi0 {:.4} is below min_gap {}", gs.gap, self.min_gap)));
        }
        Ok((gs.e, gs.gap))
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions { eig_tol: self.eig_tol, ..EigenOptions::default() }
    }

    pub fn lp_options(&self) -> LpOptions {
        let mut o = LpOptions::for_cutoff(self.cutoff);
        if let Some(dt) = self.dt {
            o.dt = dt;
        }
        o.eig = self.eigen_options();
        o.tol_norm = self.tol_norm;
        o.gap_floor = self.gap_floor;
        o.refresh_stride = self.refresh_stride;
        o.record_stride = self.record_stride;
        o
    }

    pub fn t_final_for(&self, alpha: f64) -> f64 {
        if self.t_in_alpha2 {
            self.t_final * alpha * alpha
        } else {
            self.t_final
        }
    }

    /// Single-alpha copy of a sweep config running `sweep_kind`.
    pub fn member(&self, alpha: f64) -> RunConfig {
        let mut c = self.clone();
        c.kind = self.sweep_kind;
        c.alphas = vec![alpha];
        c.tag = format!("{}_alpha{}", self.tag, alpha);
        c
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lines: Vec<(String, String)> = vec![
            ("kind".into(), self.kind.as_str().into()),
            ("d".into(), self.d.to_string()),
            ("n".into(), self.n.to_string()),
            ("half_length".into(), fmt_f(self.half_length)),
            ("cutoff".into(), fmt_f(self.cutoff)),
            ("alpha".into(), self.alphas.iter().map(|a| fmt_f(*a)).collect::<Vec<_>>().join(",")),
            ("t_final".into(), fmt_f(self.t_final)),
            ("t_units".into(), if self.t_in_alpha2 { "alpha2" } else { "absolute" }.into()),
            ("phi0_noise".into(), fmt_f(self.phi0_noise)),
            ("seed".into(), self.seed.to_string()),
            ("min_gap".into(), fmt_f(self.min_gap)),
            ("n_max".into(), self.n_max.to_string()),
            ("leak_tol".into(), fmt_f(self.leak_tol)),
            ("dim_cap".into(), self.dim_cap.to_string()),
            ("fock".into(), self.fock.to_string()),
            ("eig_tol".into(), fmt_f(self.eig_tol)),
            ("cg_tol".into(), fmt_f(self.cg_tol)),
            ("tol_norm".into(), fmt_f(self.tol_norm)),
            ("refresh_stride".into(), self.refresh_stride.to_string()),
            ("record_stride".into(), self.record_stride.to_string()),
            ("sweep_kind".into(), self.sweep_kind.as_str().into()),
            ("output_dir".into(), self.output_dir.display().to_string()),
            ("tag".into(), self.tag.clone()),
        ];
        match self.phi0 {
            FieldFamily::Gaussian { amplitude, width, phase } => {
                lines.push(("phi0".into(), "gaussian".into()));
                lines.push(("phi0_amplitude".into(), fmt_f(amplitude)));
                lines.push(("phi0_width".into(), fmt_f(width)));
                lines.push(("phi0_phase".into(), fmt_f(phase)));
            }
            FieldFamily::Seeded { c, trial_width } => {
                lines.push(("phi0".into(), "seeded".into()));
                lines.push(("phi0_c".into(), fmt_f(c)));
                lines.push(("phi0_trial_width".into(), fmt_f(trial_width)));
            }
        }
        for (k, v) in [("dt", self.dt), ("k_window", self.k_window), ("gap_floor", self.gap_floor)] {
            if let Some(v) = v {
                lines.push((k.into(), fmt_f(v)));
            }
        }
        lines.sort();
        for (k, v) in lines {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
