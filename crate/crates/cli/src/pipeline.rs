//! Run kinds, sweeps and the artifact files they leave behind.
//!
//! Each run writes `<tag>.tsv`, `<tag>.summary.json`, `<tag>.ckpt` and
//! `<tag>.svg` under `output_dir`. A sweep additionally writes
//! `<tag>_sweep.tsv`, `<tag>_sweep.json` and `<tag>_scaling.svg`.

use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64 as C64;
use polaron_core::electron::{ElectronError, Lattice, ResolventOptions};
use polaron_core::fluctuations::fock::{fock_generator, fock_step, FockSpace};
use polaron_core::fluctuations::{
    assemble_kernel, bogoliubov_step, moments, quadratic_generator, remark_lower_bound, BogoliubovState,
    FluctuationError, KernelF,
};
use polaron_core::landau_pekar::{evolve, lp_step, LpError, LpRecord, PekarState};
use polaron_core::oracle::{run_fluctuation_frame, OracleError, OracleOptions};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, RunKind};
use crate::fit::{fit_loglog, SlopeFit};
use crate::output::{write_json, write_text, Checkpoint, Table, Trajectory, CODE_VERSION};
use crate::plot::{scaling_svg, time_series_svg};
use crate::HarnessError;

/// Outcome of a run that got past validation. Exit codes are stable:
/// 0 success, 1 failure, 2 gap abort, 3 leakage flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    LeakageFlag,
    GapAbort,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Failed => 1,
            Status::GapAbort => 2,
            Status::LeakageFlag => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub status: Status,
    pub message: Option<String>,
    pub summary: serde_json::Value,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub members: Vec<RunOutcome>,
    /// One row per alpha.
    pub table: Table,
    pub fits: Vec<SlopeFit>,
    pub status: Status,
}

fn lp_status(e: &LpError) -> Status {
    match e {
        LpError::Electron(ElectronError::GapCollapse { .. }) => Status::GapAbort,
        _ => Status::Failed,
    }
}

fn fluct_status(e: &FluctuationError) -> Status {
    match e {
        FluctuationError::Electron(ElectronError::GapCollapse { .. }) | FluctuationError::Gap { .. } => Status::GapAbort,
        _ => Status::Failed,
    }
}

fn oracle_status(e: &OracleError) -> Status {
    match e {
        OracleError::Leakage { .. } => Status::LeakageFlag,
        OracleError::Lp(l) => lp_status(l),
        OracleError::Fluctuation(f) => fluct_status(f),
        _ => Status::Failed,
    }
}

fn binomial_saturating(n: u128, k: u128) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// `C(M + n_max, n_max) N^d`, the oracle vector length.
pub fn oracle_dimension(cfg: &RunConfig, lat: &Lattice) -> u128 {
    binomial_saturating((lat.n_modes() + cfg.n_max) as u128, cfg.n_max as u128)
        .saturating_mul(lat.grid.len() as u128)
}

struct Prepared {
    lat: Lattice,
    phi0: Vec<C64>,
    e0: f64,
    gap0: f64,
    alpha: f64,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let lat = cfg.lattice()?;
    if matches!(cfg.kind, RunKind::Oracle | RunKind::Compare) {
        let dim = oracle_dimension(cfg, &lat);
        if dim > cfg.dim_cap as u128 {
            return Err(HarnessError::Config(format!("oracle dimension {dim} exceeds dim_cap {}", cfg.dim_cap)));
        }
    }
    let phi0 = cfg.initial_field(&lat);
    let (e0, gap0) = cfg.check_initial_field(&lat, &phi0)?;
    Ok(Prepared { lat, phi0, e0, gap0, alpha: cfg.alphas[0] })
}

fn checkpoint(cfg: &RunConfig, s: &PekarState) -> Checkpoint {
    Checkpoint {
        d: cfg.d as u32,
        n: cfg.n as u32,
        half_length: cfg.half_length,
        cutoff: cfg.cutoff,
        alpha: s.alpha,
        t: s.t,
        theta_e: s.theta_e,
        theta_omega: s.theta_omega,
        psi: s.psi.clone(),
        phi: s.phi.clone(),
    }
}

const LP_COLUMNS: [&str; 9] = ["t", "norm", "energy", "e", "gap", "omega", "theta_e", "theta_omega", "adiabatic_error"];

fn lp_row(r: &LpRecord) -> Vec<f64> {
    vec![r.t, r.norm, r.energy, r.e, r.gap, r.omega, r.theta_e, r.theta_omega, r.adiabatic_error]
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().filter(|x| x.is_finite()).fold(0.0, |m, x| m.max(x.abs()))
}

struct Core {
    table: Table,
    status: Status,
    message: Option<String>,
    summary: serde_json::Value,
    state: PekarState,
}

fn run_lp(cfg: &RunConfig, p: &Prepared) -> Result<Core, HarnessError> {
    let opts = cfg.lp_options();
    let mut state = PekarState::new(&p.lat, p.alpha, p.phi0.clone(), &opts.eig).map_err(|e| HarnessError::Assumption(e.to_string()))?;
    let energy0 = state.energy(&p.lat);
    let ev = evolve(&p.lat, &mut state, cfg.t_final_for(p.alpha), &opts, |_, _| {});
    let mut table = Table::new(&LP_COLUMNS);
    ev.records.iter().for_each(|r| table.push(lp_row(r)));
    let norm_drift = max_abs(&table.column("norm").unwrap().iter().map(|n| n - 1.0).collect::<Vec<_>>());
    let energy_drift = max_abs(&table.column("energy").unwrap().iter().map(|e| (e - energy0) / energy0).collect::<Vec<_>>());
    let gaps = table.column("gap").unwrap();
    let min_gap = gaps.iter().copied().filter(|g| g.is_finite()).fold(f64::INFINITY, f64::min);
    let summary = json!({
        "max_norm_drift": norm_drift,
        "max_relative_energy_drift": energy_drift,
        "max_adiabatic_error": max_abs(&table.column("adiabatic_error").unwrap()),
        "min_gap": min_gap,
        "min_gap_ratio": min_gap / p.gap0,
        "dt": opts.dt,
    });
    let (status, message) = match &ev.error {
        None => (Status::Success, None),
        Some(e) => (lp_status(e), Some(e.to_string())),
    };
    Ok(Core { table, status, message, summary, state })
}

fn run_bogoliubov(cfg: &RunConfig, p: &Prepared) -> Result<Core, HarnessError> {
    let mut opts = cfg.lp_options();
    opts.refresh_stride = 1;
    let lat = &p.lat;
    let alpha = p.alpha;
    let mut state = PekarState::new(lat, alpha, p.phi0.clone(), &opts.eig).map_err(|e| HarnessError::Assumption(e.to_string()))?;
    let ropts = ResolventOptions { cg_tol: cfg.cg_tol, ..ResolventOptions::default() };
    let pairs = lat.modes.pairs().to_vec();
    let dk_vol = lat.grid.k_cell_volume();
    let m = lat.n_modes();
    let fock_space = cfg.fock.then(|| FockSpace::new(m, cfg.n_max));
    let mut fock_vec = fock_space.as_ref().map(|s| s.vacuum());
    let mut gauss = BogoliubovState::vacuum(m);
    let mut cols: Vec<&str> = LP_COLUMNS.to_vec();
    cols.extend(["n_expect", "vacuum_distance", "invariant_drift", "trace_term", "fock_n", "fock_overlap", "fock_leakage"]);
    let mut table = Table::new(&cols);
    let t_final = cfg.t_final_for(alpha);
    let steps = if t_final == 0.0 { 0 } else { (t_final / opts.dt).ceil() as usize };
    let dt = if steps == 0 { 0.0 } else { t_final / steps as f64 };

    let mut kernel = match assemble_kernel(lat, &state.gs, &ropts, opts.gap_floor) {
        Ok(k) => k,
        Err(e) => return Err(HarnessError::Assumption(e.to_string())),
    };
    let c0 = kernel.trace_term;
    let mut flagged = false;
    let mut vac_series = Vec::new();
    let push = |table: &mut Table, state: &PekarState, gauss: &BogoliubovState, kernel: &KernelF, fv: Option<&Vec<C64>>| {
        let mut row = lp_row(&LpRecord::capture(lat, state));
        let mo = moments(gauss, alpha);
        let (fn_, fo, fl) = match (fock_space.as_ref(), fv) {
            (Some(s), Some(v)) => (s.number_expectation(v) / (alpha * alpha), v[0].norm(), s.leakage(v)),
            _ => (f64::NAN, f64::NAN, f64::NAN),
        };
        row.extend([mo.n_expect, mo.vacuum_distance(), gauss.invariant_drift(), kernel.trace_term, fn_, fo, fl]);
        table.push(row);
        (state.t, mo.vacuum_distance())
    };
    vac_series.push(push(&mut table, &state, &gauss, &kernel, fock_vec.as_ref()));
    let mut status = Status::Success;
    let mut message = None;
    for n in 1..=steps {
        let step = (|| -> Result<(), (Status, String)> {
            lp_step(lat, &mut state, dt, &opts).map_err(|e| (lp_status(&e), e.to_string()))?;
            state.sync(lat, &opts).map_err(|e| (lp_status(&e), e.to_string()))?;
            let mut k1 = assemble_kernel(lat, &state.gs, &ropts, opts.gap_floor).map_err(|e| (fluct_status(&e), e.to_string()))?;
            k1.t = state.t;
            let blocks = quadratic_generator(&KernelF::midpoint(&kernel, &k1), &pairs, dk_vol)
                .map_err(|e| (Status::Failed, e.to_string()))?;
            gauss = bogoliubov_step(&gauss, &blocks, alpha, dt).map_err(|e| (fluct_status(&e), e.to_string()))?;
            if let (Some(s), Some(v)) = (fock_space.as_ref(), fock_vec.as_mut()) {
                let gen = fock_generator(s, &blocks, alpha);
                let (next, rep) = fock_step(s, &gen, v, dt, cfg.leak_tol, &Default::default())
                    .map_err(|e| (Status::Failed, e.to_string()))?;
                flagged |= rep.flagged;
                *v = next;
            }
            kernel = k1;
            Ok(())
        })();
        if let Err((s, m)) = step {
            status = s;
            message = Some(m);
            break;
        }
        if n % cfg.record_stride == 0 || n == steps {
            vac_series.push(push(&mut table, &state, &gauss, &kernel, fock_vec.as_ref()));
        }
    }
    if status == Status::Success && flagged {
        status = Status::LeakageFlag;
        message = Some(format!("Fock leakage exceeded leak_tol {}", cfg.leak_tol));
    }
    let delta = cfg.t_final_for(alpha) / (alpha * alpha);
    let remark = remark_lower_bound(&vac_series, alpha, c0, delta, 0.5);
    let summary = json!({
        "c0": c0,
        "final_vacuum_distance": vac_series.last().map(|v| v.1),
        "remark_margin": 0.5,
        "remark_holds": remark.holds,
        "max_invariant_drift": max_abs(&table.column("invariant_drift").unwrap()),
        "max_fock_leakage": max_abs(&table.column("fock_leakage").unwrap()),
        "dt": dt,
    });
    Ok(Core { table, status, message, summary, state })
}

const ORACLE_COLUMNS: [&str; 17] = [
    "t",
    "corrected",
    "uncorrected",
    "gamma_el_distance",
    "gamma_ph_distance",
    "displaced_number",
    "n_leq",
    "n_gt",
    "xi_norm",
    "xi_leakage",
    "fock_leakage",
    "vacuum_distance",
    "gaussian_n_diff",
    "gaussian_overlap_diff",
    "gap",
    "c0",
    "lower_bound",
];

fn run_oracle(cfg: &RunConfig, p: &Prepared) -> Result<Core, HarnessError> {
    let lp_opts = cfg.lp_options();
    let mut state = PekarState::new(&p.lat, p.alpha, p.phi0.clone(), &lp_opts.eig).map_err(|e| HarnessError::Assumption(e.to_string()))?;
    let oopts = OracleOptions {
        n_max: cfg.n_max,
        leak_tol: cfg.leak_tol,
        dim_cap: cfg.dim_cap,
        k_window: cfg.k_window.unwrap_or(0.5 * cfg.cutoff),
        resolvent: ResolventOptions { cg_tol: cfg.cg_tol.min(1e-12), ..ResolventOptions::default() },
        ..OracleOptions::default()
    };
    let run = run_fluctuation_frame(&p.lat, &mut state, cfg.t_final_for(p.alpha), &lp_opts, &oopts, cfg.record_stride);
    let a2 = p.alpha * p.alpha;
    // c0 tau - C tau^2 fitted to the departure of Y_t from the vacuum
    let (num, den) = run.records.iter().fold((0.0, 0.0), |(n, d), r| {
        let tau = r.t / a2;
        (n + tau * tau * (run.c0 * tau - r.vacuum_distance), d + tau.powi(4))
    });
    let c_fit = if den > 0.0 { num / den } else { 0.0 };
    let mut table = Table::new(&ORACLE_COLUMNS);
    for r in &run.records {
        let tau = r.t / a2;
        table.push(vec![
            r.t,
            r.corrected,
            r.uncorrected,
            r.gamma_el_distance,
            r.gamma_ph_distance,
            r.displaced_number,
            r.windows.n_leq,
            r.windows.n_gt,
            r.xi_norm,
            r.xi_leakage,
            r.fock_leakage,
            r.vacuum_distance,
            r.gaussian_n_diff,
            r.gaussian_overlap_diff,
            r.gap,
            r.c0,
            run.c0 * tau - c_fit * tau * tau,
        ]);
    }
    let last = run.records.last();
    let flags = run.records.iter().filter(|r| r.t > 0.0 && r.uncorrected >= run.c0 * r.t / a2 - c_fit * (r.t / a2).powi(2)).count();
    let summary = json!({
        "c0": run.c0,
        "c_fit": c_fit,
        "final_corrected": last.map(|r| r.corrected),
        "final_uncorrected": last.map(|r| r.uncorrected),
        "final_ratio": last.map(|r| r.uncorrected / r.corrected),
        "final_gamma_el_distance": last.map(|r| r.gamma_el_distance),
        "final_gamma_ph_distance": last.map(|r| r.gamma_ph_distance),
        "final_displaced_number": last.map(|r| r.displaced_number),
        "records_above_lower_bound": flags,
        "max_xi_leakage": max_abs(&table.column("xi_leakage").unwrap()),
        "max_norm_drift": max_abs(&table.column("xi_norm").unwrap().iter().map(|n| n - 1.0).collect::<Vec<_>>()),
    });
    let (status, message) = match &run.error {
        None => (Status::Success, None),
        Some(e) => (oracle_status(e), Some(e.to_string())),
    };
    Ok(Core { table, status, message, summary, state })
}

/// Runs a single-alpha config without writing anything.
pub fn run_single(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let start = Instant::now();
    let p = prepare(cfg)?;
    let core = match cfg.kind {
        RunKind::Lp => run_lp(cfg, &p)?,
        RunKind::Bogoliubov => run_bogoliubov(cfg, &p)?,
        RunKind::Oracle | RunKind::Compare => run_oracle(cfg, &p)?,
        RunKind::Sweep => return Err(HarnessError::Config("use sweep_alpha for kind = sweep".into())),
    };
    let hash = cfg.hash();
    let mut summary = json!({
        "kind": cfg.kind.as_str(),
        "alpha": p.alpha,
        "config_hash": hash,
        "code_version": CODE_VERSION,
        "status": core.status,
        "exit_code": core.status.exit_code(),
        "message": core.message,
        "e0": p.e0,
        "gap0": p.gap0,
        "records": core.table.rows.len(),
        "wall_seconds": start.elapsed().as_secs_f64(),
    });
    if let (Some(dst), serde_json::Value::Object(src)) = (summary.as_object_mut(), core.summary) {
        dst.extend(src);
    }
    Ok(RunOutcome {
        trajectory: Trajectory {
            kind: cfg.kind.as_str().into(),
            alpha: p.alpha,
            config_hash: hash,
            code_version: CODE_VERSION.into(),
            wall_seconds: start.elapsed().as_secs_f64(),
            table: core.table,
        },
        status: core.status,
        message: core.message,
        summary,
        checkpoint: checkpoint(cfg, &core.state),
    })
}

fn plot_columns(kind: &str) -> &'static [&'static str] {
    match kind {
        "lp" => &["energy", "gap", "adiabatic_error"],
        "bogoliubov" => &["gap", "n_expect", "vacuum_distance"],
        _ => &["corrected", "uncorrected", "lower_bound", "gamma_el_distance", "displaced_number"],
    }
}

fn path(cfg: &RunConfig, suffix: &str) -> PathBuf {
    cfg.output_dir.join(format!("{}{suffix}", cfg.tag))
}

pub fn write_run(cfg: &RunConfig, out: &RunOutcome) -> Result<Vec<PathBuf>, HarnessError> {
    let t = &out.trajectory;
    let files = vec![path(cfg, ".tsv"), path(cfg, ".summary.json"), path(cfg, ".ckpt"), path(cfg, ".svg")];
    write_text(&files[0], &t.table.to_tsv(&t.config_hash))?;
    write_json(&files[1], &out.summary)?;
    out.checkpoint.write(&files[2])?;
    match time_series_svg(&t.table, "t", plot_columns(&t.kind)) {
        Ok(svg) => write_text(&files[3], &svg)?,
        Err(HarnessError::EmptyData) => return Ok(files[..3].to_vec()),
        Err(e) => return Err(e),
    }
    Ok(files)
}

/// Diagnostics of one member at the end of its run, used as sweep columns.
fn diagnostics(kind: RunKind, out: &RunOutcome) -> Vec<(&'static str, f64)> {
    let t = &out.trajectory.table;
    let last = |c: &str| t.column(c).and_then(|v| v.last().copied()).unwrap_or(f64::NAN);
    let maxc = |c: &str| t.column(c).map(|v| max_abs(&v)).unwrap_or(f64::NAN);
    match kind {
        RunKind::Lp => vec![
            ("max_adiabatic_error", maxc("adiabatic_error")),
            ("final_norm", last("norm")),
            ("min_gap_ratio", out.summary["min_gap_ratio"].as_f64().unwrap_or(f64::NAN)),
            ("max_relative_energy_drift", out.summary["max_relative_energy_drift"].as_f64().unwrap_or(f64::NAN)),
        ],
        RunKind::Bogoliubov => vec![("final_n_expect", last("n_expect")), ("final_vacuum_distance", last("vacuum_distance"))],
        _ => vec![
            ("corrected", last("corrected")),
            ("uncorrected", last("uncorrected")),
            ("gamma_el_distance", last("gamma_el_distance")),
            ("gamma_ph_distance", last("gamma_ph_distance")),
            ("displaced_number", last("displaced_number")),
        ],
    }
}

/// Runs every alpha on a pool of `workers` threads; results are assembled in
/// alpha order, so the table does not depend on scheduling.
pub fn sweep_alpha(cfg: &RunConfig, workers: usize) -> Result<SweepOutcome, HarnessError> {
    cfg.validate()?;
    if cfg.kind != RunKind::Sweep {
        return Err(HarnessError::Config("sweep_alpha needs kind = sweep".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let members: Vec<RunConfig> = cfg.alphas.iter().map(|&a| cfg.member(a)).collect();
    let results: Vec<Result<RunOutcome, HarnessError>> = pool.install(|| members.par_iter().map(run_single).collect());
    let members_out: Vec<RunOutcome> = results.into_iter().collect::<Result<_, _>>()?;
    let diags: Vec<Vec<(&str, f64)>> = members_out.iter().map(|o| diagnostics(cfg.sweep_kind, o)).collect();
    let mut cols = vec!["alpha"];
    cols.extend(diags[0].iter().map(|d| d.0));
    let mut table = Table::new(&cols);
    for (a, d) in cfg.alphas.iter().zip(&diags) {
        let mut row = vec![*a];
        row.extend(d.iter().map(|x| x.1));
        table.push(row);
    }
    let fits = cols[1..]
        .iter()
        .filter_map(|c| fit_loglog(c, &cfg.alphas, &table.column(c).unwrap()))
        .collect();
    let status = members_out.iter().map(|o| o.status).max().unwrap_or(Status::Success);
    Ok(SweepOutcome { members: members_out, table, fits, status })
}

pub fn write_sweep(cfg: &RunConfig, out: &SweepOutcome) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for (a, m) in cfg.alphas.iter().zip(&out.members) {
        files.extend(write_run(&cfg.member(*a), m)?);
    }
    let tsv = path(cfg, "_sweep.tsv");
    write_text(&tsv, &out.table.to_tsv(&cfg.hash()))?;
    let json_path = path(cfg, "_sweep.json");
    write_json(
        &json_path,
        &json!({
            "config_hash": cfg.hash(),
            "code_version": CODE_VERSION,
            "sweep_kind": cfg.sweep_kind.as_str(),
            "status": out.status,
            "exit_code": out.status.exit_code(),
            "fits": out.fits,
        }),
    )?;
    files.extend([tsv, json_path]);
    if !out.fits.is_empty() {
        let svg = path(cfg, "_scaling.svg");
        write_text(&svg, &scaling_svg(&out.fits)?)?;
        files.push(svg);
    }
    Ok(files)
}

/// Runs whatever `cfg.kind` asks for and writes its artifacts. Returns the
/// process exit code.
pub fn execute(cfg: &RunConfig, workers: usize) -> Result<i32, HarnessError> {
    if cfg.kind == RunKind::Sweep {
        let out = sweep_alpha(cfg, workers)?;
        write_sweep(cfg, &out)?;
        for f in &out.fits {
            log::info!("{}: slope {:.4} (max residual {:.2e})", f.name, f.slope, f.max_abs_residual());
        }
        Ok(out.status.exit_code())
    } else {
        let out = run_single(cfg)?;
        write_run(cfg, &out)?;
        if let Some(m) = &out.message {
            log::warn!("{m}");
        }
        Ok(out.status.exit_code())
    }
}
