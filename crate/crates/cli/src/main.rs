use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polaron_cli::output::{write_text, Table};
use polaron_cli::plot::time_series_svg;
use polaron_cli::{execute, workers_from_env, HarnessError, RunConfig, RunKind};

/// Landau-Pekar, Bogoliubov and exact-oracle runs on a periodic box.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single config (kind lp, bogoliubov, oracle or compare).
    Run { config: PathBuf },
    /// Run an alpha sweep and fit log-log slopes.
    Sweep { config: PathBuf },
    /// Corrected vs uncorrected product approximation against the oracle.
    Compare { config: PathBuf },
    /// Plot columns of a time-series table.
    Plot {
        table: PathBuf,
        #[arg(long, default_value = "t")]
        x: String,
        /// Comma-separated column names; all but `x` when omitted.
        #[arg(long)]
        columns: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a config, check the initial field and print the canonical form.
    ValidateConfig { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match dispatch(Cli::parse().cmd) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn load(path: &PathBuf, kind: Option<RunKind>) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(k) = kind {
        if k == RunKind::Sweep && cfg.kind != RunKind::Sweep {
            return Err(HarnessError::Config(format!("`sweep` needs kind = sweep, config has {}", cfg.kind.as_str())));
        }
        cfg.kind = k;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn dispatch(cmd: Cmd) -> Result<i32, HarnessError> {
    match cmd {
        Cmd::Run { config } => {
            let cfg = load(&config, None)?;
            execute(&cfg, workers_from_env()?)
        }
        Cmd::Sweep { config } => execute(&load(&config, Some(RunKind::Sweep))?, workers_from_env()?),
        Cmd::Compare { config } => execute(&load(&config, Some(RunKind::Compare))?, workers_from_env()?),
        Cmd::Plot { table, x, columns, out } => {
            let (t, _) = Table::from_tsv(&std::fs::read_to_string(&table)?)?;
            let cols: Vec<String> = match columns {
                Some(c) => c.split(',').map(|s| s.trim().to_string()).collect(),
                None => t.columns.iter().filter(|c| **c != x).cloned().collect(),
            };
            let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            let svg = time_series_svg(&t, &x, &refs)?;
            write_text(&out.unwrap_or_else(|| table.with_extension("svg")), &svg)?;
            Ok(0)
        }
        Cmd::ValidateConfig { config } => {
            let cfg = RunConfig::from_path(&config)?;
            let lat = cfg.lattice()?;
            let phi0 = cfg.initial_field(&lat);
            let (e0, gap0) = cfg.check_initial_field(&lat, &phi0)?;
            print!("{cfg}");
            println!("# hash = {}", cfg.hash());
            println!("# modes = {}, e(phi0) = {e0:.6}, gap = {gap0:.6}", lat.n_modes());
            Ok(0)
        }
    }
}
