use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_LP: &str = "kind = lp
d = 1
n = 32
half_length = 6
cutoff = 2
alpha = 2
t_final = 0.2
t_units = alpha2
phi0_amplitude = -2
phi0_width = 1.5
record_stride = 5
";

const SMALL_ORACLE: &str = "kind = compare
d = 1
n = 8
half_length = 4.5
cutoff = 0.8377
alpha = 2
t_final = 0.05
phi0_amplitude = -1.5
phi0_width = 0.8
dt = 0.01
n_max = 4
leak_tol = 1e-1
record_stride = 1
";

fn write_config(dir: &Path, name: &str, body: &str, extra: &str) -> PathBuf {
    let p = dir.join(format!("{name}.conf"));
    let text = format!("{body}{extra}output_dir = {}\ntag = {name}\n", dir.display());
    std::fs::write(&p, text).unwrap();
    p
}

fn polaron(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polaron")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lp_run_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "lp", SMALL_LP, "");
    let o = polaron(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for ext in ["tsv", "summary.json", "ckpt", "svg"] {
        assert!(dir.path().join(format!("lp.{ext}")).exists(), "missing lp.{ext}");
    }
    let tsv = std::fs::read_to_string(dir.path().join("lp.tsv")).unwrap();
    assert!(tsv.starts_with("# schema_version=1 config_hash="));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("lp.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "success");
}

#[test]
fn zero_field_is_rejected_before_running() {
    let dir = TempDir::new().unwrap();
    let body = SMALL_LP.replace("phi0_amplitude = -2\n", "phi0_amplitude = 0\n");
    let cfg = write_config(dir.path(), "zero", &body, "");
    let o = polaron(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ground-state assumption violated"), "{}", stderr(&o));
    assert!(!dir.path().join("zero.tsv").exists());
    let v = polaron(&["validate-config", cfg.to_str().unwrap()]);
    assert_eq!(code(&v), 1);
}

#[test]
fn unknown_and_duplicate_keys_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad", SMALL_LP, "colour = blue\n");
    let o = polaron(&["run", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));
    let dup = write_config(dir.path(), "dup", SMALL_LP, "alpha = 3\n");
    assert_eq!(code(&polaron(&["run", dup.to_str().unwrap()])), 1);
}

#[test]
fn oracle_dimension_cap_reports_the_dimension() {
    let dir = TempDir::new().unwrap();
    // C(2 + 4, 4) * 8 = 120
    let cfg = write_config(dir.path(), "cap", SMALL_ORACLE, "dim_cap = 100\n");
    let o = polaron(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("oracle dimension 120 exceeds dim_cap 100"), "{}", stderr(&o));
}

#[test]
fn gap_collapse_aborts_with_partial_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "gap", SMALL_LP, "gap_floor = 1e6\nmin_gap = 0.01\n");
    let o = polaron(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let tsv = std::fs::read_to_string(dir.path().join("gap.tsv")).unwrap();
    assert!(tsv.lines().filter(|l| !l.starts_with('#')).count() >= 2);
    assert!(dir.path().join("gap.ckpt").exists());
}

#[test]
fn truncation_leakage_is_flagged() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "leak", &SMALL_ORACLE.replace("leak_tol = 1e-1\n", ""), "leak_tol = 1e-14\n");
    let o = polaron(&["compare", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(dir.path().join("leak.tsv").exists());
}

#[test]
fn runs_are_byte_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let extra = "phi0_noise = 0.05\nseed = 7\n";
    for d in [&a, &b] {
        let cfg = write_config(d.path(), "rep", SMALL_ORACLE, extra);
        let o = polaron(&["compare", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["rep.tsv", "rep.svg", "rep.ckpt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        // the output directory is part of the config and hence of its hash
        let strip = |v: Vec<u8>| String::from_utf8_lossy(&v).lines().filter(|l| !l.starts_with("# schema")).collect::<Vec<_>>().join("\n");
        if f.ends_with("ckpt") {
            assert_eq!(x, y);
        } else {
            assert_eq!(strip(x), strip(y), "{f}");
        }
    }
}

#[test]
fn plot_subcommand_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "pl", SMALL_LP, "");
    assert_eq!(code(&polaron(&["run", cfg.to_str().unwrap()])), 0);
    let tsv = dir.path().join("pl.tsv");
    let out1 = dir.path().join("one.svg");
    let out2 = dir.path().join("two.svg");
    for out in [&out1, &out2] {
        let o = polaron(&["plot", tsv.to_str().unwrap(), "--columns", "energy,norm", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
    let o = polaron(&["plot", tsv.to_str().unwrap(), "--columns", "nope"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn short_sweep_has_no_fit_and_no_scaling_plot() {
    let dir = TempDir::new().unwrap();
    let body = SMALL_LP.replace("kind = lp\n", "kind = sweep\nsweep_kind = lp\n").replace("alpha = 2\n", "alpha = 2, 3\n");
    let cfg = write_config(dir.path(), "sw", &body, "");
    let o = polaron(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("sw_sweep.json")).unwrap()).unwrap();
    assert_eq!(json["fits"].as_array().unwrap().len(), 0);
    assert!(!dir.path().join("sw_scaling.svg").exists());
    assert!(dir.path().join("sw_alpha2.tsv").exists() && dir.path().join("sw_alpha3.tsv").exists());
}

#[test]
fn validate_config_prints_canonical_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "val", SMALL_LP, "");
    let o = polaron(&["validate-config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("alpha = 2") && s.contains("# hash = ") && s.contains("e(phi0) = -"));
}
