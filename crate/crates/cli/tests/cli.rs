use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use twistlab_cli::commands::{circles_csv, portrait_svg, scan_record, ScanRecord};
use twistlab_cli::RunReport;
use twistlab_core::twistdyn::{instability_scan, BandReport, ScanParams, StandardMap};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn twistlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twistlab")).args(args).output().expect("binary runs")
}

fn twistlab_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twistlab"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Config in a temp dir next to a copy of `metric`.
fn temp_config(metric: &str, body: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.metric"), metric).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("metric_path = m.metric\noutput_dir = out\n{body}")).unwrap();
    (dir, cfg)
}

fn read_report(dir: &Path, command: &str) -> RunReport {
    let text = std::fs::read_to_string(dir.join(RunReport::file_name(command))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn verify_flat_passes() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("flat.cfg");
    let o = twistlab(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_report(out.path(), "verify");
    assert!(rep.all_passed());
    let names: Vec<&str> = rep.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        ["shear", "return-map", "pick", "conjugacy", "legendre-roundtrip", "hamiltonian-tail", "action-length"]
    );
    assert!(out.path().join("timings_verify.log").exists());
}

#[test]
fn non_prime_direction_exits_2() {
    let (_d, cfg) = temp_config("", "direction_v = 2, 2\n");
    let o = twistlab(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("v not prime"), "{}", stderr(&o));
}

#[test]
fn missing_metric_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "metric_path = absent.metric\n").unwrap();
    let o = twistlab(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn parse_error_reports_line_and_column() {
    let (_d, cfg) = temp_config("", "seed = twelve\n");
    let o = twistlab(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3, column 8"), "{}", stderr(&o));
}

#[test]
fn bad_metric_file_exits_2() {
    let (_d, cfg) = temp_config("u.0.1.cos = nope\n", "");
    let o = twistlab(&["reduce", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn unknown_only_and_threads_exit_2() {
    let cfg = configs().join("flat.cfg");
    let out = tempfile::tempdir().unwrap();
    let base = ["verify", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()];
    let o = twistlab(&[&base[..], &["--only", "nonsense"]].concat());
    assert_eq!(o.status.code(), Some(2));
    let o = twistlab_env(&base, "TWISTLAB_THREADS", "zero");
    assert_eq!(o.status.code(), Some(2));
    let o = twistlab_env(&[&base[..], &["--only", "pick"]].concat(), "TWISTLAB_THREADS", "1");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn only_runs_a_single_check() {
    let cfg = configs().join("flat.cfg");
    let out = tempfile::tempdir().unwrap();
    let o = twistlab(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--only", "pick"]);
    assert_eq!(o.status.code(), Some(0));
    let rep = read_report(out.path(), "verify");
    assert_eq!(rep.checks.len(), 1);
    assert_eq!(rep.checks[0].name, "pick");

    let o = twistlab(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--only", "truncate"]);
    assert_eq!(o.status.code(), Some(0));
    let rep = read_report(out.path(), "pipeline");
    assert_eq!(rep.stages, ["truncate"]);
    assert_eq!(rep.artifacts, ["truncation.json"]);
}

#[test]
fn flat_pipeline_reports_absence() {
    let cfg = configs().join("flat.cfg");
    let out = tempfile::tempdir().unwrap();
    let o = twistlab(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_report(out.path(), "pipeline");
    assert!(rep.all_passed());
    assert!(rep.notes.iter().any(|n| n.starts_with("no instability band")));
    for a in &rep.artifacts {
        assert!(out.path().join(a).is_file(), "{a}");
    }
    assert!(!out.path().join("band.json").exists());
    let scan: ScanRecord = serde_json::from_str(&std::fs::read_to_string(out.path().join("scan.json")).unwrap()).unwrap();
    assert!(!scan.band_found);
}

#[test]
fn factor_cap_exceeded_exits_3() {
    let (dir, cfg) = temp_config(
        "u.0.1.cos = 0.5\nu.-1.1.cos = 0.5\n",
        "truncation_margin = 25\nfactor_cap = 1\nfactor_grid = 16\n",
    );
    let o = twistlab(&["twist-audit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let rep = read_report(&dir.path().join("out"), "twist-audit");
    assert_eq!(rep.failed_stage.as_deref(), Some("factorize"));
    // Earlier stages keep their artifacts.
    assert!(dir.path().join("out/truncation.json").is_file());
}

#[test]
fn export_rejects_unknown_format_and_missing_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = twistlab(&["export", "--out", dir.path().to_str().unwrap(), "--format", "png"]);
    assert_eq!(o.status.code(), Some(2));
    let o = twistlab(&["export", "--out", "/nonexistent/run", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(2));
}

/// A run directory holding a standard-map band, written the way `pipeline`
/// writes it.
fn standard_map_run() -> (tempfile::TempDir, BandReport) {
    let params = ScanParams {
        y_min: -0.5,
        y_max: 0.5,
        levels: 41,
        seeds_per_level: 2,
        ..Default::default()
    };
    let outcome = instability_scan(&StandardMap { k: 0.9 }, &params);
    let band = outcome.band().expect("standard map band").report(200);
    let dir = tempfile::tempdir().unwrap();
    let record = scan_record(&outcome);
    std::fs::write(dir.path().join("scan.json"), serde_json::to_string_pretty(&record).unwrap() + "\n").unwrap();
    std::fs::write(dir.path().join("band.json"), serde_json::to_string_pretty(&band).unwrap() + "\n").unwrap();
    (dir, band)
}

#[test]
fn export_is_idempotent_and_json_round_trips() {
    let (dir, band) = standard_map_run();
    let d = dir.path().to_str().unwrap();
    let before = std::fs::read(dir.path().join("band.json")).unwrap();
    assert_eq!(twistlab(&["export", "--out", d, "--format", "json"]).status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("band.json")).unwrap(), before);
    let parsed: BandReport = serde_json::from_slice(&before).unwrap();
    assert_eq!(parsed, band);

    assert_eq!(twistlab(&["export", "--out", d, "--format", "csv"]).status.code(), Some(0));
    let first = std::fs::read(dir.path().join("circles.csv")).unwrap();
    assert_eq!(twistlab(&["export", "--out", d, "--format", "csv"]).status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("circles.csv")).unwrap(), first);
    assert_eq!(String::from_utf8(first).unwrap(), circles_csv(&band));

    assert_eq!(twistlab(&["export", "--out", d, "--format", "svg"]).status.code(), Some(0));
    let svg = std::fs::read_to_string(dir.path().join("portrait.svg")).unwrap();
    let record: ScanRecord = serde_json::from_str(&std::fs::read_to_string(dir.path().join("scan.json")).unwrap()).unwrap();
    assert_eq!(svg, portrait_svg(&record, Some(&band), &[]));
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn subcommands_write_their_artifacts() {
    let cfg = configs().join("flat.cfg");
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    for (cmd, file) in [
        ("reduce", "truncation.json"),
        ("return-map", "return_map.csv"),
        ("twist-audit", "factorization.json"),
        ("rotation", "rotation.csv"),
        ("scan", "seeds.csv"),
    ] {
        let r = twistlab(&[cmd, "--config", cfg.to_str().unwrap(), "--out", o]);
        assert_eq!(r.status.code(), Some(0), "{cmd}: {}", stderr(&r));
        assert!(out.path().join(file).is_file(), "{cmd}");
        assert!(read_report(out.path(), cmd).all_passed(), "{cmd}");
    }
    let rot = std::fs::read_to_string(out.path().join("rotation.csv")).unwrap();
    assert!(rot.starts_with("x,y,omega,uncertainty,omega_plain,iterates\n"));
}

#[test]
fn help_exits_0() {
    assert_eq!(twistlab(&["--help"]).status.code(), Some(0));
    assert_eq!(twistlab(&["frobnicate"]).status.code(), Some(2));
}
