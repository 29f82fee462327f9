//! Acceptance criteria 1–11. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion does.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use twistlab_cli::checks;
use twistlab_cli::commands::{check_witnesses, delta_recompute, execute, Command, Options};
use twistlab_cli::ExperimentConfig;
use twistlab_core::hamiltonian::{factorize_time1, FactorizationOptions, HamiltonianSystem};
use twistlab_core::reduction::{build_reduced, truncate};
use twistlab_core::twistdyn::{
    circle_detect, connect_search, instability_scan, rotation_number, CircleParams, ConnectParams, ScanOutcome, ScanParams, Shear, StandardMap, TimeOneMap, Verdict,
};
use twistlab_core::{MetricSpec, PrimeDirection};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn truncated(spec: MetricSpec) -> (Arc<MetricSpec>, twistlab_core::TruncatedLagrangian) {
    let spec = Arc::new(spec);
    let lag = truncate(build_reduced(spec.clone(), PrimeDirection::e1()), 3.0, 2.0).unwrap();
    (spec, lag)
}

/// Ten irrational levels in `(0, 1)`.
fn irrational_levels() -> Vec<f64> {
    [2.0f64, 3.0, 5.0, 6.0, 7.0, 10.0, 11.0, 13.0, 14.0, 15.0].iter().map(|p| p.sqrt().fract()).collect()
}

fn c1_shear() -> Outcome {
    let c = checks::shear_oracle(PrimeDirection::e1(), 10, 1e-10);
    outcome(c.passed, format!("max |error| = {:e} on {} (<= 1e-9)", c.measured.unwrap_or(f64::NAN), c.detail))
}

fn c2_return_map() -> Outcome {
    let dirs = [PrimeDirection::e1(), PrimeDirection::new(1, 1).unwrap()];
    let c = checks::return_map_oracle(&dirs, 50, 1e-10);
    outcome(c.passed, format!("max |error| = {:e}, {} (<= 1e-8)", c.measured.unwrap_or(f64::NAN), c.detail))
}

fn c3_conjugacy() -> Outcome {
    let (spec, lag) = truncated(MetricSpec::conformal_cos(0.05));
    let c = checks::conjugacy(&spec, &lag, 20, 2.0, 1e-9);
    outcome(c.passed, format!("max deviation {:e}, {} (<= 1e-6)", c.measured.unwrap_or(f64::NAN), c.detail))
}

fn c4_action_length() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for spec in [MetricSpec::flat(), MetricSpec::conformal_cos(0.1)] {
        let lag = build_reduced(Arc::new(spec), PrimeDirection::e1());
        let c = checks::action_length(&lag, 20, 11);
        ok &= c.passed;
        worst = worst.max(c.measured.unwrap_or(f64::INFINITY));
    }
    outcome(ok, format!("max relative gap {worst:e} over 20 curves x 2 metrics (<= 1e-8)"))
}

fn c5_legendre() -> Outcome {
    let (_, lag) = truncated(MetricSpec::conformal_cos(0.1));
    let h = HamiltonianSystem::new(Arc::new(lag));
    let [rt, tail] = checks::legendre_checks(&h, 1000, 5);
    outcome(
        rt.passed && tail.passed,
        format!(
            "round trip {:e} (<= 1e-10); {} with {} mismatches",
            rt.measured.unwrap_or(f64::NAN),
            tail.detail,
            tail.measured.unwrap_or(f64::NAN)
        ),
    )
}

fn c6_factorization() -> Outcome {
    let (_, lag) = truncated(MetricSpec::conformal_cos(0.05));
    let h = HamiltonianSystem::new(Arc::new(lag));
    match factorize_time1(&h, h.default_tube(), &FactorizationOptions::default()) {
        Ok(f) => {
            let ok = f.factors.iter().all(|a| a.min_twist > 0.0) && f.max_det_error() <= 1e-6;
            outcome(
                ok,
                format!(
                    "n = {}, min dX/dp = {:e} on 64x64 over |p| <= {:.3}, max |det - 1| = {:e}",
                    f.n(),
                    f.min_twist(),
                    f.tube,
                    f.max_det_error()
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c7_pick() -> Outcome {
    let dirs = [PrimeDirection::e1(), PrimeDirection::new(1, 1).unwrap(), PrimeDirection::new(2, 1).unwrap()];
    let c = checks::pick_count(&dirs, 1e-10);
    outcome(c.passed, c.detail)
}

fn c8_rotation() -> Outcome {
    let mut worst: f64 = 0.0;
    for y in irrational_levels() {
        let err = rotation_number(&Shear, (0.0, y), 10_000).map_or(f64::INFINITY, |r| (r.value - y).abs());
        worst = worst.max(err);
    }
    outcome(worst <= 1e-10, format!("max |rho - y| = {worst:e} over 10 levels, N = 1e4 (<= 1e-10)"))
}

fn c9_circles() -> Outcome {
    let p = CircleParams::default();
    let verified = irrational_levels()
        .into_iter()
        .filter(|&y| circle_detect(&Shear, (0.0, y), &p).verdict == Verdict::GraphVerified)
        .count();
    let indeterminate = [0.0, 0.5, 1.0 / 3.0, 0.4, 0.75]
        .into_iter()
        .filter(|&y| circle_detect(&Shear, (0.0, y), &p).verdict == Verdict::Indeterminate)
        .count();
    // Refutations of a chaotic map must reproduce.
    let params = ScanParams {
        y_min: -0.5,
        y_max: 0.5,
        levels: 21,
        seeds_per_level: 2,
        ..Default::default()
    };
    let map = StandardMap { k: 1.2 };
    let seeds = match instability_scan(&map, &params) {
        ScanOutcome::Band(b) => b.seeds,
        ScanOutcome::Absent(a) => a.seeds,
    };
    let refuted = seeds.iter().filter(|s| s.verdict == Verdict::Refuted).count();
    let w = check_witnesses(&map, &seeds, p.order_tol);
    outcome(
        verified == 10 && indeterminate == 5 && w.passed && refuted > 0,
        format!("{verified}/10 irrational verified, {indeterminate}/5 rational indeterminate, {refuted} refuted witnesses reproduced: {}", w.passed),
    )
}

fn c10_band() -> Outcome {
    let cfg = ExperimentConfig::load(&configs().join("band.cfg")).unwrap();
    let lag = truncate(build_reduced(Arc::new(cfg.metric.clone()), cfg.direction()), cfg.truncation_r, cfg.truncation_margin).unwrap();
    let h = HamiltonianSystem::new(Arc::new(lag));
    let map = TimeOneMap::new(&h, cfg.map_tol);
    let params = ScanParams {
        y_min: cfg.scan_p_min,
        y_max: cfg.scan_p_max,
        levels: cfg.scan_levels,
        seeds_per_level: cfg.scan_seeds_per_level,
        circle: CircleParams {
            iterates: cfg.circle_iterates_steps,
            density: cfg.circle_density,
            ..Default::default()
        },
        q_max: cfg.periodic_q_max,
        periodic_tol: 1e-6,
    };
    let scan = instability_scan(&map, &params);
    let Some(band) = scan.band() else {
        return outcome(false, "scan found no band".into());
    };
    let interior_refuted = band.interior.iter().any(|s| s.verdict == Verdict::Refuted);
    let no_periodic = band.periodic_lower.irrational_up_to_q() && band.periodic_upper.irrational_up_to_q();
    let cp = ConnectParams {
        m_plus: cfg.connect_m_plus_steps,
        m_minus: cfg.connect_m_minus_steps,
        random_seeds: cfg.connect_random_seeds,
        rng_seed: cfg.seed,
        refine_iters: cfg.connect_refine_iters,
        ..Default::default()
    };
    let cand = match connect_search(&map, &scan, &cp) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("connect_search: {e}")),
    };
    let exact = delta_recompute(band, &cand).passed;
    outcome(
        band.omega_minus < band.omega_plus && interior_refuted && no_periodic && exact,
        format!(
            "{} (from config): omega- = {:.6} < omega+ = {:.6}, Q = {}, periodic-free: {no_periodic}, delta+ = {:.3e}, delta- = {:.3e} recomputed exactly: {exact}",
            cfg.metric.to_text().trim().replace('\n', ", "),
            band.omega_minus,
            band.omega_plus,
            params.q_max,
            cand.delta_plus,
            cand.delta_minus
        ),
    )
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn c11_determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let opts = Options {
            config: configs().join("band.cfg"),
            out: Some(dir.path().to_path_buf()),
            only: None,
            seed: Some(7),
        };
        if let Err(e) = execute(Command::Pipeline, &opts) {
            return outcome(false, format!("pipeline failed: {e}"));
        }
    }
    let (a, b) = (artifacts(runs[0].path()), artifacts(runs[1].path()));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    outcome(
        a.len() > 5 && a.keys().eq(b.keys()) && differing.is_empty(),
        format!("{} CSV/JSON artifacts compared byte for byte, {} differ", a.len(), differing.len()),
    )
}

#[test]
fn acceptance_criteria() {
    type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "flat shear oracle", Some(Duration::from_secs(10)), c1_shear),
        (2, "flat return map", Some(Duration::from_secs(30)), c2_return_map),
        (3, "conjugacy", Some(Duration::from_secs(120)), c3_conjugacy),
        (4, "action-length identity", None, c4_action_length),
        (5, "Legendre round trip and tail", None, c5_legendre),
        (6, "twist factorization", None, c6_factorization),
        (7, "section crossing count", None, c7_pick),
        (8, "rotation numbers", None, c8_rotation),
        (9, "circle detection", None, c9_circles),
        (10, "instability band", None, c10_band),
        (11, "determinism", None, c11_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let mut out = run();
        let elapsed = start.elapsed();
        if let Some(l) = limit {
            if elapsed > l {
                out.passed = false;
                out.detail.push_str(&format!("; runtime {:.1} s exceeds {} s", elapsed.as_secs_f64(), l.as_secs()));
            }
        }
        let tag = if out.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{tag}] {name}: {} ({:.2} s)", out.detail, elapsed.as_secs_f64());
        if !out.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
