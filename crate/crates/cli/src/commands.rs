//! Subcommands. Each one loads the config, runs its stages through a
//! [`Run`], and writes a report next to its artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twistlab_core::hamiltonian::{factorize_time1, FactorAudit, FactorizationOptions, HamiltonianSystem, HppAudit};
use twistlab_core::reduction::{build_reduced, truncate, ReducedLagrangian, TruncationAudit};
use twistlab_core::section::{chart, chart_inverse, return_index, return_map, scale_map};
use twistlab_core::twistdyn::{
    approach_distances, connect_search, geodesic_reconstruct, instability_scan, rotation::rotation_number_with, scan_seeds, witness_holds, BandReport,
    CircleParams, ConnectParams, ConnectionCandidate, LiftedMap, PeriodicScan, ReconstructOptions, RotationMethod, ScanOutcome, ScanParams, SeedResult,
    TimeOneMap, Verdict,
};
use twistlab_core::PrimeDirection;

use crate::checks::{self, Check, VERIFY_CHECKS};
use crate::config::ExperimentConfig;
use crate::report::Run;
use crate::svg::{self, Layer, Style};

/// Why a command stopped; maps onto the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Bad config, flags or inputs: exit 2.
    Usage(String),
    /// A numerical stage raised an error: exit 3.
    Stage { stage: String, message: String },
    /// Every stage ran but some check failed: exit 3.
    Checks(Vec<String>),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Stage { .. } | Failure::Checks(_) | Failure::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Stage { stage, message } => write!(f, "stage `{stage}` failed: {message}"),
            Failure::Checks(names) => write!(f, "failed checks: {}", names.join(", ")),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

pub const PIPELINE_STAGES: [&str; 6] = ["reduce", "truncate", "factorize", "scan", "connect", "reconstruct"];

/// Samples kept per boundary circle in the band report.
const CIRCLE_SAMPLES: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Verify,
    Pipeline,
    Reduce,
    ReturnMap,
    TwistAudit,
    Rotation,
    Scan,
    Connect,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Pipeline => "pipeline",
            Command::Reduce => "reduce",
            Command::ReturnMap => "return-map",
            Command::TwistAudit => "twist-audit",
            Command::Rotation => "rotation",
            Command::Scan => "scan",
            Command::Connect => "connect",
        }
    }

    /// Names accepted by `--only`.
    pub fn only_names(self) -> Vec<&'static str> {
        match self {
            Command::Verify => VERIFY_CHECKS.to_vec(),
            Command::Pipeline => PIPELINE_STAGES.to_vec(),
            Command::Reduce => vec!["reduce", "truncate"],
            Command::ReturnMap => vec!["return-map", "conjugacy"],
            Command::TwistAudit => vec!["reduce", "truncate", "factorize"],
            Command::Rotation => vec!["rotation"],
            Command::Scan => vec!["reduce", "truncate", "scan"],
            Command::Connect => vec!["reduce", "truncate", "scan", "connect"],
        }
    }
}

/// Options shared by the config-driven commands.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub only: Option<String>,
    pub seed: Option<u64>,
}

pub fn load_config(opts: &Options) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&opts.config).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs `cmd` and writes its report. The report is written even when a
/// stage fails, keeping whatever artifacts were produced.
pub fn execute(cmd: Command, opts: &Options) -> Result<PathBuf, Failure> {
    if let Some(only) = &opts.only {
        if !cmd.only_names().contains(&only.as_str()) {
            return Err(Failure::Usage(format!(
                "`--only {only}` is not a check of `{}`; expected one of {}",
                cmd.name(),
                cmd.only_names().join(", ")
            )));
        }
    }
    let cfg = load_config(opts)?;
    let mut run = Run::new(&cfg.output_dir, cmd.name(), cfg.hash(), cfg.seed, opts.only.clone())?;
    let outcome = match cmd {
        Command::Verify => verify(&cfg, &mut run),
        Command::Pipeline => staged(&cfg, &mut run, "reconstruct", true, opts.only.as_deref()),
        Command::Reduce => staged(&cfg, &mut run, "truncate", false, opts.only.as_deref()),
        Command::TwistAudit => staged(&cfg, &mut run, "factorize", true, opts.only.as_deref()),
        Command::Scan => staged(&cfg, &mut run, "scan", false, opts.only.as_deref()),
        Command::Connect => staged(&cfg, &mut run, "connect", false, opts.only.as_deref()),
        Command::ReturnMap => return_map_cmd(&cfg, &mut run),
        Command::Rotation => rotation_cmd(&cfg, &mut run),
    };
    if let Err(Failure::Stage { stage, message }) = &outcome {
        run.report.failed_stage = Some(stage.clone());
        run.report.notes.push(format!("stage `{stage}` failed: {message}"));
    }
    let path = run.finish()?;
    outcome?;
    let failed: Vec<String> = run.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(path)
    } else {
        Err(Failure::Checks(failed))
    }
}

/// Runs the pipeline up to `last`, or only up to the `--only` stage; the
/// factorization is skipped unless it is the selected stage or no stage
/// was selected.
fn staged(cfg: &ExperimentConfig, run: &mut Run, last: &str, factorize: bool, only: Option<&str>) -> Result<(), Failure> {
    match only {
        Some(stage) => pipeline(cfg, run, stage, factorize && stage == "factorize"),
        None => pipeline(cfg, run, last, factorize),
    }
}

fn stage_err(stage: &str) -> impl Fn(twistlab_core::TwistError) -> Failure + '_ {
    move |e| Failure::Stage {
        stage: stage.into(),
        message: e.to_string(),
    }
}

fn verify(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), Failure> {
    let v = cfg.direction();
    let e1 = PrimeDirection::e1();
    let d11 = PrimeDirection::new(1, 1).expect("prime");
    let d21 = PrimeDirection::new(2, 1).expect("prime");
    if run.emits("shear") {
        let c = run.timed("shear", || checks::shear_oracle(v, 10, cfg.map_tol));
        run.check("shear", c);
    }
    if run.emits("return-map") {
        let c = run.timed("return-map", || checks::return_map_oracle(&[e1, d11], 50, cfg.map_tol));
        run.check("return-map", c);
    }
    if run.emits("pick") {
        let c = run.timed("pick", || checks::pick_count(&[e1, d11, d21], cfg.map_tol));
        run.check("pick", c);
    }
    let needs_lag = ["conjugacy", "legendre", "action-length"].iter().any(|n| run.emits(n));
    if !needs_lag {
        return Ok(());
    }
    let spec = Arc::new(cfg.metric.clone());
    let reduced = build_reduced(spec.clone(), v);
    let lag = truncate(reduced.clone(), cfg.truncation_r, cfg.truncation_margin).map_err(stage_err("truncate"))?;
    if run.emits("conjugacy") {
        let c = run.timed("conjugacy", || checks::conjugacy(&spec, &lag, cfg.conjugacy_grid, cfg.conjugacy_y_max, cfg.integrator_tol));
        run.check("conjugacy", c);
    }
    if run.emits("legendre") {
        let hsys = HamiltonianSystem::new(Arc::new(lag));
        let cs = run.timed("legendre", || checks::legendre_checks(&hsys, 1000, cfg.seed));
        for c in cs {
            run.check("legendre", c);
        }
    }
    if run.emits("action-length") {
        let c = run.timed("action-length", || checks::action_length(&reduced, 20, cfg.seed));
        run.check("action-length", c);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReduceRecord {
    direction: [i64; 2],
    r_cut: f64,
    min_lrr: f64,
    argmin: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct TruncationRecord {
    r_cut: f64,
    r_out: f64,
    d: f64,
    delta: f64,
    audit: TruncationAudit,
    tube: f64,
    hpp: HppAudit,
}

#[derive(Serialize, Deserialize)]
struct FactorizationRecord {
    n: usize,
    tube: f64,
    breakpoints: Vec<f64>,
    det_error: f64,
    history: Vec<(usize, f64)>,
    factors: Vec<FactorAudit>,
}

/// Summary of a scan; the band itself goes to `band.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub band_found: bool,
    pub absence_reason: Option<String>,
    pub omega_minus: Option<f64>,
    pub omega_plus: Option<f64>,
    pub periodic_lower: Option<PeriodicScan>,
    pub periodic_upper: Option<PeriodicScan>,
    pub seeds: Vec<SeedResult>,
}

#[derive(Serialize, Deserialize)]
struct ReconstructRecord {
    orbit_points: usize,
    el_residual: f64,
    section_deviation: f64,
    f_drift: f64,
    round_trip_error: f64,
    distance_minus: Option<f64>,
    distance_plus: Option<f64>,
}

fn scan_params(cfg: &ExperimentConfig) -> ScanParams {
    ScanParams {
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
    }
}

/// The chain reduce → truncate → factorize → scan → connect → reconstruct,
/// stopped after `last`. Factorization only runs when `factorize` is set.
fn pipeline(cfg: &ExperimentConfig, run: &mut Run, last: &str, factorize: bool) -> Result<(), Failure> {
    let upto = |s: &str| {
        let pos = |n: &str| PIPELINE_STAGES.iter().position(|p| *p == n).expect("known stage");
        pos(s) <= pos(last)
    };
    let spec = Arc::new(cfg.metric.clone());
    let v = cfg.direction();

    let reduced: ReducedLagrangian = run.timed("reduce", || build_reduced(spec.clone(), v));
    let (min_lrr, argmin) = reduced.min_convexity(cfg.truncation_r, 16, 121);
    run.write_json(
        "reduce",
        "reduce.json",
        &ReduceRecord {
            direction: v.components(),
            r_cut: cfg.truncation_r,
            min_lrr,
            argmin,
        },
    )?;
    run.check(
        "reduce",
        Check {
            name: "convexity".into(),
            passed: min_lrr > 0.0,
            measured: Some(min_lrr),
            threshold: 0.0,
            detail: format!("min d2L/dr2 over |r| <= {} (must be > 0)", cfg.truncation_r),
        },
    );

    let lag = run
        .timed("truncate", || truncate(reduced, cfg.truncation_r, cfg.truncation_margin))
        .map_err(stage_err("truncate"))?;
    let hsys = HamiltonianSystem::new(Arc::new(lag));
    let tube = if cfg.tube_p > 0.0 { cfg.tube_p } else { hsys.default_tube() };
    let hpp = hsys.audit_hpp(tube, 16, 65).map_err(stage_err("truncate"))?;
    let lag = hsys.lagrangian();
    run.write_json(
        "truncate",
        "truncation.json",
        &TruncationRecord {
            r_cut: lag.r_cut,
            r_out: lag.r_out,
            d: lag.d,
            delta: lag.delta,
            audit: lag.audit.clone(),
            tube,
            hpp,
        },
    )?;
    run.check(
        "truncate",
        Check {
            name: "truncation-convexity".into(),
            passed: lag.audit.min_lrr > 0.0 && lag.audit.c_bound.is_finite(),
            measured: Some(lag.audit.min_lrr),
            threshold: 0.0,
            detail: format!("min d2L_R/dr2 over |r| <= {} (must be > 0), C = {}", lag.audit.r_range, lag.audit.c_bound),
        },
    );
    if !upto("factorize") {
        return Ok(());
    }

    if factorize {
        let opts = FactorizationOptions {
            cap: cfg.factor_cap,
            grid: cfg.factor_grid,
            tol: cfg.map_tol,
        };
        let fact = run.timed("factorize", || factorize_time1(&hsys, tube, &opts)).map_err(stage_err("factorize"))?;
        let rep = fact.report();
        run.write_json(
            "factorize",
            "factorization.json",
            &FactorizationRecord {
                n: rep.n,
                tube: rep.tube,
                breakpoints: rep.breakpoints,
                det_error: rep.det_error,
                history: fact.history.clone(),
                factors: fact.factors.clone(),
            },
        )?;
        run.check(
            "factorize",
            Check {
                name: "twist".into(),
                passed: fact.min_twist() > 0.0,
                measured: Some(fact.min_twist()),
                threshold: 0.0,
                detail: format!("{} factors, min dX/dp over a {g}x{g} grid (must be > 0)", fact.n(), g = cfg.factor_grid),
            },
        );
        run.check("factorize", Check::at_most("symplectic", fact.max_det_error(), 1e-6, "max |det J - 1| over all factors".into()));
    }
    if !upto("scan") {
        return Ok(());
    }

    let map = TimeOneMap::new(&hsys, cfg.map_tol);
    let params = scan_params(cfg);
    let outcome = run.timed("scan", || instability_scan(&map, &params));
    let record = scan_record(&outcome);
    run.write_json("scan", "scan.json", &record)?;
    run.write("scan", "seeds.csv", &seeds_csv(&record.seeds))?;
    let band_report = outcome.band().map(|b| b.report(CIRCLE_SAMPLES));
    if let Some(br) = &band_report {
        run.write_json("scan", "band.json", br)?;
        run.write("scan", "circles.csv", &circles_csv(br))?;
    }
    let witnesses = run.timed("witnesses", || check_witnesses(&map, &record.seeds, params.circle.order_tol));
    run.check("scan", witnesses);
    match outcome.band() {
        Some(b) => {
            run.check(
                "scan",
                Check {
                    name: "band-order".into(),
                    passed: b.omega_minus < b.omega_plus,
                    measured: Some(b.omega_plus - b.omega_minus),
                    threshold: 0.0,
                    detail: format!("omega- = {}, omega+ = {} (difference must be > 0)", b.omega_minus, b.omega_plus),
                },
            );
            let rational = [&b.periodic_lower, &b.periodic_upper].iter().filter(|p| !p.irrational_up_to_q()).count();
            run.check(
                "scan",
                Check::at_most(
                    "boundary-periodic",
                    rational as f64,
                    0.0,
                    format!("boundary circles with a p/q-periodic orbit, q <= {}", params.q_max),
                ),
            );
            run.note("scan", format!("band between omega- = {} and omega+ = {}", b.omega_minus, b.omega_plus));
        }
        None => {
            let reason = record.absence_reason.clone().unwrap_or_default();
            run.note("scan", format!("no instability band: {reason}"));
        }
    }
    let orbit = if upto("connect") && outcome.band().is_some() {
        let band = outcome.band().expect("checked");
        let cp = ConnectParams {
            m_plus: cfg.connect_m_plus_steps,
            m_minus: cfg.connect_m_minus_steps,
            random_seeds: cfg.connect_random_seeds,
            rng_seed: cfg.seed,
            refine_iters: cfg.connect_refine_iters,
            ..Default::default()
        };
        let cand = run.timed("connect", || connect_search(&map, &outcome, &cp)).map_err(stage_err("connect"))?;
        run.write("connect", "orbit.csv", &cand.orbit_csv())?;
        run.write_json("connect", "connection.json", &cand.report("orbit.csv"))?;
        run.check("connect", delta_recompute(band, &cand));
        run.note(
            "connect",
            format!(
                "candidate from seed ({}, {}): delta+ = {:e} at k = {}, delta- = {:e} at k = {}",
                cand.seed.0, cand.seed.1, cand.delta_plus, cand.approach_steps.0, cand.delta_minus, cand.approach_steps.1
            ),
        );
        if cand.truncated {
            run.note("connect", "candidate orbit left the tube before M steps".into());
        }
        Some(cand)
    } else {
        if upto("connect") {
            run.note("connect", "connect skipped: no band".into());
        }
        None
    };
    if upto("reconstruct") {
        if let Some(cand) = &orbit {
            let rec = run
                .timed("reconstruct", || geodesic_reconstruct(&cand.orbit, outcome.band(), lag, &ReconstructOptions::default()))
                .map_err(stage_err("reconstruct"))?;
            run.write("reconstruct", "geodesic.csv", &rec.track.to_csv(&spec))?;
            run.write_json(
                "reconstruct",
                "reconstruct.json",
                &ReconstructRecord {
                    orbit_points: cand.orbit.len(),
                    el_residual: rec.el_residual,
                    section_deviation: rec.section_deviation,
                    f_drift: rec.f_drift,
                    round_trip_error: rec.round_trip_error,
                    distance_minus: rec.distance_minus,
                    distance_plus: rec.distance_plus,
                },
            )?;
            run.check("reconstruct", Check::at_most("geodesic-residual", rec.el_residual, 1e-6, "max geodesic-equation residual".into()));
            run.check(
                "reconstruct",
                Check::at_most("section-agreement", rec.section_deviation, 1e-6, "orbit vs. independent section returns".into()),
            );
            run.check("reconstruct", Check::at_most("unit-speed", rec.f_drift, 1e-6, "max |F - 1| at section returns".into()));
        }
        let orbit_pts: Vec<(f64, f64)> = orbit.iter().flat_map(|c| c.orbit.iter().map(|&(_, x, y)| (x, y))).collect();
        let portrait = portrait_svg(&record, band_report.as_ref(), &orbit_pts);
        run.write("reconstruct", "portrait.svg", &portrait)?;
    }
    Ok(())
}

pub fn scan_record(outcome: &ScanOutcome) -> ScanRecord {
    match outcome {
        ScanOutcome::Band(b) => ScanRecord {
            band_found: true,
            absence_reason: None,
            omega_minus: Some(b.omega_minus),
            omega_plus: Some(b.omega_plus),
            periodic_lower: Some(b.periodic_lower.clone()),
            periodic_upper: Some(b.periodic_upper.clone()),
            seeds: b.seeds.clone(),
        },
        ScanOutcome::Absent(a) => ScanRecord {
            band_found: false,
            absence_reason: Some(a.reason.clone()),
            omega_minus: None,
            omega_plus: None,
            periodic_lower: None,
            periodic_upper: None,
            seeds: a.seeds.clone(),
        },
    }
}

/// Every refuted seed must carry a witness that reproduces on a fresh orbit.
pub fn check_witnesses<M: LiftedMap + ?Sized>(map: &M, seeds: &[SeedResult], tol: f64) -> Check {
    let refuted: Vec<&SeedResult> = seeds.iter().filter(|s| s.verdict == Verdict::Refuted).collect();
    let bad = refuted
        .par_iter()
        .filter(|s| !s.witness.as_ref().is_some_and(|w| witness_holds(map, s.seed, w, tol)))
        .count();
    Check::at_most(
        "witnesses",
        bad as f64,
        0.0,
        format!("{} refuted seeds, each re-checked on a fresh orbit", refuted.len()),
    )
}

pub fn delta_recompute(band: &twistlab_core::twistdyn::InstabilityBand, cand: &ConnectionCandidate) -> Check {
    let (dp, kp, dm, km) = approach_distances(band, &cand.orbit);
    let exact = dp == cand.delta_plus && dm == cand.delta_minus && (kp, km) == cand.approach_steps;
    Check {
        name: "delta-recompute".into(),
        passed: exact,
        measured: Some((dp - cand.delta_plus).abs().max((dm - cand.delta_minus).abs())),
        threshold: 0.0,
        detail: format!("delta+ = {:e}, delta- = {:e} over {} orbit points", cand.delta_plus, cand.delta_minus, cand.orbit.len()),
    }
}

pub fn seeds_csv(seeds: &[SeedResult]) -> String {
    let mut out = String::from("x,y,verdict,omega\n");
    for s in seeds {
        let omega = s.omega.map_or(String::new(), |w| format!("{w:?}"));
        let _ = writeln!(out, "{:?},{:?},{:?},{omega}", s.seed.0, s.seed.1, s.verdict);
    }
    out
}

pub fn circles_csv(band: &BandReport) -> String {
    let mut out = String::from("curve,x,y\n");
    for (name, pts) in [("gamma_minus", &band.gamma_minus_samples), ("gamma_plus", &band.gamma_plus_samples)] {
        for (x, y) in pts {
            let _ = writeln!(out, "{name},{x:?},{y:?}");
        }
    }
    out
}

pub fn portrait_svg(record: &ScanRecord, band: Option<&BandReport>, orbit: &[(f64, f64)]) -> String {
    let mut layers = Vec::new();
    for (verdict, color, label) in [
        (Verdict::GraphVerified, "#1b7837", "seed: graph verified"),
        (Verdict::Indeterminate, "#999999", "seed: indeterminate"),
        (Verdict::Refuted, "#d73027", "seed: refuted"),
    ] {
        let pts: Vec<(f64, f64)> = record.seeds.iter().filter(|s| s.verdict == verdict).map(|s| s.seed).collect();
        if !pts.is_empty() {
            layers.push(Layer::new(label, color, Style::Dots, pts));
        }
    }
    if let Some(b) = band {
        layers.push(Layer::new("lower boundary circle", "#2166ac", Style::Curve, b.gamma_minus_samples.clone()));
        layers.push(Layer::new("upper boundary circle", "#762a83", Style::Curve, b.gamma_plus_samples.clone()));
    }
    if !orbit.is_empty() {
        layers.push(Layer::new("connecting candidate", "#f46d43", Style::Dots, orbit.to_vec()));
    }
    svg::render("time-1 map phase portrait", "p", &layers)
}

fn return_map_cmd(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), Failure> {
    let spec = Arc::new(cfg.metric.clone());
    let v = cfg.direction();
    let n = cfg.conjugacy_grid.max(2);
    let y = cfg.conjugacy_y_max;
    let tol = cfg.integrator_tol;
    let rows: Vec<Option<(f64, f64, f64, f64, usize, f64)>> = run.timed("return-map", || {
        (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let b = (idx / n) as f64 / n as f64;
                let d = -y + 2.0 * y * (idx % n) as f64 / (n - 1) as f64;
                let v0 = scale_map(&spec, v, &chart_inverse(v, 0, (b, d))).ok()?;
                let ret = return_map(&spec, v, &v0, tol).ok()?;
                let w1 = scale_map(&spec, v, &ret.point).ok()?;
                let (b1, d1) = chart(v, &w1, 1).ok()?;
                Some((b, d, b1, d1, ret.crossings.len(), ret.event_residual))
            })
            .collect()
    });
    let mut csv = String::from("b,d,b1,d1,crossings,event_residual\n");
    let mut wrong_count = 0usize;
    for (b, d, b1, d1, c, res) in rows.iter().flatten() {
        let _ = writeln!(csv, "{b:?},{d:?},{b1:?},{d1:?},{c},{res:?}");
        wrong_count += (*c as i64 != return_index(v)) as usize;
    }
    let excluded = rows.iter().filter(|r| r.is_none()).count();
    run.write("return-map", "return_map.csv", &csv)?;
    run.check(
        "return-map",
        Check::at_most(
            "crossings",
            wrong_count as f64,
            0.0,
            format!("points whose crossing count differs from |v|^2 = {}; {excluded} excluded", v.norm2()),
        ),
    );
    if run.emits("conjugacy") {
        let lag = truncate(build_reduced(spec.clone(), v), cfg.truncation_r, cfg.truncation_margin).map_err(stage_err("truncate"))?;
        let c = run.timed("conjugacy", || checks::conjugacy(&spec, &lag, cfg.conjugacy_grid, y, tol));
        run.check("conjugacy", c);
    }
    Ok(())
}

fn rotation_cmd(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), Failure> {
    let spec = Arc::new(cfg.metric.clone());
    let lag = truncate(build_reduced(spec, cfg.direction()), cfg.truncation_r, cfg.truncation_margin).map_err(stage_err("truncate"))?;
    let hsys = HamiltonianSystem::new(Arc::new(lag));
    let map = TimeOneMap::new(&hsys, cfg.map_tol);
    let seeds = scan_seeds(&scan_params(cfg));
    let n = cfg.circle_iterates_steps;
    let rows: Vec<String> = run.timed("rotation", || {
        seeds
            .par_iter()
            .map(|&s| {
                let w = rotation_number_with(&map, s, n, RotationMethod::WeightedBirkhoff);
                let plain = rotation_number_with(&map, s, n, RotationMethod::Plain);
                let show = |r: Option<f64>| r.map_or(String::new(), |v| format!("{v:?}"));
                format!(
                    "{:?},{:?},{},{},{},{}",
                    s.0,
                    s.1,
                    show(w.as_ref().map(|r| r.value)),
                    show(w.as_ref().map(|r| r.uncertainty)),
                    show(plain.as_ref().map(|r| r.value)),
                    w.as_ref().map_or(0, |r| r.iterates)
                )
            })
            .collect()
    });
    let mut csv = String::from("x,y,omega,uncertainty,omega_plain,iterates\n");
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    run.write("rotation", "rotation.csv", &csv)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for ExportFormat {
    type Err = Failure;
    fn from_str(s: &str) -> Result<Self, Failure> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            "svg" => Ok(ExportFormat::Svg),
            other => Err(Failure::Usage(format!("unknown export format `{other}`; expected csv, json or svg"))),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses an orbit CSV with columns `k,x,y`.
pub fn parse_orbit_csv(text: &str) -> Result<Vec<(i64, f64, f64)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("k,x,y") {
        return Err("orbit csv must start with `k,x,y`".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || format!("orbit csv line {}: `{l}`", i + 2);
            if f.len() != 3 {
                return Err(bad());
            }
            Ok((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Re-renders the stored scan and connection data of a run directory.
/// Returns the files written.
pub fn export(dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Usage(format!("run directory {} does not exist", dir.display())));
    }
    let record: ScanRecord = read_json(&dir.join("scan.json"))?;
    let band_path = dir.join("band.json");
    let band: Option<BandReport> = if band_path.exists() { Some(read_json(&band_path)?) } else { None };
    let mut written = Vec::new();
    match format {
        ExportFormat::Csv => {
            std::fs::write(dir.join("seeds.csv"), seeds_csv(&record.seeds))?;
            written.push(dir.join("seeds.csv"));
            if let Some(b) = &band {
                std::fs::write(dir.join("circles.csv"), circles_csv(b))?;
                written.push(dir.join("circles.csv"));
            }
        }
        ExportFormat::Json => {
            write_json(&dir.join("scan.json"), &record)?;
            written.push(dir.join("scan.json"));
            if let Some(b) = &band {
                write_json(&band_path, b)?;
                written.push(band_path.clone());
            }
            let conn = dir.join("connection.json");
            if conn.exists() {
                let c: twistlab_core::twistdyn::ConnectionReport = read_json(&conn)?;
                write_json(&conn, &c)?;
                written.push(conn);
            }
        }
        ExportFormat::Svg => {
            let orbit_path = dir.join("orbit.csv");
            let orbit: Vec<(f64, f64)> = if orbit_path.exists() {
                let text = std::fs::read_to_string(&orbit_path)?;
                parse_orbit_csv(&text).map_err(Failure::Usage)?.into_iter().map(|(_, x, y)| (x, y)).collect()
            } else {
                Vec::new()
            };
            std::fs::write(dir.join("portrait.svg"), portrait_svg(&record, band.as_ref(), &orbit))?;
            written.push(dir.join("portrait.svg"));
        }
    }
    Ok(written)
}
