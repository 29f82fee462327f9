//! Command-line driver: config loading, the verification suite, the
//! reduce → scan → connect pipeline, and artifact export.

pub mod checks;
pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use checks::Check;
pub use commands::{execute, export, Command, ExportFormat, Failure, Options};
pub use config::{ConfigError, ExperimentConfig};
pub use report::RunReport;

#[derive(Parser, Debug)]
#[command(name = "twistlab", version, about = "Geodesics on the 2-torus through monotone twist maps")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (flat `key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run and report a single check or stage.
    #[arg(long)]
    only: Option<String>,
    /// Seed for random sampling; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Oracle suite: shear map, return-map closed form, conjugacy, crossing
    /// count, Legendre tail, action-length identity.
    Verify(Common),
    /// reduce → truncate → factorize → scan → connect → reconstruct.
    Pipeline(Common),
    /// Reduced and truncated Lagrangian with convexity audits.
    Reduce(Common),
    /// Section return map on a grid, with the conjugacy check.
    ReturnMap(Common),
    /// Twist factorization of the time-1 map.
    TwistAudit(Common),
    /// Rotation numbers of the scan seeds.
    Rotation(Common),
    /// Invariant-circle scan for an instability band.
    Scan(Common),
    /// Scan plus the connecting-orbit search.
    Connect(Common),
    /// Re-render stored run data.
    Export {
        /// Run directory written by `pipeline`.
        #[arg(long)]
        out: PathBuf,
        /// csv, json or svg.
        #[arg(long)]
        format: String,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("TWISTLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("TWISTLAB_THREADS must be a positive integer, got `{raw}`")))?;
    // A pool may already exist when called repeatedly in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn print_report(path: &std::path::Path) {
    let Ok(text) = std::fs::read_to_string(path) else { return };
    let Ok(report) = serde_json::from_str::<RunReport>(&text) else { return };
    for c in &report.checks {
        let measured = c.measured.map_or("n/a".to_string(), |m| format!("{m:e}"));
        println!("[{}] {:<20} {measured:>12}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    println!("report: {}", path.display());
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 2 config or usage error, 3 numerical
/// failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let (cmd, common) = match cli.command {
        Cmd::Export { out, format } => {
            let result = format.parse::<ExportFormat>().and_then(|f| export(&out, f));
            return match result {
                Ok(files) => {
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            };
        }
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Pipeline(c) => (Command::Pipeline, c),
        Cmd::Reduce(c) => (Command::Reduce, c),
        Cmd::ReturnMap(c) => (Command::ReturnMap, c),
        Cmd::TwistAudit(c) => (Command::TwistAudit, c),
        Cmd::Rotation(c) => (Command::Rotation, c),
        Cmd::Scan(c) => (Command::Scan, c),
        Cmd::Connect(c) => (Command::Connect, c),
    };
    let opts = Options {
        config: common.config,
        out: common.out,
        only: common.only,
        seed: common.seed,
    };
    match execute(cmd, &opts) {
        Ok(path) => {
            print_report(&path);
            0
        }
        Err(e) => {
            let out = commands::load_config(&opts).map(|c| c.output_dir).ok();
            if let Some(dir) = out {
                let path = dir.join(RunReport::file_name(cmd.name()));
                if path.exists() && !matches!(e, Failure::Usage(_)) {
                    print_report(&path);
                }
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
