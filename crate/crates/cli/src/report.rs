//! Run reports and artifact bookkeeping.
//!
//! Wall-clock timings go to a separate log so that every JSON and CSV
//! artifact depends only on the config and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::checks::Check;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Stages in execution order; their timings are in `timings_log`.
    pub stages: Vec<String>,
    pub timings_log: String,
    pub checks: Vec<Check>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub failed_stage: Option<String>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.failed_stage.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn file_name(command: &str) -> String {
        format!("report_{command}.json")
    }
}

/// Output directory plus the report being assembled.
pub struct Run {
    pub out: PathBuf,
    pub report: RunReport,
    timings: Vec<(String, Duration)>,
    /// When set, stages outside this set compute but emit nothing.
    only: Option<String>,
}

impl Run {
    pub fn new(out: &Path, command: &str, config_hash: String, seed: u64, only: Option<String>) -> std::io::Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            report: RunReport {
                command: command.into(),
                config_hash,
                seed,
                timings_log: format!("timings_{command}.log"),
                ..Default::default()
            },
            timings: Vec::new(),
            only,
        })
    }

    /// Whether the stage or check `name` reports its results.
    pub fn emits(&self, name: &str) -> bool {
        self.only.as_deref().map_or(true, |o| o == name)
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((stage.into(), start.elapsed()));
        if self.emits(stage) {
            self.report.stages.push(stage.into());
        }
        out
    }

    pub fn write(&mut self, stage: &str, name: &str, contents: &str) -> std::io::Result<()> {
        if !self.emits(stage) {
            return Ok(());
        }
        std::fs::write(self.out.join(name), contents)?;
        if !self.report.artifacts.iter().any(|a| a == name) {
            self.report.artifacts.push(name.into());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, stage: &str, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(stage, name, &text)
    }

    pub fn check(&mut self, stage: &str, check: Check) {
        if self.emits(stage) {
            self.report.checks.push(check);
        }
    }

    pub fn note(&mut self, stage: &str, note: String) {
        if self.emits(stage) {
            self.report.notes.push(note);
        }
    }

    /// Writes the timings log and the report; returns the report path.
    pub fn finish(&mut self) -> std::io::Result<PathBuf> {
        let mut log = String::new();
        for (stage, d) in &self.timings {
            let _ = writeln!(log, "{stage}\t{:.3} s", d.as_secs_f64());
        }
        std::fs::write(self.out.join(&self.report.timings_log), log)?;
        let path = self.out.join(RunReport::file_name(&self.report.command));
        let mut text = serde_json::to_string_pretty(&self.report).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
