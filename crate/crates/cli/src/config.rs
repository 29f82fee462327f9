//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment. Unknown and repeated keys
//! are errors. `metric_path` and `output_dir` are resolved against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use twistlab_core::{MetricSpec, PrimeDirection};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Parse { line: usize, column: usize, message: String },
    Invalid(String),
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line, column, message } => write!(f, "config parse error at line {line}, column {column}: {message}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
            ConfigError::Io(m) => write!(f, "config i/o error: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub metric_path: PathBuf,
    #[serde(skip)]
    pub metric: MetricSpec,
    pub direction: [i64; 2],
    pub truncation_r: f64,
    pub truncation_margin: f64,
    /// Tube half-height in momentum; 0 picks the tail-based default.
    pub tube_p: f64,
    pub integrator_tol: f64,
    pub map_tol: f64,
    pub factor_cap: usize,
    pub factor_grid: usize,
    pub conjugacy_grid: usize,
    pub conjugacy_y_max: f64,
    pub scan_p_min: f64,
    pub scan_p_max: f64,
    pub scan_levels: usize,
    pub scan_seeds_per_level: usize,
    pub circle_iterates_steps: usize,
    pub circle_density: f64,
    pub periodic_q_max: u32,
    pub connect_m_plus_steps: usize,
    pub connect_m_minus_steps: usize,
    pub connect_random_seeds: usize,
    pub connect_refine_iters: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    fn defaults(metric_path: PathBuf, metric: MetricSpec, output_dir: PathBuf) -> Self {
        Self {
            metric_path,
            metric,
            direction: [1, 0],
            truncation_r: 3.0,
            truncation_margin: 2.0,
            tube_p: 0.0,
            integrator_tol: 1e-9,
            map_tol: 1e-10,
            factor_cap: 1024,
            factor_grid: 64,
            conjugacy_grid: 20,
            conjugacy_y_max: 2.0,
            scan_p_min: -1.2,
            scan_p_max: 1.2,
            scan_levels: 49,
            scan_seeds_per_level: 2,
            circle_iterates_steps: 1000,
            circle_density: 0.02,
            periodic_q_max: 50,
            connect_m_plus_steps: 2000,
            connect_m_minus_steps: 2000,
            connect_random_seeds: 16,
            connect_refine_iters: 12,
            seed: 0,
            output_dir,
        }
    }

    pub fn direction(&self) -> PrimeDirection {
        PrimeDirection::new(self.direction[0], self.direction[1]).expect("validated at load")
    }

    /// SHA-256 of the canonical settings and the metric coefficients.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut settings = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = settings.as_object_mut() {
            map.remove("metric_path");
            map.remove("output_dir");
        }
        h.update(settings.to_string().as_bytes());
        h.update(self.metric.to_text().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let get = |k: &str| entries.get(k);
        let Some(mp) = get("metric_path") else {
            return Err(ConfigError::Invalid("missing required key `metric_path`".into()));
        };
        let metric_path = base.join(&mp.value);
        if !metric_path.is_file() {
            return Err(ConfigError::Invalid(format!("metric file {} does not exist", metric_path.display())));
        }
        let metric = MetricSpec::load(&metric_path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", metric_path.display())))?;
        let output_dir = get("output_dir").map_or_else(|| base.join("out"), |e| base.join(&e.value));
        let mut cfg = Self::defaults(metric_path, metric, output_dir);

        for (key, e) in &entries {
            match key.as_str() {
                "metric_path" | "output_dir" => {}
                "direction_v" => cfg.direction = e.pair()?,
                "truncation_r" => cfg.truncation_r = e.real()?,
                "truncation_margin" => cfg.truncation_margin = e.real()?,
                "tube_p" => cfg.tube_p = e.real()?,
                "integrator_tol" => cfg.integrator_tol = e.real()?,
                "map_tol" => cfg.map_tol = e.real()?,
                "factor_cap" => cfg.factor_cap = e.count()?,
                "factor_grid" => cfg.factor_grid = e.count()?,
                "conjugacy_grid" => cfg.conjugacy_grid = e.count()?,
                "conjugacy_y_max" => cfg.conjugacy_y_max = e.real()?,
                "scan_p_min" => cfg.scan_p_min = e.real()?,
                "scan_p_max" => cfg.scan_p_max = e.real()?,
                "scan_levels" => cfg.scan_levels = e.count()?,
                "scan_seeds_per_level" => cfg.scan_seeds_per_level = e.count()?,
                "circle_iterates_steps" => cfg.circle_iterates_steps = e.count()?,
                "circle_density" => cfg.circle_density = e.real()?,
                "periodic_q_max" => cfg.periodic_q_max = e.count()? as u32,
                "connect_m_plus_steps" => cfg.connect_m_plus_steps = e.count()?,
                "connect_m_minus_steps" => cfg.connect_m_minus_steps = e.count()?,
                "connect_random_seeds" => cfg.connect_random_seeds = e.count()?,
                "connect_refine_iters" => cfg.connect_refine_iters = e.count()?,
                "seed" => cfg.seed = e.count()? as u64,
                _ => return Err(e.error_at_key(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let [a, b] = self.direction;
        if PrimeDirection::new(a, b).is_err() {
            return Err(ConfigError::Invalid(format!("v not prime: ({a}, {b})")));
        }
        let positive = [
            ("truncation_r", self.truncation_r),
            ("truncation_margin", self.truncation_margin),
            ("integrator_tol", self.integrator_tol),
            ("map_tol", self.map_tol),
            ("conjugacy_y_max", self.conjugacy_y_max),
            ("circle_density", self.circle_density),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!("`{name}` must be > 0, got {v}")));
            }
        }
        if !(self.tube_p >= 0.0) {
            return Err(ConfigError::Invalid(format!("`tube_p` must be >= 0, got {}", self.tube_p)));
        }
        if !(self.scan_p_min < self.scan_p_max) {
            return Err(ConfigError::Invalid(format!("scan range [{}, {}] is degenerate", self.scan_p_min, self.scan_p_max)));
        }
        let counts = [
            ("factor_cap", self.factor_cap),
            ("factor_grid", self.factor_grid),
            ("scan_levels", self.scan_levels),
            ("scan_seeds_per_level", self.scan_seeds_per_level),
            ("circle_iterates_steps", self.circle_iterates_steps),
            ("periodic_q_max", self.periodic_q_max as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("`{name}` must be >= 1")));
            }
        }
        if self.factor_grid < 2 {
            return Err(ConfigError::Invalid("`factor_grid` must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    key_col: usize,
    value_col: usize,
}

impl Entry {
    fn error_at_key(&self, message: String) -> ConfigError {
        ConfigError::Parse {
            line: self.line,
            column: self.key_col,
            message,
        }
    }

    fn error(&self, message: String) -> ConfigError {
        ConfigError::Parse {
            line: self.line,
            column: self.value_col,
            message,
        }
    }

    fn real(&self) -> Result<f64, ConfigError> {
        match self.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("expected a finite real, found `{}`", self.value))),
        }
    }

    fn count(&self) -> Result<usize, ConfigError> {
        self.value
            .parse::<usize>()
            .map_err(|_| self.error(format!("expected a non-negative integer, found `{}`", self.value)))
    }

    fn pair(&self) -> Result<[i64; 2], ConfigError> {
        let parts: Vec<&str> = self.value.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [a, b] => match (a.parse(), b.parse()) {
                (Ok(a), Ok(b)) => Ok([a, b]),
                _ => Err(self.error(format!("expected two integers `a, b`, found `{}`", self.value))),
            },
            _ => Err(self.error(format!("expected two integers `a, b`, found `{}`", self.value))),
        }
    }
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let key_col = content.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1;
        let Some(eq) = content.find('=') else {
            return Err(ConfigError::Parse {
                line,
                column: key_col,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::Parse {
                line,
                column: key_col,
                message: format!("malformed key `{key}`"),
            });
        }
        let rest = &content[eq + 1..];
        let value = rest.trim();
        let value_col = eq + 2 + rest.find(|c: char| !c.is_whitespace()).unwrap_or(0);
        if value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                column: value_col,
                message: format!("missing value for `{key}`"),
            });
        }
        let entry = Entry {
            value: value.to_string(),
            line,
            key_col,
            value_col,
        };
        if entries.insert(key.to_string(), entry).is_some() {
            return Err(ConfigError::Parse {
                line,
                column: key_col,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(entries)
}
