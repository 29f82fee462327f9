//! Randers-plus-conformal Finsler metrics on the 2-torus,
//! `F(x, w) = e^{u(x)}‖w‖ + b(x)·w`, and their geodesic flow.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::fourier::{FieldJet, FourierField};
use crate::ode::{Dopri5, OdeSystem};

/// Velocities with Euclidean norm below this are rejected.
pub const MIN_SPEED: f64 = 1e-12;

/// Fourier data of a Randers metric. The flat metric is all-zero data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub conformal: FourierField,
    pub oneform: [FourierField; 2],
}

/// A point of the tangent bundle of the plane (lifted torus).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl TangentState {
    pub fn new(position: [f64; 2], velocity: [f64; 2]) -> Result<Self> {
        if velocity[0].hypot(velocity[1]) < MIN_SPEED {
            return Err(TwistError::InvalidInput("velocity must be nonzero".into()));
        }
        Ok(Self { position, velocity })
    }

    /// Checks the optional unit-speed flag `|F - 1| <= tol`.
    pub fn is_unit(&self, spec: &MetricSpec, tol: f64) -> bool {
        (spec.norm(self.position, self.velocity) - 1.0).abs() <= tol
    }
}

/// `F` together with its first and second derivatives at `(x, w)`.
///
/// `dxw[i][j]` is `∂²F/∂x_i∂w_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricJet {
    pub f: f64,
    pub dx: [f64; 2],
    pub dw: [f64; 2],
    pub dxx: [[f64; 2]; 2],
    pub dxw: [[f64; 2]; 2],
    pub dww: [[f64; 2]; 2],
}

impl MetricJet {
    /// Fundamental tensor `g = ∂²_{ww}(F²/2) = F_w F_wᵀ + F F_ww`.
    pub fn fundamental_tensor(&self) -> [[f64; 2]; 2] {
        let mut g = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = self.dw[i] * self.dw[j] + self.f * self.dww[i][j];
            }
        }
        g
    }
}

pub(crate) fn min_eig_sym(m: [[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    mean - half.hypot(0.5 * (m[0][1] + m[1][0]))
}

impl MetricSpec {
    pub fn flat() -> Self {
        Self::default()
    }

    /// `u(x) = eps·cos(2π x₂)`, no one-form.
    pub fn conformal_cos(eps: f64) -> Self {
        Self {
            conformal: FourierField::single([0, 1], eps, 0.0),
            ..Self::default()
        }
    }

    /// `u = ε·(cos 2πx₂ + cos 2π(x₂ − x₁))`. Along `v = e₁` this reduces to
    /// a genuinely time-dependent Lagrangian, with resonances at slopes 0
    /// and 1.
    pub fn conformal_two_mode(eps: f64) -> Self {
        let mut conformal = FourierField::single([0, 1], eps, 0.0);
        conformal.add([-1, 1], eps, 0.0);
        Self {
            conformal,
            ..Self::default()
        }
    }

    pub fn with_constant_oneform(mut self, b: [f64; 2]) -> Self {
        self.oneform = [FourierField::constant(b[0]), FourierField::constant(b[1])];
        self
    }

    pub fn is_reversible(&self) -> bool {
        self.oneform.iter().all(FourierField::is_zero)
    }

    pub fn norm(&self, x: [f64; 2], w: [f64; 2]) -> f64 {
        let n = w[0].hypot(w[1]);
        let mut f = self.conformal.value(x).exp() * n;
        if !self.is_reversible() {
            f += self.oneform[0].value(x) * w[0] + self.oneform[1].value(x) * w[1];
        }
        f
    }

    /// Unchecked jet; callers guarantee `w != 0`.
    pub fn jet_unchecked(&self, x: [f64; 2], w: [f64; 2]) -> MetricJet {
        let n = w[0].hypot(w[1]);
        let what = [w[0] / n, w[1] / n];
        let u = self.conformal.jet(x);
        let eu = u.value.exp();
        let b: [FieldJet; 2] = [self.oneform[0].jet(x), self.oneform[1].jet(x)];
        let mut jet = MetricJet {
            f: eu * n + b[0].value * w[0] + b[1].value * w[1],
            dx: [0.0; 2],
            dw: [0.0; 2],
            dxx: [[0.0; 2]; 2],
            dxw: [[0.0; 2]; 2],
            dww: [[0.0; 2]; 2],
        };
        for i in 0..2 {
            jet.dx[i] = eu * n * u.grad[i] + b[0].grad[i] * w[0] + b[1].grad[i] * w[1];
            jet.dw[i] = eu * what[i] + b[i].value;
            for j in 0..2 {
                jet.dxx[i][j] = eu * n * (u.grad[i] * u.grad[j] + u.hess[i][j])
                    + b[0].hess[i][j] * w[0]
                    + b[1].hess[i][j] * w[1];
                jet.dxw[i][j] = eu * u.grad[i] * what[j] + b[j].grad[i];
                let delta = if i == j { 1.0 } else { 0.0 };
                jet.dww[i][j] = eu * (delta - what[i] * what[j]) / n;
            }
        }
        jet
    }

    /// Parses the flat key-value format
    /// `u.<k1>.<k2>.cos|sin = <real>`, `b1.…`, `b2.…`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = MetricSpec::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let err = |column: usize, message: String| TwistError::Parse { line, column, message };
            let Some(eq) = content.find('=') else {
                return Err(err(1, "expected `key = value`".into()));
            };
            let key = content[..eq].trim();
            let key_col = content.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1;
            let value_str = content[eq + 1..].trim();
            let value_col = eq + 2 + content[eq + 1..].find(|c: char| !c.is_whitespace()).unwrap_or(0);
            let value: f64 = value_str
                .parse()
                .map_err(|_| err(value_col, format!("invalid number `{value_str}`")))?;
            if !value.is_finite() {
                return Err(err(value_col, "coefficient must be finite".into()));
            }
            let parts: Vec<&str> = key.split('.').collect();
            if parts.len() != 4 {
                return Err(err(key_col, format!("malformed key `{key}`")));
            }
            let field = match parts[0] {
                "u" => &mut spec.conformal,
                "b1" => &mut spec.oneform[0],
                "b2" => &mut spec.oneform[1],
                other => return Err(err(key_col, format!("unknown field `{other}`"))),
            };
            let k1: i32 = parts[1]
                .parse()
                .map_err(|_| err(key_col, format!("invalid wave number `{}`", parts[1])))?;
            let k2: i32 = parts[2]
                .parse()
                .map_err(|_| err(key_col, format!("invalid wave number `{}`", parts[2])))?;
            match parts[3] {
                "cos" => field.add([k1, k2], value, 0.0),
                "sin" => field.add([k1, k2], 0.0, value),
                other => return Err(err(key_col, format!("expected cos|sin, found `{other}`"))),
            }
            if !seen.insert(key.to_string()) {
                return Err(err(key_col, format!("duplicate key `{key}`")));
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TwistError::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form, sorted by field and wave number.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, field) in [("u", &self.conformal), ("b1", &self.oneform[0]), ("b2", &self.oneform[1])] {
            let mut terms = field.terms.clone();
            terms.sort_by_key(|t| t.k);
            for t in terms {
                if t.cos != 0.0 {
                    let _ = writeln!(out, "{name}.{}.{}.cos = {:?}", t.k[0], t.k[1], t.cos);
                }
                if t.sin != 0.0 {
                    let _ = writeln!(out, "{name}.{}.{}.sin = {:?}", t.k[0], t.k[1], t.sin);
                }
            }
        }
        out
    }
}

/// Evaluates `F` and its derivative blocks at a tangent state.
pub fn eval_metric(spec: &MetricSpec, state: &TangentState) -> Result<MetricJet> {
    let v = state.velocity;
    if !(v[0].hypot(v[1]) >= MIN_SPEED) {
        return Err(TwistError::InvalidInput("velocity must be nonzero".into()));
    }
    Ok(spec.jet_unchecked(state.position, v))
}

/// Sampling plan for [`convexity_audit`]: an `n_x × n_x` grid on the torus
/// times `n_dir` unit directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditGrid {
    pub n_x: usize,
    pub n_dir: usize,
    pub threshold: f64,
}

impl Default for AuditGrid {
    fn default() -> Self {
        Self {
            n_x: 32,
            n_dir: 32,
            threshold: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub min_eigenvalue: f64,
    pub argmin_position: [f64; 2],
    pub argmin_direction: [f64; 2],
    /// `1 - sup e^{-u}‖b‖`; positive is sufficient for strong convexity.
    pub randers_margin: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn convexity_audit(spec: &MetricSpec, grid: &AuditGrid) -> ConvexityReport {
    let n = grid.n_x.max(1);
    let nd = grid.n_dir.max(1);
    let rows: Vec<(f64, [f64; 2], [f64; 2], f64)> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let x = [(idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64];
            let b = [spec.oneform[0].value(x), spec.oneform[1].value(x)];
            let ratio = (-spec.conformal.value(x)).exp() * b[0].hypot(b[1]);
            let mut best = (f64::INFINITY, [1.0, 0.0]);
            for d in 0..nd {
                let ang = std::f64::consts::TAU * d as f64 / nd as f64;
                let w = [ang.cos(), ang.sin()];
                let e = min_eig_sym(spec.jet_unchecked(x, w).fundamental_tensor());
                if e < best.0 {
                    best = (e, w);
                }
            }
            (best.0, x, best.1, ratio)
        })
        .collect();
    let mut report = ConvexityReport {
        min_eigenvalue: f64::INFINITY,
        argmin_position: [0.0; 2],
        argmin_direction: [1.0, 0.0],
        randers_margin: 1.0,
        threshold: grid.threshold,
        pass: false,
    };
    let mut max_ratio: f64 = 0.0;
    for (e, x, w, ratio) in rows {
        if e < report.min_eigenvalue {
            report.min_eigenvalue = e;
            report.argmin_position = x;
            report.argmin_direction = w;
        }
        max_ratio = max_ratio.max(ratio);
    }
    report.randers_margin = 1.0 - max_ratio;
    report.pass = report.min_eigenvalue >= grid.threshold;
    report
}

/// Euler–Lagrange field of `F²/2` in position–velocity coordinates.
#[derive(Clone, Copy, Debug)]
pub struct GeodesicSystem<'a> {
    pub spec: &'a MetricSpec,
}

impl GeodesicSystem<'_> {
    pub fn acceleration(&self, x: [f64; 2], w: [f64; 2]) -> Result<[f64; 2]> {
        if !(w[0].hypot(w[1]) >= MIN_SPEED) {
            return Err(TwistError::InvalidInput("geodesic velocity collapsed".into()));
        }
        let jet = self.spec.jet_unchecked(x, w);
        let g = jet.fundamental_tensor();
        // rhs_i = F F_{x_i} - Σ_j (F_{x_j} F_{w_i} + F F_{x_j w_i}) w_j
        let mut rhs = [0.0; 2];
        for i in 0..2 {
            rhs[i] = jet.f * jet.dx[i];
            for j in 0..2 {
                rhs[i] -= (jet.dx[j] * jet.dw[i] + jet.f * jet.dxw[j][i]) * w[j];
            }
        }
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if !(det > 0.0) {
            return Err(TwistError::Audit(format!("fundamental tensor not positive at x = {x:?}, w = {w:?}")));
        }
        Ok([
            (g[1][1] * rhs[0] - g[0][1] * rhs[1]) / det,
            (g[0][0] * rhs[1] - g[1][0] * rhs[0]) / det,
        ])
    }
}

impl OdeSystem<4> for GeodesicSystem<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 4]) -> Result<[f64; 4]> {
        let a = self.acceleration([y[0], y[1]], [y[2], y[3]])?;
        Ok([y[2], y[3], a[0], a[1]])
    }
}

/// A sampled geodesic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TangentState>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TangentState> {
        self.states.last()
    }

    /// CSV with columns `t,x1,x2,w1,w2,F`.
    pub fn to_csv(&self, spec: &MetricSpec) -> String {
        let mut out = String::from("t,x1,x2,w1,w2,F\n");
        for (t, s) in self.times.iter().zip(&self.states) {
            let f = spec.norm(s.position, s.velocity);
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                t, s.position[0], s.position[1], s.velocity[0], s.velocity[1], f
            );
        }
        out
    }
}

/// Integrates the geodesic flow for `duration` (negative runs backwards),
/// returning `samples + 1` equally spaced states including the start.
pub fn geodesic_flow(spec: &MetricSpec, start: &TangentState, duration: f64, tol: f64, samples: usize) -> Result<Trajectory> {
    let jet = eval_metric(spec, start)?;
    let unit_tol = 1e-6;
    if (jet.f - 1.0).abs() > unit_tol {
        return Err(TwistError::InvalidInput(format!("start is not unit speed (F = {})", jet.f)));
    }
    if min_eig_sym(jet.fundamental_tensor()) <= 0.0 {
        return Err(TwistError::Audit("metric is not strongly convex at the start state".into()));
    }
    let samples = samples.max(1);
    let times: Vec<f64> = (1..=samples).map(|k| duration * k as f64 / samples as f64).collect();
    let sys = GeodesicSystem { spec };
    let y0 = [start.position[0], start.position[1], start.velocity[0], start.velocity[1]];
    let ys = Dopri5::new(tol).integrate_at(&sys, 0.0, y0, &times)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(samples + 1),
        states: Vec::with_capacity(samples + 1),
    };
    traj.times.push(0.0);
    traj.states.push(*start);
    for (t, y) in times.into_iter().zip(ys) {
        traj.times.push(t);
        traj.states.push(TangentState {
            position: [y[0], y[1]],
            velocity: [y[2], y[3]],
        });
    }
    Ok(traj)
}

/// Translates the base point by an integer vector.
pub fn deck_shift(state: &TangentState, z: [i64; 2]) -> TangentState {
    TangentState {
        position: [state.position[0] + z[0] as f64, state.position[1] + z[1] as f64],
        velocity: state.velocity,
    }
}

/// Rescales a nonzero velocity to unit `F`.
pub fn normalize(spec: &MetricSpec, position: [f64; 2], velocity: [f64; 2]) -> Result<TangentState> {
    let s = TangentState::new(position, velocity)?;
    let f = spec.norm(position, velocity);
    if !(f > 0.0) {
        return Err(TwistError::Audit(format!("F(x, w) = {f} is not positive")));
    }
    Ok(TangentState {
        position,
        velocity: [s.velocity[0] / f, s.velocity[1] / f],
    })
}
