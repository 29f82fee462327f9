//! Reduction of graph-like geodesics to a time-periodic Lagrangian on the
//! circle.
//!
//! For a prime direction `v`, curves `γ(t) = t·v + θ(t)·v⊥` are geodesics
//! exactly when `θ` solves the Euler–Lagrange equation of
//! `L(t, x, r) = F(t·v + x·v⊥, v + r·v⊥)`. [`TruncatedLagrangian`] replaces
//! `L` far out in `r` by the quadratic `D·r²/2` so the flow is complete.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::metric::{normalize, GeodesicSystem, MetricSpec, TangentState, Trajectory};
use crate::ode::{Dopri5, Flow, OdeSystem};
use crate::quad;

/// A primitive lattice vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimeDirection {
    v: [i64; 2],
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl PrimeDirection {
    pub fn new(v1: i64, v2: i64) -> Result<Self> {
        if (v1, v2) == (0, 0) || gcd(v1, v2) != 1 {
            return Err(TwistError::InvalidInput(format!("v = ({v1},{v2}) not prime")));
        }
        Ok(Self { v: [v1, v2] })
    }

    pub fn e1() -> Self {
        Self { v: [1, 0] }
    }

    pub fn components(&self) -> [i64; 2] {
        self.v
    }

    pub fn v(&self) -> [f64; 2] {
        [self.v[0] as f64, self.v[1] as f64]
    }

    /// `v⊥ = (−v₂, v₁)`.
    pub fn perp(&self) -> [f64; 2] {
        [-self.v[1] as f64, self.v[0] as f64]
    }

    pub fn perp_int(&self) -> [i64; 2] {
        [-self.v[1], self.v[0]]
    }

    pub fn norm2(&self) -> f64 {
        (self.v[0] * self.v[0] + self.v[1] * self.v[1]) as f64
    }

    /// Position `t·v + x·v⊥`.
    pub fn point(&self, t: f64, x: f64) -> [f64; 2] {
        let (v, p) = (self.v(), self.perp());
        [t * v[0] + x * p[0], t * v[1] + x * p[1]]
    }

    /// Velocity `v + r·v⊥`.
    pub fn velocity(&self, r: f64) -> [f64; 2] {
        self.point(1.0, r)
    }

    /// Coordinates `(⟨x,v⟩, ⟨x,v⊥⟩) / ‖v‖²`.
    pub fn coords(&self, x: [f64; 2]) -> (f64, f64) {
        let (v, p) = (self.v(), self.perp());
        let n2 = self.norm2();
        ((x[0] * v[0] + x[1] * v[1]) / n2, (x[0] * p[0] + x[1] * p[1]) / n2)
    }
}

/// Value and derivatives of a time-dependent Lagrangian `L(t, x, r)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LagJet {
    pub l: f64,
    pub lt: f64,
    pub lx: f64,
    pub lr: f64,
    pub lxx: f64,
    pub lxr: f64,
    pub lrr: f64,
    pub lrt: f64,
}

/// Common interface of the reduced and truncated Lagrangians.
pub trait Lagrangian: Sync {
    fn jet(&self, t: f64, x: f64, r: f64) -> LagJet;

    fn value(&self, t: f64, x: f64, r: f64) -> f64 {
        self.jet(t, x, r).l
    }

    /// `θ''` from the Euler–Lagrange equation `d/dt ∂_r L = ∂_x L`.
    fn acceleration(&self, t: f64, x: f64, r: f64) -> f64 {
        let j = self.jet(t, x, r);
        (j.lx - j.lrt - j.lxr * r) / j.lrr
    }

    /// Residual `d/dt ∂_r L − ∂_x L` along a curve with the given 2-jet.
    fn el_residual(&self, t: f64, theta: f64, dtheta: f64, ddtheta: f64) -> f64 {
        let j = self.jet(t, theta, dtheta);
        j.lrt + j.lxr * dtheta + j.lrr * ddtheta - j.lx
    }
}

/// `L(t, x, r) = F(t·v + x·v⊥, v + r·v⊥)`.
#[derive(Clone, Debug)]
pub struct ReducedLagrangian {
    pub metric: Arc<MetricSpec>,
    pub direction: PrimeDirection,
}

pub fn build_reduced(spec: Arc<MetricSpec>, v: PrimeDirection) -> ReducedLagrangian {
    ReducedLagrangian {
        metric: spec,
        direction: v,
    }
}

impl Lagrangian for ReducedLagrangian {
    fn jet(&self, t: f64, x: f64, r: f64) -> LagJet {
        let d = &self.direction;
        let (v, p) = (d.v(), d.perp());
        let m = self.metric.jet_unchecked(d.point(t, x), d.velocity(r));
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let quad = |m: &[[f64; 2]; 2], a: [f64; 2], b: [f64; 2]| {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += a[i] * m[i][j] * b[j];
                }
            }
            s
        };
        LagJet {
            l: m.f,
            lt: dot(m.dx, v),
            lx: dot(m.dx, p),
            lr: dot(m.dw, p),
            lxx: quad(&m.dxx, p, p),
            lxr: quad(&m.dxw, p, p),
            lrr: quad(&m.dww, p, p),
            lrt: quad(&m.dxw, v, p),
        }
    }
}

impl ReducedLagrangian {
    /// Minimum of `∂_rr L` over an `n×n` grid in `(t, x)` and `n_r` values of
    /// `r ∈ [−r_max, r_max]`, with its argmin `(t, x, r)`.
    pub fn min_convexity(&self, r_max: f64, n: usize, n_r: usize) -> (f64, [f64; 3]) {
        sample_lrr(self, r_max, n, n_r).0
    }
}

fn sample_lrr<L: Lagrangian>(lag: &L, r_max: f64, n: usize, n_r: usize) -> ((f64, [f64; 3]), (f64, [f64; 3])) {
    let n = n.max(1);
    let n_r = n_r.max(2);
    (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let t = (idx / n) as f64 / n as f64;
            let x = (idx % n) as f64 / n as f64;
            let mut lo = (f64::INFINITY, [0.0; 3]);
            let mut hi = (f64::NEG_INFINITY, [0.0; 3]);
            for k in 0..n_r {
                let r = -r_max + 2.0 * r_max * k as f64 / (n_r - 1) as f64;
                let v = lag.jet(t, x, r).lrr;
                if v < lo.0 {
                    lo = (v, [t, x, r]);
                }
                if v > hi.0 {
                    hi = (v, [t, x, r]);
                }
            }
            (lo, hi)
        })
        .reduce(
            || ((f64::INFINITY, [0.0; 3]), (f64::NEG_INFINITY, [0.0; 3])),
            |a, b| {
                let lo = if b.0 .0 < a.0 .0 { b.0 } else { a.0 };
                let hi = if b.1 .0 > a.1 .0 { b.1 } else { a.1 };
                (lo, hi)
            },
        )
}

const PSI_C: f64 = 35.0 / 16.0;

/// C⁴ smoothing of `|s|`, exact outside `[−1, 1]`, convex inside.
fn psi(s: f64) -> (f64, f64, f64) {
    if s >= 1.0 {
        return (s, 1.0, 0.0);
    }
    if s <= -1.0 {
        return (-s, -1.0, 0.0);
    }
    let s2 = s * s;
    let v = PSI_C * s2 * (0.5 - s2 * (0.25 - s2 * (0.1 - s2 / 56.0))) + 35.0 / 128.0;
    let d1 = PSI_C * s * (1.0 - s2 * (1.0 - s2 * (0.6 - s2 / 7.0)));
    let one = 1.0 - s2;
    let d2 = PSI_C * one * one * one;
    (v, d1, d2)
}

/// Sampling plan for the truncation audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationGrid {
    /// Grid points per unit in `t` and in `x`.
    pub n_tx: usize,
    /// Points in `r` across the audited range.
    pub n_r: usize,
}

impl Default for TruncationGrid {
    fn default() -> Self {
        Self { n_tx: 16, n_r: 241 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationAudit {
    pub min_lrr: f64,
    pub max_lrr: f64,
    pub argmin: [f64; 3],
    /// `C` with `1/C ≤ ∂_rr L_R ≤ C` on the sampled grid.
    pub c_bound: f64,
    pub r_range: f64,
}

/// `L_R`: equal to `L` for `|r| ≤ R`, equal to `D·r²/2` for `|r| ≥ R_out`,
/// strictly convex everywhere.
///
/// The two pieces are joined by a smoothed maximum
/// `(L + Q)/2 + δ·ψ((L − Q)/δ)/2` with `Q = D·r²/2`; the effective blend
/// weight on `L` is [`TruncatedLagrangian::blend_weight`].
#[derive(Clone, Debug)]
pub struct TruncatedLagrangian {
    pub inner: ReducedLagrangian,
    pub r_cut: f64,
    pub r_out: f64,
    pub d: f64,
    pub delta: f64,
    pub audit: TruncationAudit,
}

pub fn truncate(lag: ReducedLagrangian, r_cut: f64, margin: f64) -> Result<TruncatedLagrangian> {
    truncate_with(lag, r_cut, margin, &TruncationGrid::default())
}

pub fn truncate_with(lag: ReducedLagrangian, r_cut: f64, margin: f64, grid: &TruncationGrid) -> Result<TruncatedLagrangian> {
    if !(r_cut > 0.0) || !(margin > 0.0) {
        return Err(TwistError::InvalidInput("truncation needs R > 0 and margin > 0".into()));
    }
    let r_out = r_cut + margin;
    let n = grid.n_tx.max(2);
    let n_r = grid.n_r.max(8);
    let txs: Vec<(f64, f64)> = (0..n * n).map(|i| ((i / n) as f64 / n as f64, (i % n) as f64 / n as f64)).collect();
    let inner_rs: Vec<f64> = (0..=n_r).map(|k| r_cut * k as f64 / n_r as f64).collect();
    let outer_rs: Vec<f64> = (0..=n_r).map(|k| r_out + 3.0 * r_out * k as f64 / n_r as f64).collect();

    // Feasible D: L − Dr²/2 > 0 inside, < 0 outside.
    let bounds = |rs: &[f64], use_min: bool| -> f64 {
        txs.par_iter()
            .map(|&(t, x)| {
                let mut acc = if use_min { f64::INFINITY } else { f64::NEG_INFINITY };
                for &r in rs.iter().filter(|r| **r > 0.0) {
                    for s in [r, -r] {
                        let q = 2.0 * lag.value(t, x, s) / (s * s);
                        acc = if use_min { acc.min(q) } else { acc.max(q) };
                    }
                }
                acc
            })
            .reduce(
                || if use_min { f64::INFINITY } else { f64::NEG_INFINITY },
                |a, b| if use_min { a.min(b) } else { a.max(b) },
            )
    };
    let hi = bounds(&inner_rs[n_r / 4..], true);
    let lo = bounds(&outer_rs, false);
    if !(lo > 0.0) || !(hi > lo * (1.0 + 1e-9)) {
        return Err(TwistError::Audit(format!(
            "no quadratic tail separates L on |r| <= {r_cut} from |r| >= {r_out} \
             (need max 2L/r^2 outside = {lo:.4} < min inside = {hi:.4}); increase the margin"
        )));
    }
    let d = (hi * lo).sqrt();
    let gap = |rs: &[f64], sign: f64| -> f64 {
        txs.par_iter()
            .map(|&(t, x)| {
                rs.iter()
                    .flat_map(|&r| [r, -r])
                    .map(|r| sign * (lag.value(t, x, r) - 0.5 * d * r * r))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min)
    };
    let delta = 0.5 * gap(&inner_rs, 1.0).min(gap(&outer_rs, -1.0));
    if !(delta > 0.0) {
        return Err(TwistError::Audit("blend width collapsed; increase the margin".into()));
    }
    let mut out = TruncatedLagrangian {
        inner: lag,
        r_cut,
        r_out,
        d,
        delta,
        audit: TruncationAudit {
            min_lrr: 0.0,
            max_lrr: 0.0,
            argmin: [0.0; 3],
            c_bound: 0.0,
            r_range: r_out + 1.0,
        },
    };
    let ((min, argmin), (max, _)) = sample_lrr(&out, r_out + 1.0, n, 4 * n_r + 1);
    if !(min > 0.0) {
        return Err(TwistError::Audit(format!(
            "d_rr L_R = {min:e} <= 0 at (t, x, r) = {argmin:?}; increase D or the margin"
        )));
    }
    // Exactness of both regions on the sample grid.
    for &(t, x) in &txs {
        for k in 0..=n_r {
            let s = k as f64 / n_r as f64;
            for r in [r_cut * s, -r_cut * s] {
                if out.blend_weight(t, x, r) != 1.0 {
                    return Err(TwistError::Audit(format!("L_R differs from L at (t, x, r) = ({t}, {x}, {r})")));
                }
            }
            for r in [r_out + s, -r_out - s] {
                if out.blend_weight(t, x, r) != 0.0 {
                    return Err(TwistError::Audit(format!("L_R tail not exact at (t, x, r) = ({t}, {x}, {r})")));
                }
            }
        }
    }
    out.audit.min_lrr = min;
    out.audit.max_lrr = max;
    out.audit.argmin = argmin;
    out.audit.c_bound = max.max(1.0 / min);
    Ok(out)
}

impl TruncatedLagrangian {
    pub fn direction(&self) -> PrimeDirection {
        self.inner.direction
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.inner.metric
    }

    /// Weight on `L` in the blend: 1 where `L_R = L`, 0 where `L_R = D·r²/2`.
    pub fn blend_weight(&self, t: f64, x: f64, r: f64) -> f64 {
        let z = self.inner.value(t, x, r) - 0.5 * self.d * r * r;
        if z >= self.delta {
            1.0
        } else if z <= -self.delta {
            0.0
        } else {
            0.5 * (1.0 + psi(z / self.delta).1)
        }
    }

    pub fn in_tail(&self, t: f64, x: f64, r: f64) -> bool {
        self.blend_weight(t, x, r) == 0.0
    }
}

impl Lagrangian for TruncatedLagrangian {
    fn jet(&self, t: f64, x: f64, r: f64) -> LagJet {
        let d = self.d;
        let q = 0.5 * d * r * r;
        let tail = LagJet {
            l: q,
            lr: d * r,
            lrr: d,
            ..LagJet::default()
        };
        // Far out the inner Lagrangian is not needed at all.
        if r.abs() > 4.0 * self.r_out {
            return tail;
        }
        let j = self.inner.jet(t, x, r);
        let z = j.l - q;
        if z >= self.delta {
            return j;
        }
        if z <= -self.delta {
            return tail;
        }
        let (p, p1, p2) = psi(z / self.delta);
        let w1 = 0.5 * (1.0 + p1);
        let w2 = 1.0 - w1;
        let kappa = p2 / (2.0 * self.delta);
        let zr = j.lr - d * r;
        LagJet {
            l: 0.5 * (j.l + q) + 0.5 * self.delta * p,
            lt: w1 * j.lt,
            lx: w1 * j.lx,
            lr: w1 * j.lr + w2 * d * r,
            lxx: w1 * j.lxx + kappa * j.lx * j.lx,
            lxr: w1 * j.lxr + kappa * j.lx * zr,
            lrr: w1 * j.lrr + w2 * d + kappa * zr * zr,
            lrt: w1 * j.lrt + kappa * j.lt * zr,
        }
    }
}

/// Euler–Lagrange field on the cylinder, state `(x, r)`.
pub struct ElSystem<'a, L: Lagrangian> {
    pub lag: &'a L,
}

impl<L: Lagrangian> OdeSystem<2> for ElSystem<'_, L> {
    fn rhs(&self, t: f64, y: &[f64; 2]) -> Result<[f64; 2]> {
        Ok([y[1], self.lag.acceleration(t, y[0], y[1])])
    }
}

/// A sampled Euler–Lagrange solution on the cylinder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CylinderOrbit {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    /// Largest `|r|` seen at any accepted step.
    pub max_abs_r: f64,
}

impl CylinderOrbit {
    pub fn end(&self) -> (f64, f64) {
        (*self.x.last().expect("nonempty"), *self.r.last().expect("nonempty"))
    }

    /// CSV with columns `t,x,r`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,r\n");
        for i in 0..self.times.len() {
            let _ = writeln!(out, "{:?},{:?},{:?}", self.times[i], self.x[i], self.r[i]);
        }
        out
    }

    /// Errors if the orbit left `|r| ≤ R`, where `L_R ≠ L`.
    pub fn check_within(&self, r_cut: f64) -> Result<()> {
        if self.max_abs_r > r_cut {
            return Err(TwistError::TubeEscape(format!("|r| reached {} > R = {r_cut}", self.max_abs_r)));
        }
        Ok(())
    }

    pub fn graph_curve(&self, direction: PrimeDirection) -> GraphCurve {
        GraphCurve {
            direction,
            t: self.times.clone(),
            theta: self.x.clone(),
            dtheta: self.r.clone(),
        }
    }
}

/// Integrates the Euler–Lagrange flow of `lag` from `(x, r)` at `t0` to
/// `t1`, sampling `samples + 1` equally spaced times.
pub fn el_flow<L: Lagrangian>(lag: &L, state: (f64, f64), t0: f64, t1: f64, tol: f64, samples: usize) -> Result<CylinderOrbit> {
    let samples = samples.max(1);
    let sys = ElSystem { lag };
    let solver = Dopri5::new(tol);
    let mut orbit = CylinderOrbit {
        times: vec![t0],
        x: vec![state.0],
        r: vec![state.1],
        max_abs_r: state.1.abs(),
    };
    let mut y = [state.0, state.1];
    let mut t = t0;
    for k in 1..=samples {
        let tk = t0 + (t1 - t0) * k as f64 / samples as f64;
        let mut max_r = orbit.max_abs_r;
        y = solver
            .integrate_with(&sys, t, y, tk, |seg| {
                max_r = max_r.max(seg.y1[1].abs());
                Ok(Flow::Continue)
            })?
            .y;
        orbit.max_abs_r = max_r;
        t = tk;
        orbit.times.push(tk);
        orbit.x.push(y[0]);
        orbit.r.push(y[1]);
    }
    Ok(orbit)
}

/// Time-`s → t` map of the Euler–Lagrange flow.
pub fn el_map<L: Lagrangian>(lag: &L, s: f64, t: f64, point: (f64, f64), tol: f64) -> Result<(f64, f64)> {
    let y = Dopri5::new(tol).integrate(&ElSystem { lag }, s, [point.0, point.1], t)?;
    Ok((y[0], y[1]))
}

/// Anything that yields `(θ(t), θ'(t))`.
pub trait CurveProfile {
    fn eval(&self, t: f64) -> (f64, f64);
}

impl<F: Fn(f64) -> (f64, f64)> CurveProfile for F {
    fn eval(&self, t: f64) -> (f64, f64) {
        self(t)
    }
}

/// Samples of `θ` and `θ'` for the curve `γ(t) = t·v + θ(t)·v⊥`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphCurve {
    pub direction: PrimeDirection,
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl CurveProfile for GraphCurve {
    /// Cubic Hermite interpolation; the returned slope is the interpolant's
    /// own derivative.
    fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.t.len();
        let i = match self.t.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => return (self.theta[i], self.dtheta[i]),
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1, m0, m1) = (self.theta[i], self.theta[i + 1], self.dtheta[i] * h, self.dtheta[i + 1] * h);
        let val = (2.0 * s * s * s - 3.0 * s * s + 1.0) * y0
            + (s * s * s - 2.0 * s * s + s) * m0
            + (-2.0 * s * s * s + 3.0 * s * s) * y1
            + (s * s * s - s * s) * m1;
        let der = ((6.0 * s * s - 6.0 * s) * y0 + (3.0 * s * s - 4.0 * s + 1.0) * m0 + (-6.0 * s * s + 6.0 * s) * y1 + (3.0 * s * s - 2.0 * s) * m1) / h;
        (val, der)
    }
}

/// Maps a graph curve to its geodesic: positions `γ(t)` and unit tangents
/// `γ̇/F(γ, γ̇)`, indexed by the graph parameter `t`.
pub fn graph_to_geodesic(spec: &MetricSpec, curve: &GraphCurve) -> Result<Trajectory> {
    let d = curve.direction;
    let mut traj = Trajectory::default();
    for i in 0..curve.t.len() {
        let x = d.point(curve.t[i], curve.theta[i]);
        let w = d.velocity(curve.dtheta[i]);
        traj.times.push(curve.t[i]);
        traj.states.push(normalize(spec, x, w)?);
    }
    Ok(traj)
}

/// Inverse of [`graph_to_geodesic`]; `slope_bound` is `R`.
pub fn geodesic_to_graph(traj: &Trajectory, direction: PrimeDirection, slope_bound: f64) -> Result<GraphCurve> {
    let (v, p) = (direction.v(), direction.perp());
    let mut curve = GraphCurve {
        direction,
        t: Vec::with_capacity(traj.states.len()),
        theta: Vec::with_capacity(traj.states.len()),
        dtheta: Vec::with_capacity(traj.states.len()),
    };
    for (time, s) in traj.times.iter().zip(&traj.states) {
        let (t, theta) = direction.coords(s.position);
        let wv = s.velocity[0] * v[0] + s.velocity[1] * v[1];
        if !(wv > 0.0) {
            return Err(TwistError::NotAGraph {
                t: *time,
                reason: format!("<w, v> = {wv} <= 0"),
            });
        }
        let slope = (s.velocity[0] * p[0] + s.velocity[1] * p[1]) / wv;
        if slope.abs() >= slope_bound {
            return Err(TwistError::NotAGraph {
                t: *time,
                reason: format!("slope {slope} violates |theta'| < {slope_bound}"),
            });
        }
        if let Some(&prev) = curve.t.last() {
            if !(t > prev) {
                return Err(TwistError::NotAGraph {
                    t: *time,
                    reason: "projection onto v is not increasing".into(),
                });
            }
        }
        curve.t.push(t);
        curve.theta.push(theta);
        curve.dtheta.push(slope);
    }
    Ok(curve)
}

/// Residual of the geodesic equation `d/dt ∂_w F − ∂_x F` for a curve with
/// position, velocity and acceleration given (any parametrization).
pub fn geodesic_residual(spec: &MetricSpec, x: [f64; 2], xdot: [f64; 2], xddot: [f64; 2]) -> [f64; 2] {
    let j = spec.jet_unchecked(x, xdot);
    let mut res = [0.0; 2];
    for i in 0..2 {
        res[i] = -j.dx[i];
        for k in 0..2 {
            res[i] += j.dxw[k][i] * xdot[k] + j.dww[i][k] * xddot[k];
        }
    }
    res
}

/// Geodesic residual of `γ(t) = t·v + θ(t)·v⊥` given the 2-jet of `θ`.
pub fn graph_geodesic_residual(spec: &MetricSpec, direction: PrimeDirection, t: f64, theta: f64, dtheta: f64, ddtheta: f64) -> f64 {
    let p = direction.perp();
    let r = geodesic_residual(spec, direction.point(t, theta), direction.velocity(dtheta), [ddtheta * p[0], ddtheta * p[1]]);
    r[0].hypot(r[1])
}

/// `(t, θ, θ', θ'')` of the graph reparametrization through a unit-speed
/// geodesic state, with `θ''` taken from the geodesic acceleration.
pub fn graph_jet_from_geodesic(spec: &MetricSpec, direction: PrimeDirection, state: &TangentState) -> Result<(f64, f64, f64, f64)> {
    let (v, p) = (direction.v(), direction.perp());
    let w = state.velocity;
    let a = GeodesicSystem { spec }.acceleration(state.position, w)?;
    let (t, theta) = direction.coords(state.position);
    let wv = w[0] * v[0] + w[1] * v[1];
    if !(wv > 0.0) {
        return Err(TwistError::NotAGraph {
            t,
            reason: format!("<w, v> = {wv} <= 0"),
        });
    }
    let wp = w[0] * p[0] + w[1] * p[1];
    let av = a[0] * v[0] + a[1] * v[1];
    let ap = a[0] * p[0] + a[1] * p[1];
    let slope = wp / wv;
    let dslope_ds = (ap * wv - wp * av) / (wv * wv);
    let dt_ds = wv / direction.norm2();
    Ok((t, theta, slope, dslope_ds / dt_ds))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionLength {
    pub action: f64,
    pub length: f64,
    pub gap: f64,
}

/// Compares `∫ L(t, θ, θ') dt` with the Finsler length of `γ` on `[a, b]`,
/// using two different quadrature rules.
pub fn action_length_check<C: CurveProfile + ?Sized>(lag: &ReducedLagrangian, theta: &C, a: f64, b: f64) -> Result<ActionLength> {
    if !(a < b) {
        return Err(TwistError::InvalidInput("action_length_check needs a < b".into()));
    }
    let action = quad::gauss_kronrod(
        |t| {
            let (th, dth) = theta.eval(t);
            lag.value(t, th, dth)
        },
        a,
        b,
        1e-14,
    );
    let d = lag.direction;
    let spec = &lag.metric;
    let length = quad::simpson(
        |t| {
            let (th, dth) = theta.eval(t);
            spec.norm(d.point(t, th), d.velocity(dth))
        },
        a,
        b,
        1e-14,
    );
    Ok(ActionLength {
        action,
        length,
        gap: (action - length).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: PrimeDirection) -> ReducedLagrangian {
        build_reduced(Arc::new(MetricSpec::flat()), v)
    }

    #[test]
    fn prime_direction_validation() {
        assert!(PrimeDirection::new(2, 2).is_err());
        assert!(PrimeDirection::new(0, 0).is_err());
        assert!(PrimeDirection::new(0, 3).is_err());
        let d = PrimeDirection::new(2, -1).unwrap();
        assert_eq!(d.perp(), [1.0, 2.0]);
        assert_eq!(d.norm2(), 5.0);
        assert!(PrimeDirection::new(-1, 0).is_ok());
    }

    #[test]
    fn flat_reduced_lagrangian_closed_form() {
        for v in [(1, 0), (1, 1), (2, 1), (-3, 2)] {
            let d = PrimeDirection::new(v.0, v.1).unwrap();
            let lag = flat(d);
            for &(t, x, r) in &[(0.1f64, 0.3f64, 0.0f64), (0.7, -2.1, 1.5), (3.2, 0.4, -0.8)] {
                let expect = d.norm2().sqrt() * (1.0 + r * r).sqrt();
                assert!((lag.value(t, x, r) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn e1_reduction_is_pointwise_metric() {
        let spec = Arc::new(MetricSpec::conformal_cos(0.2).with_constant_oneform([0.1, -0.05]));
        let lag = build_reduced(spec.clone(), PrimeDirection::e1());
        for &(t, x, r) in &[(0.2, 0.3, 0.5), (0.9, -0.4, -1.1)] {
            assert!((lag.value(t, x, r) - spec.norm([t, x], [1.0, r])).abs() < 1e-14);
        }
    }

    #[test]
    fn conformal_reduction_matches_substitution() {
        let eps = 0.05;
        let lag = build_reduced(Arc::new(MetricSpec::conformal_cos(eps)), PrimeDirection::e1());
        for &(t, x, r) in &[(0.2f64, 0.3f64, 0.5f64), (0.9, -0.4, -1.1)] {
            let expect = (eps * (std::f64::consts::TAU * x).cos()).exp() * (1.0 + r * r).sqrt();
            assert!((lag.value(t, x, r) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn truncation_regions_flat() {
        let lt = truncate(flat(PrimeDirection::e1()), 2.0, 1.0).unwrap();
        for r in [-2.0, -1.0, 0.0, 0.5, 2.0] {
            assert_eq!(lt.value(0.3, 0.1, r), lt.inner.value(0.3, 0.1, r));
        }
        let r = lt.r_out + 1.0;
        assert_eq!(lt.value(0.3, 0.1, r), 0.5 * lt.d * r * r);
        assert_eq!(lt.value(0.3, 0.1, -r), 0.5 * lt.d * r * r);
        assert!(lt.audit.min_lrr > 0.0);
        assert!(lt.audit.c_bound >= 1.0 / lt.audit.min_lrr);
    }

    #[test]
    fn truncation_rejects_tiny_margin() {
        let spec = Arc::new(MetricSpec::conformal_cos(0.5));
        let err = truncate(build_reduced(spec, PrimeDirection::e1()), 2.0, 0.05).unwrap_err();
        assert!(matches!(err, TwistError::Audit(_)));
    }

    #[test]
    fn truncated_jet_matches_finite_differences_in_blend() {
        let spec = Arc::new(MetricSpec::conformal_cos(0.1));
        let lt = truncate(build_reduced(spec, PrimeDirection::e1()), 2.0, 1.5).unwrap();
        let h = 1e-5;
        for k in 0..40 {
            let r = 1.9 + 1.8 * k as f64 / 39.0;
            let (t, x) = (0.3, 0.17);
            let j = lt.jet(t, x, r);
            let fd_r = (lt.value(t, x, r + h) - lt.value(t, x, r - h)) / (2.0 * h);
            let fd_x = (lt.value(t, x + h, r) - lt.value(t, x - h, r)) / (2.0 * h);
            let fd_rr = (lt.jet(t, x, r + h).lr - lt.jet(t, x, r - h).lr) / (2.0 * h);
            let fd_xr = (lt.jet(t, x + h, r).lr - lt.jet(t, x - h, r).lr) / (2.0 * h);
            let fd_xx = (lt.jet(t, x + h, r).lx - lt.jet(t, x - h, r).lx) / (2.0 * h);
            assert!((j.lr - fd_r).abs() < 1e-7, "r={r}");
            assert!((j.lx - fd_x).abs() < 1e-7);
            assert!((j.lrr - fd_rr).abs() < 1e-5, "r={r} {} {}", j.lrr, fd_rr);
            assert!((j.lxr - fd_xr).abs() < 1e-5);
            assert!((j.lxx - fd_xx).abs() < 1e-5);
        }
    }

    #[test]
    fn flat_el_flow_is_linear_and_tail_straight() {
        let lt = truncate(flat(PrimeDirection::e1()), 2.0, 1.0).unwrap();
        let o = el_flow(&lt, (0.3, 0.7), 0.0, 2.0, 1e-10, 4).unwrap();
        assert!((o.end().0 - (0.3 + 1.4)).abs() < 1e-12);
        assert!((o.end().1 - 0.7).abs() < 1e-12);
        let r0 = lt.r_out + 0.5;
        let o = el_flow(&lt, (0.0, r0), 0.0, 1.0, 1e-10, 1).unwrap();
        assert!((o.end().0 - r0).abs() < 1e-12);
        assert!(o.check_within(2.0).is_err());
    }

    #[test]
    fn graph_geodesic_round_trip() {
        let spec = MetricSpec::flat();
        let d = PrimeDirection::e1();
        let curve = GraphCurve {
            direction: d,
            t: vec![0.0, 0.5, 1.0],
            theta: vec![0.1, 0.25, 0.4],
            dtheta: vec![0.3, 0.3, 0.3],
        };
        let traj = graph_to_geodesic(&spec, &curve).unwrap();
        assert_eq!(traj.states[0].position, [0.0, 0.1]);
        let w = traj.states[0].velocity;
        assert!((w[1] / w[0] - 0.3).abs() < 1e-15);
        let back = geodesic_to_graph(&traj, d, 2.0).unwrap();
        for i in 0..3 {
            assert!((back.theta[i] - curve.theta[i]).abs() < 1e-12);
            assert!((back.dtheta[i] - curve.dtheta[i]).abs() < 1e-12);
        }
        match geodesic_to_graph(&traj, d, 0.2) {
            Err(TwistError::NotAGraph { t, .. }) => assert_eq!(t, 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_action_length_examples() {
        let lag = flat(PrimeDirection::e1());
        let r = action_length_check(&lag, &|_t: f64| (0.0, 0.0), 0.0, 1.0).unwrap();
        assert!((r.action - 1.0).abs() < 1e-14 && (r.length - 1.0).abs() < 1e-14 && r.gap < 1e-14);
        let r = action_length_check(&lag, &|t: f64| (t, 1.0), 0.0, 1.0).unwrap();
        assert!((r.action - 2f64.sqrt()).abs() < 1e-14);
        assert!((r.length - 2f64.sqrt()).abs() < 1e-14);
        assert!(action_length_check(&lag, &|t: f64| (t, 1.0), 1.0, 0.0).is_err());
    }
}
