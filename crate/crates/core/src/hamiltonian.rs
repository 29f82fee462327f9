//! Legendre transform of the truncated Lagrangian, its Hamiltonian, time
//! maps on the cylinder, and the splitting of the time-1 map into positive
//! twist maps.

use std::cell::Cell;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::ode::{Dopri5, Flow, OdeSystem};
use crate::reduction::{el_map, LagJet, Lagrangian, TruncatedLagrangian};

const LEGENDRE_RESIDUAL: f64 = 1e-12;
const LEGENDRE_MAX_ITER: usize = 200;

/// `(x, r) ↦ (x, ∂_r L_R(t, x, r))`.
pub fn legendre(lag: &TruncatedLagrangian, t: f64, point: (f64, f64)) -> (f64, f64) {
    (point.0, lag.jet(t, point.0, point.1).lr)
}

/// Inverse of [`legendre`].
pub fn legendre_inverse(lag: &TruncatedLagrangian, t: f64, point: (f64, f64)) -> Result<(f64, f64)> {
    let (r, _) = invert(lag, t, point.0, point.1, None)?;
    Ok((point.0, r))
}

/// Solves `∂_r L_R(t, x, r) = p` by Newton steps kept inside an expanding
/// bracket. Returns `r` and the jet there.
fn invert(lag: &TruncatedLagrangian, t: f64, x: f64, p: f64, guess: Option<f64>) -> Result<(f64, LagJet)> {
    let fail = || TwistError::Legendre { t, x, p };
    if !p.is_finite() {
        return Err(fail());
    }
    let r_tail = p / lag.d;
    if lag.in_tail(t, x, r_tail) {
        return Ok((r_tail, lag.jet(t, x, r_tail)));
    }
    let mut r = guess.filter(|g| g.is_finite()).unwrap_or(r_tail);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..LEGENDRE_MAX_ITER {
        let j = lag.jet(t, x, r);
        let res = j.lr - p;
        if res.abs() <= LEGENDRE_RESIDUAL {
            return Ok((r, j));
        }
        if res > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        if hi - lo <= 4.0 * f64::EPSILON * r.abs().max(1.0) {
            return Ok((r, j));
        }
        let newton = r - res / j.lrr;
        r = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo + (lo - r).abs().max(1.0)
        } else {
            hi - (hi - r).abs().max(1.0)
        };
    }
    Err(fail())
}

/// `H` and its derivatives at one point, with the Legendre preimage `r`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HamJet {
    pub h: f64,
    pub hx: f64,
    pub hp: f64,
    pub hxx: f64,
    pub hpx: f64,
    pub hpp: f64,
    pub r: f64,
    /// `L_R` at `(t, x, r)`.
    pub l: f64,
}

fn ham_jet(d: f64, p: f64, r: f64, j: &LagJet, tail: bool) -> HamJet {
    if tail {
        return HamJet {
            h: p * p / (2.0 * d),
            hp: r,
            hpp: 1.0 / d,
            r,
            l: j.l,
            ..HamJet::default()
        };
    }
    HamJet {
        h: p * r - j.l,
        hx: -j.lx,
        hp: r,
        hxx: -j.lxx + j.lxr * j.lxr / j.lrr,
        hpx: -j.lxr / j.lrr,
        hpp: 1.0 / j.lrr,
        r,
        l: j.l,
    }
}

/// The Hamiltonian `H(t, x, p) = p·r − L_R(t, x, r)` with `p = ∂_r L_R`.
#[derive(Clone, Debug)]
pub struct HamiltonianSystem {
    lag: Arc<TruncatedLagrangian>,
}

impl HamiltonianSystem {
    pub fn new(lag: Arc<TruncatedLagrangian>) -> Self {
        Self { lag }
    }

    pub fn lagrangian(&self) -> &TruncatedLagrangian {
        &self.lag
    }

    pub fn lagrangian_arc(&self) -> Arc<TruncatedLagrangian> {
        self.lag.clone()
    }

    /// `|p|` beyond which `H = p²/(2D)`.
    pub fn tail_momentum(&self) -> f64 {
        self.lag.d * self.lag.r_out
    }

    /// Default tube half-height `D·(R_out + 1) + 1`.
    pub fn default_tube(&self) -> f64 {
        self.lag.d * (self.lag.r_out + 1.0) + 1.0
    }

    fn jet_with_guess(&self, t: f64, x: f64, p: f64, guess: Option<f64>) -> Result<HamJet> {
        let (r, j) = invert(&self.lag, t, x, p, guess)?;
        let tail = j.lrr == self.lag.d && j.lx == 0.0 && j.lxr == 0.0 && self.lag.in_tail(t, x, r);
        Ok(ham_jet(self.lag.d, p, r, &j, tail))
    }

    pub fn jet(&self, t: f64, x: f64, p: f64) -> Result<HamJet> {
        self.jet_with_guess(t, x, p, None)
    }

    /// Samples `∂_pp H` on an `n×n` grid in `(t, x)` and `n_p` momenta in
    /// `[−P, P]`.
    pub fn audit_hpp(&self, tube: f64, n: usize, n_p: usize) -> Result<HppAudit> {
        let n = n.max(1);
        let n_p = n_p.max(2);
        let rows: Vec<Result<(f64, f64)>> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let t = (idx / n) as f64 / n as f64;
                let x = (idx % n) as f64 / n as f64;
                let mut acc = (f64::INFINITY, f64::NEG_INFINITY);
                for k in 0..n_p {
                    let p = -tube + 2.0 * tube * k as f64 / (n_p - 1) as f64;
                    let hpp = self.jet(t, x, p)?.hpp;
                    acc = (acc.0.min(hpp), acc.1.max(hpp));
                }
                Ok(acc)
            })
            .collect();
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in rows {
            let (a, b) = row?;
            min = min.min(a);
            max = max.max(b);
        }
        Ok(HppAudit {
            min_hpp: min,
            max_hpp: max,
            c_prime: max.max(1.0 / min),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HppAudit {
    pub min_hpp: f64,
    pub max_hpp: f64,
    pub c_prime: f64,
}

pub fn hamiltonian_eval(hsys: &HamiltonianSystem, t: f64, x: f64, p: f64) -> Result<HamJet> {
    hsys.jet(t, x, p)
}

/// Hamilton's equations, warm-starting the Legendre inverse from the
/// previous evaluation.
struct HamiltonFlow<'a> {
    hsys: &'a HamiltonianSystem,
    last_r: Cell<Option<f64>>,
}

impl<'a> HamiltonFlow<'a> {
    fn new(hsys: &'a HamiltonianSystem) -> Self {
        Self {
            hsys,
            last_r: Cell::new(None),
        }
    }

    fn jet(&self, t: f64, x: f64, p: f64) -> Result<HamJet> {
        let j = self.hsys.jet_with_guess(t, x, p, self.last_r.get())?;
        self.last_r.set(Some(j.r));
        Ok(j)
    }
}

impl OdeSystem<2> for HamiltonFlow<'_> {
    fn rhs(&self, t: f64, y: &[f64; 2]) -> Result<[f64; 2]> {
        let j = self.jet(t, y[0], y[1])?;
        Ok([j.hp, -j.hx])
    }
}

/// Hamilton's equations with the variational matrix and the action
/// `∫ L_R dt`: state `(x, p, m11, m12, m21, m22, A)`.
impl OdeSystem<7> for HamiltonFlow<'_> {
    fn rhs(&self, t: f64, y: &[f64; 7]) -> Result<[f64; 7]> {
        let j = self.jet(t, y[0], y[1])?;
        let a = [[j.hpx, j.hpp], [-j.hxx, -j.hpx]];
        let m = [[y[2], y[3]], [y[4], y[5]]];
        let mut out = [j.hp, -j.hx, 0.0, 0.0, 0.0, 0.0, j.l];
        for i in 0..2 {
            for k in 0..2 {
                out[2 + 2 * i + k] = a[i][0] * m[0][k] + a[i][1] * m[1][k];
            }
        }
        Ok(out)
    }
}

/// Lifted time-`(s, t)` map `ψ^{s,t}` from Hamilton's equations; `t < s`
/// gives the inverse map.
pub fn time_map(hsys: &HamiltonianSystem, s: f64, t: f64, point: (f64, f64), tol: f64) -> Result<(f64, f64)> {
    let y = Dopri5::new(tol).integrate(&HamiltonFlow::new(hsys), s, [point.0, point.1], t)?;
    Ok((y[0], y[1]))
}

/// `ℒ_t ∘ φ^{s,t} ∘ ℒ_s⁻¹`: the same map computed on the Lagrangian side.
pub fn time_map_lagrangian(lag: &TruncatedLagrangian, s: f64, t: f64, point: (f64, f64), tol: f64) -> Result<(f64, f64)> {
    let start = legendre_inverse(lag, s, point)?;
    let end = el_map(lag, s, t, start, tol)?;
    Ok(legendre(lag, t, end))
}

/// Endpoint, Jacobian `∂(x₁, p₁)/∂(x₀, p₀)` and action of one flow segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowJacobian {
    pub end: (f64, f64),
    pub jac: [[f64; 2]; 2],
    pub action: f64,
    /// Largest `|p|` over accepted steps.
    pub max_abs_p: f64,
}

impl FlowJacobian {
    pub fn det(&self) -> f64 {
        self.jac[0][0] * self.jac[1][1] - self.jac[0][1] * self.jac[1][0]
    }

    /// `∂X/∂p`.
    pub fn twist(&self) -> f64 {
        self.jac[0][1]
    }
}

pub fn flow_jacobian(hsys: &HamiltonianSystem, s: f64, t: f64, point: (f64, f64), tol: f64) -> Result<FlowJacobian> {
    let sys = HamiltonFlow::new(hsys);
    let y0 = [point.0, point.1, 1.0, 0.0, 0.0, 1.0, 0.0];
    let mut max_p = point.1.abs();
    let out = Dopri5::new(tol).integrate_with(&sys, s, y0, t, |seg| {
        max_p = max_p.max(seg.y1[1].abs());
        Ok(Flow::Continue)
    })?;
    let y = out.y;
    Ok(FlowJacobian {
        end: (y[0], y[1]),
        jac: [[y[2], y[3]], [y[4], y[5]]],
        action: y[6] * (t - s).signum(),
        max_abs_p: max_p,
    })
}

/// Knobs for [`factorize_time1`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationOptions {
    pub cap: usize,
    pub grid: usize,
    pub tol: f64,
}

impl Default for FactorizationOptions {
    fn default() -> Self {
        Self {
            cap: 1024,
            grid: 64,
            tol: 1e-10,
        }
    }
}

/// Twist audit of one factor on the tube grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorAudit {
    pub start: f64,
    pub end: f64,
    pub min_twist: f64,
    pub argmin: [f64; 2],
    pub jacobian_at_argmin: [[f64; 2]; 2],
    pub det_error: f64,
}

/// The time-1 map written as `ψ^{ε_{n−1},1} ∘ … ∘ ψ^{0,ε_1}` with each
/// factor audited to be a positive twist map on `S¹ × [−P, P]`.
#[derive(Clone, Debug)]
pub struct TwistFactorization {
    pub hsys: HamiltonianSystem,
    pub breakpoints: Vec<f64>,
    pub factors: Vec<FactorAudit>,
    pub tube: f64,
    pub grid: usize,
    pub tol: f64,
    /// `(n, worst min twist)` for every refinement level tried.
    pub history: Vec<(usize, f64)>,
}

/// Serialized form of a [`TwistFactorization`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub n: usize,
    pub breakpoints: Vec<f64>,
    pub min_twist: Vec<f64>,
    pub det_error: f64,
    #[serde(rename = "P")]
    pub tube: f64,
}

impl TwistFactorization {
    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, i: usize, point: (f64, f64)) -> Result<(f64, f64)> {
        time_map(&self.hsys, self.breakpoints[i], self.breakpoints[i + 1], point, self.tol)
    }

    pub fn factor_inverse(&self, i: usize, point: (f64, f64)) -> Result<(f64, f64)> {
        time_map(&self.hsys, self.breakpoints[i + 1], self.breakpoints[i], point, self.tol)
    }

    /// All factors in order.
    pub fn compose(&self, point: (f64, f64)) -> Result<(f64, f64)> {
        (0..self.n()).try_fold(point, |p, i| self.factor(i, p))
    }

    pub fn max_det_error(&self) -> f64 {
        self.factors.iter().map(|f| f.det_error).fold(0.0, f64::max)
    }

    pub fn min_twist(&self) -> f64 {
        self.factors.iter().map(|f| f.min_twist).fold(f64::INFINITY, f64::min)
    }

    pub fn report(&self) -> FactorizationReport {
        FactorizationReport {
            n: self.n(),
            breakpoints: self.breakpoints.clone(),
            min_twist: self.factors.iter().map(|f| f.min_twist).collect(),
            det_error: self.max_det_error(),
            tube: self.tube,
        }
    }
}

const TWIST_FLOOR: f64 = 1e-10;

fn audit_factor(hsys: &HamiltonianSystem, s: f64, t: f64, tube: f64, grid: usize, tol: f64) -> Result<FactorAudit> {
    let g = grid.max(2);
    let cells: Vec<Result<(f64, [f64; 2], [[f64; 2]; 2], f64)>> = (0..g * g)
        .into_par_iter()
        .map(|idx| {
            let x = (idx / g) as f64 / g as f64;
            let p = -tube + 2.0 * tube * (idx % g) as f64 / (g - 1) as f64;
            let fj = flow_jacobian(hsys, s, t, (x, p), tol)?;
            Ok((fj.twist(), [x, p], fj.jac, (fj.det() - 1.0).abs()))
        })
        .collect();
    let mut audit = FactorAudit {
        start: s,
        end: t,
        min_twist: f64::INFINITY,
        argmin: [0.0; 2],
        jacobian_at_argmin: [[0.0; 2]; 2],
        det_error: 0.0,
    };
    for c in cells {
        let (tw, at, jac, det_err) = c?;
        if tw < audit.min_twist {
            audit.min_twist = tw;
            audit.argmin = at;
            audit.jacobian_at_argmin = jac;
        }
        audit.det_error = audit.det_error.max(det_err);
    }
    Ok(audit)
}

/// Checks that `S¹ × [−P, P]` is invariant by following its boundary.
fn check_tube(hsys: &HamiltonianSystem, tube: f64, tol: f64) -> Result<()> {
    for k in 0..16 {
        let x = k as f64 / 16.0;
        for p in [tube, -tube] {
            let (_, p1) = time_map(hsys, 0.0, 1.0, (x, p), tol)?;
            if (p1 - p).abs() > 1e-9 * p.abs().max(1.0) {
                return Err(TwistError::TubeEscape(format!(
                    "boundary orbit from (x, p) = ({x}, {p}) ends at p = {p1}; tube P = {tube} is not invariant"
                )));
            }
        }
    }
    Ok(())
}

/// Splits the time-1 map into `n` factors over `[i/n, (i+1)/n]`, doubling
/// `n` until each factor's sampled `∂X/∂p` is positive on the tube.
pub fn factorize_time1(hsys: &HamiltonianSystem, tube: f64, opts: &FactorizationOptions) -> Result<TwistFactorization> {
    if !(tube > 0.0) {
        return Err(TwistError::InvalidInput("tube half-height P must be positive".into()));
    }
    check_tube(hsys, tube, opts.tol)?;
    let mut history = Vec::new();
    let mut n = 1usize;
    loop {
        let breakpoints: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut factors = Vec::with_capacity(n);
        let mut ok = true;
        for i in 0..n {
            let audit = audit_factor(hsys, breakpoints[i], breakpoints[i + 1], tube, opts.grid, opts.tol)?;
            ok &= audit.min_twist > TWIST_FLOOR;
            factors.push(audit);
        }
        let worst = factors.iter().map(|f| f.min_twist).fold(f64::INFINITY, f64::min);
        history.push((n, worst));
        if ok {
            return Ok(TwistFactorization {
                hsys: hsys.clone(),
                breakpoints,
                factors,
                tube,
                grid: opts.grid,
                tol: opts.tol,
                history,
            });
        }
        n *= 2;
        if n > opts.cap {
            return Err(TwistError::FactorCap {
                cap: opts.cap,
                worst_twist: worst,
            });
        }
    }
}
