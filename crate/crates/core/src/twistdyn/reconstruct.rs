//! From an orbit of the time-1 map back to a geodesic on the torus.

use serde::{Deserialize, Serialize};

use super::scan::InstabilityBand;
use crate::error::{Result, TwistError};
use crate::hamiltonian::{legendre, legendre_inverse};
use crate::metric::{normalize, Trajectory};
use crate::reduction::{el_flow, geodesic_to_graph, graph_geodesic_residual, graph_to_geodesic, GraphCurve, Lagrangian, TruncatedLagrangian};
use crate::section::{chart, chart_inverse, return_map, scale_map};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    pub samples_per_step: usize,
    pub tol: f64,
    /// Steps re-derived from independent geodesic integration.
    pub check_steps: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            samples_per_step: 8,
            tol: 1e-10,
            check_steps: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedGeodesic {
    pub curve: GraphCurve,
    /// Unit tangent vectors along `γ(t) = t·v + θ(t)·v⊥`.
    pub track: Trajectory,
    /// Largest geodesic-equation residual along the curve.
    pub el_residual: f64,
    /// Largest chart distance between the next orbit point and the
    /// section return of an independently integrated geodesic.
    pub section_deviation: f64,
    /// Largest `|F − 1|` at those returns.
    pub f_drift: f64,
    /// Largest error of reducing the track back to the orbit.
    pub round_trip_error: f64,
    /// Closest approach of the tangent lift to the lifts of `Γ₋`, `Γ₊`.
    pub distance_minus: Option<f64>,
    pub distance_plus: Option<f64>,
}

/// Re-integrates the Euler–Lagrange flow through each orbit point
/// `(k, x_k, p_k)` of the time-1 map (consecutive `k`) and lifts the
/// result to unit tangent vectors.
pub fn geodesic_reconstruct(
    orbit: &[(i64, f64, f64)],
    band: Option<&InstabilityBand>,
    lag: &TruncatedLagrangian,
    opts: &ReconstructOptions,
) -> Result<ReconstructedGeodesic> {
    if orbit.len() < 2 {
        return Err(TwistError::InvalidInput("orbit needs at least two points".into()));
    }
    let spec = lag.metric();
    let v = lag.direction();
    let mut states = Vec::with_capacity(orbit.len());
    for &(k, x, p) in orbit {
        let (_, r) = legendre_inverse(lag, 0.0, (x, p))?;
        if r.abs() >= lag.r_cut {
            return Err(TwistError::NotAGraph {
                t: k as f64,
                reason: format!("step {k}: slope {r} violates |r| < R = {}", lag.r_cut),
            });
        }
        states.push((k, x, r));
    }
    let mut curve = GraphCurve {
        direction: v,
        t: vec![states[0].0 as f64],
        theta: vec![states[0].1],
        dtheta: vec![states[0].2],
    };
    for w in states.windows(2) {
        let (k, x, r) = w[0];
        if w[1].0 != k + 1 {
            return Err(TwistError::InvalidInput(format!("orbit indices jump from {k} to {}", w[1].0)));
        }
        let seg = el_flow(lag, (x, r), k as f64, (k + 1) as f64, opts.tol, opts.samples_per_step)?;
        if seg.max_abs_r >= lag.r_cut {
            return Err(TwistError::NotAGraph {
                t: k as f64,
                reason: format!("step {k}: slope reached {} >= R = {}", seg.max_abs_r, lag.r_cut),
            });
        }
        curve.t.extend_from_slice(&seg.times[1..]);
        curve.theta.extend_from_slice(&seg.x[1..]);
        curve.dtheta.extend_from_slice(&seg.r[1..]);
    }
    let track = graph_to_geodesic(spec, &curve)?;
    let el_residual = (0..curve.t.len())
        .map(|i| {
            let (t, th, dth) = (curve.t[i], curve.theta[i], curve.dtheta[i]);
            graph_geodesic_residual(spec, v, t, th, dth, lag.acceleration(t, th, dth))
        })
        .fold(0.0, f64::max);

    let back = geodesic_to_graph(&track, v, lag.r_cut)?;
    let stride = opts.samples_per_step.max(1);
    let mut round_trip_error: f64 = 0.0;
    for (i, &(_, x, p)) in orbit.iter().enumerate() {
        let j = i * stride;
        let (_, p_back) = legendre(lag, 0.0, (back.theta[j], back.dtheta[j]));
        round_trip_error = round_trip_error.max((back.theta[j] - x).abs()).max((p_back - p).abs());
    }

    let mut section_deviation: f64 = 0.0;
    let mut f_drift: f64 = 0.0;
    for w in states.windows(2).take(opts.check_steps) {
        let (_, x, r) = w[0];
        let (_, x1, r1) = w[1];
        let start = scale_map(spec, v, &chart_inverse(v, 0, (x, r)))?;
        let ret = return_map(spec, v, &start, opts.tol)?;
        f_drift = f_drift.max((spec.norm(ret.point.position, ret.point.velocity) - 1.0).abs());
        let (b, d) = chart(v, &scale_map(spec, v, &ret.point)?, 1)?;
        section_deviation = section_deviation.max((b - x1).hypot(d - r1));
    }

    let lift_distance = |graph: &dyn Fn(f64) -> f64| -> Result<f64> {
        let mut best = f64::INFINITY;
        for &(k, x, r) in &states {
            let (_, rg) = legendre_inverse(lag, 0.0, (x, graph(x)))?;
            let pos = v.point(k as f64, x);
            let a = normalize(spec, pos, v.velocity(r))?;
            let b = normalize(spec, pos, v.velocity(rg))?;
            best = best.min((a.velocity[0] - b.velocity[0]).hypot(a.velocity[1] - b.velocity[1]));
        }
        Ok(best)
    };
    let (distance_minus, distance_plus) = match band {
        Some(b) => (
            Some(lift_distance(&|x| b.lower.graph_value(x))?),
            Some(lift_distance(&|x| b.upper.graph_value(x))?),
        ),
        None => (None, None),
    };
    Ok(ReconstructedGeodesic {
        curve,
        track,
        el_residual,
        section_deviation,
        f_drift,
        round_trip_error,
        distance_minus,
        distance_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricSpec;
    use crate::reduction::{build_reduced, truncate, PrimeDirection};
    use std::sync::Arc;

    #[test]
    fn flat_orbit_gives_a_straight_line() {
        let lag = truncate(build_reduced(Arc::new(MetricSpec::flat()), PrimeDirection::new(1, 1).unwrap()), 2.0, 1.0).unwrap();
        let y: f64 = 0.3;
        let p = legendre(&lag, 0.0, (0.1, y)).1;
        let orbit: Vec<(i64, f64, f64)> = (0..6).map(|k| (k, 0.1 + y * k as f64, p)).collect();
        let g = geodesic_reconstruct(&orbit, None, &lag, &ReconstructOptions::default()).unwrap();
        assert!(g.el_residual < 1e-9);
        assert!(g.round_trip_error < 1e-7);
        assert!(g.section_deviation < 1e-8);
        let u0 = g.track.states[0].velocity;
        for s in &g.track.states {
            assert!((s.velocity[0] - u0[0]).abs() < 1e-12 && (s.velocity[1] - u0[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_violation_names_the_step() {
        let lag = truncate(build_reduced(Arc::new(MetricSpec::flat()), PrimeDirection::e1()), 2.0, 1.0).unwrap();
        let p_big = legendre(&lag, 0.0, (0.0, 2.5)).1;
        let orbit = vec![(0, 0.0, 0.1), (1, 0.1, 0.1), (2, 0.2, p_big)];
        match geodesic_reconstruct(&orbit, None, &lag, &ReconstructOptions::default()) {
            Err(TwistError::NotAGraph { t, .. }) => assert_eq!(t, 2.0),
            other => panic!("{other:?}"),
        }
    }
}
