//! Sections of the geodesic flow transverse to a prime direction, the first
//! return between consecutive sections, and its conjugacy with the time-1
//! map of the reduced Lagrangian.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::metric::{GeodesicSystem, MetricSpec};
use crate::ode::{Dopri5, Flow, Segment};
use crate::reduction::{el_flow, PrimeDirection, TruncatedLagrangian};

/// Lower bound on `⟨ẋ, v⟩` while integrating towards the next section.
pub const GRAPH_MONITOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectionKind {
    /// Unit speed, `⟨w, v⟩ > 0`.
    V,
    /// `w = v + d·v⊥`.
    W,
}

/// A tangent vector based on the line `⟨x, v⟩ = index·‖v‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub kind: SectionKind,
    pub index: i64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl SectionPoint {
    /// Checks the defining constraints of the section within `tol`.
    pub fn check(&self, spec: &MetricSpec, v: PrimeDirection, tol: f64) -> Result<()> {
        let n2 = v.norm2();
        let level = dot(self.position, v.v()) / n2;
        if (level - self.index as f64).abs() > tol {
            return Err(TwistError::InvalidInput(format!(
                "point is off section {}: <x, v>/|v|^2 = {level}",
                self.index
            )));
        }
        match self.kind {
            SectionKind::V => {
                let f = spec.norm(self.position, self.velocity);
                if (f - 1.0).abs() > tol || dot(self.velocity, v.v()) <= 0.0 {
                    return Err(TwistError::InvalidInput(format!("not a unit forward vector (F = {f})")));
                }
            }
            SectionKind::W => {
                if (dot(self.velocity, v.v()) / n2 - 1.0).abs() > tol {
                    return Err(TwistError::InvalidInput("velocity is not of the form v + d v_perp".into()));
                }
            }
        }
        Ok(())
    }
}

/// `g̃(x, w) = (x, w/F(x, w))` on W-points, and its inverse
/// `(x, w) ↦ (x, ‖v‖²/⟨v, w⟩·w)` on V-points.
pub fn scale_map(spec: &MetricSpec, v: PrimeDirection, point: &SectionPoint) -> Result<SectionPoint> {
    let wv = dot(point.velocity, v.v());
    if !(wv > 0.0) {
        return Err(TwistError::InvalidInput(format!("<w, v> = {wv} <= 0")));
    }
    let (kind, scale) = match point.kind {
        SectionKind::W => (SectionKind::V, 1.0 / spec.norm(point.position, point.velocity)),
        SectionKind::V => (SectionKind::W, v.norm2() / wv),
    };
    Ok(SectionPoint {
        kind,
        index: point.index,
        position: point.position,
        velocity: [point.velocity[0] * scale, point.velocity[1] * scale],
    })
}

/// `l̃_i(x, w) = (⟨x, v⊥⟩, ⟨w, v⊥⟩)/‖v‖²` on a W-point with index `i`.
pub fn chart(v: PrimeDirection, point: &SectionPoint, i: i64) -> Result<(f64, f64)> {
    if point.kind != SectionKind::W || point.index != i {
        return Err(TwistError::InvalidInput(format!(
            "chart {i} needs a W-point of index {i}, got {:?} index {}",
            point.kind, point.index
        )));
    }
    let (p, n2) = (v.perp(), v.norm2());
    Ok((dot(point.position, p) / n2, dot(point.velocity, p) / n2))
}

/// `l̃_i⁻¹(b, d) = (i·v + b·v⊥, v + d·v⊥)`.
pub fn chart_inverse(v: PrimeDirection, i: i64, coords: (f64, f64)) -> SectionPoint {
    SectionPoint {
        kind: SectionKind::W,
        index: i,
        position: v.point(i as f64, coords.0),
        velocity: v.velocity(coords.1),
    }
}

/// A crossing of `⟨x, v⟩ = level` (an integer) by the geodesic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub level: i64,
    pub time: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnResult {
    pub point: SectionPoint,
    /// Every integer level of `⟨x, v⟩` met on the way, the last one being
    /// the return itself.
    pub crossings: Vec<Crossing>,
    pub event_residual: f64,
    pub time: f64,
}

/// The number of times a graph geodesic meets the projected section before
/// returning to the next lift of it.
pub fn return_index(v: PrimeDirection) -> i64 {
    let [a, b] = v.components();
    a * a + b * b
}

/// `R̃₀`: flows a unit vector on section 0 to its first hit of section 1.
pub fn return_map(spec: &MetricSpec, v: PrimeDirection, point: &SectionPoint, tol: f64) -> Result<ReturnResult> {
    if point.kind != SectionKind::V || point.index != 0 {
        return Err(TwistError::InvalidInput("return map starts from a V-point of index 0".into()));
    }
    let (vv, n2) = (v.v(), v.norm2());
    let wv = dot(point.velocity, vv);
    if !(wv > 0.0) {
        return Err(TwistError::InvalidInput(format!("<w, v> = {wv} <= 0")));
    }
    let target = return_index(v);
    let sys = GeodesicSystem { spec };
    let solver = Dopri5::new(tol);
    let y0 = [point.position[0], point.position[1], point.velocity[0], point.velocity[1]];
    let proj = |y: &[f64; 4]| y[0] * vv[0] + y[1] * vv[1];
    let mut crossings: Vec<Crossing> = Vec::new();
    let mut failure: Option<TwistError> = None;
    // Crude time bound: the geodesic must travel distance ‖v‖ in the v-direction.
    let horizon = 1e3 * (1.0 + n2.sqrt() / wv.min(1.0));
    let run = solver.integrate_with(&sys, 0.0, y0, horizon, |seg: &Segment<4>| {
        let speed_v = seg.y1[2] * vv[0] + seg.y1[3] * vv[1];
        if speed_v < GRAPH_MONITOR {
            failure = Some(TwistError::NotAGraph {
                t: seg.t1,
                reason: format!("<x', v> = {speed_v} below {GRAPH_MONITOR}"),
            });
            return Ok(Flow::Stop);
        }
        let (g0, g1) = (proj(&seg.y0), proj(&seg.y1));
        let mut k = crossings.last().map_or(1, |c| c.level + 1);
        while k <= target && g0 < k as f64 && k as f64 <= g1 {
            let level = k as f64;
            let (tc, yc) = solver.locate(&sys, seg, |_, y| proj(y) - level, 1e-15)?;
            crossings.push(Crossing {
                level: k,
                time: tc,
                position: [yc[0], yc[1]],
                velocity: [yc[2], yc[3]],
            });
            k += 1;
        }
        Ok(if crossings.last().is_some_and(|c| c.level == target) {
            Flow::Stop
        } else {
            Flow::Continue
        })
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    let last = match crossings.last() {
        Some(c) if c.level == target && run.stopped => *c,
        _ => {
            return Err(TwistError::Integrator {
                t: run.t,
                state: run.y.to_vec(),
                reason: "section 1 not reached".into(),
            })
        }
    };
    let residual = (dot(last.position, vv) - n2).abs();
    Ok(ReturnResult {
        point: SectionPoint {
            kind: SectionKind::V,
            index: 1,
            position: last.position,
            velocity: last.velocity,
        },
        crossings,
        event_residual: residual,
        time: last.time,
    })
}

/// `l̃₁ ∘ g̃⁻¹ ∘ R̃₀ ∘ g̃ ∘ l̃₀⁻¹`, the return map in cylinder coordinates.
pub fn section_map(spec: &MetricSpec, v: PrimeDirection, point: (f64, f64), tol: f64) -> Result<(f64, f64)> {
    let w0 = chart_inverse(v, 0, point);
    let v0 = scale_map(spec, v, &w0)?;
    let ret = return_map(spec, v, &v0, tol)?;
    let w1 = scale_map(spec, v, &ret.point)?;
    chart(v, &w1, 1)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyReport {
    pub grid: usize,
    pub max_dev: f64,
    pub mean_dev: f64,
    /// Grid points dropped because the geodesic stopped being a graph or the
    /// Lagrangian orbit left `|r| < R`.
    pub excluded: usize,
}

/// Compares the section return map with the time-1 map of `L_R` on a
/// `grid × grid` lattice over `[0, 1) × [−y_max, y_max]`.
pub fn conjugacy_check(spec: &MetricSpec, lag: &TruncatedLagrangian, grid: usize, y_max: f64, tol: f64) -> ConjugacyReport {
    if grid == 0 {
        return ConjugacyReport::default();
    }
    let v = lag.direction();
    let devs: Vec<Option<f64>> = (0..grid * grid)
        .into_par_iter()
        .map(|idx| {
            let b = (idx / grid) as f64 / grid as f64;
            let d = if grid == 1 {
                0.0
            } else {
                -y_max + 2.0 * y_max * (idx % grid) as f64 / (grid - 1) as f64
            };
            let lagrangian = el_flow(lag, (b, d), 0.0, 1.0, tol, 1).ok()?;
            if lagrangian.max_abs_r >= lag.r_cut {
                return None;
            }
            let (b1, d1) = section_map(spec, v, (b, d), tol).ok()?;
            let (x1, r1) = lagrangian.end();
            Some((b1 - x1).hypot(d1 - r1))
        })
        .collect();
    let kept: Vec<f64> = devs.iter().flatten().copied().collect();
    ConjugacyReport {
        grid,
        max_dev: kept.iter().copied().fold(0.0, f64::max),
        mean_dev: if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 },
        excluded: devs.len() - kept.len(),
    }
}

/// CSV with columns `kind,index,x1,x2,w1,w2`.
pub fn section_points_csv(points: &[SectionPoint]) -> String {
    let mut out = String::from("kind,index,x1,x2,w1,w2\n");
    for p in points {
        let kind = match p.kind {
            SectionKind::V => "V",
            SectionKind::W => "W",
        };
        let _ = writeln!(
            out,
            "{kind},{},{:?},{:?},{:?},{:?}",
            p.index, p.position[0], p.position[1], p.velocity[0], p.velocity[1]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_scale_map_normalizes() {
        let spec = MetricSpec::flat();
        let v = PrimeDirection::e1();
        let w = chart_inverse(v, 0, (0.2, 0.5));
        let u = scale_map(&spec, v, &w).unwrap();
        assert_eq!(u.kind, SectionKind::V);
        let n = 1.25f64.sqrt();
        assert!((u.velocity[0] - 1.0 / n).abs() < 1e-15 && (u.velocity[1] - 0.5 / n).abs() < 1e-15);
        let back = scale_map(&spec, v, &u).unwrap();
        assert!((back.velocity[0] - 1.0).abs() < 1e-12 && (back.velocity[1] - 0.5).abs() < 1e-12);
        assert!(u.check(&spec, v, 1e-12).is_ok());
        assert!(back.check(&spec, v, 1e-12).is_ok());
    }

    #[test]
    fn scale_map_rejects_backward_vectors() {
        let spec = MetricSpec::flat();
        let p = SectionPoint {
            kind: SectionKind::V,
            index: 0,
            position: [0.0, 0.0],
            velocity: [-1.0, 0.0],
        };
        assert!(scale_map(&spec, PrimeDirection::e1(), &p).is_err());
    }

    #[test]
    fn chart_examples() {
        let v = PrimeDirection::e1();
        let p = chart_inverse(v, 0, (0.3, -0.7));
        assert_eq!(p.position, [0.0, 0.3]);
        assert_eq!(chart(v, &p, 0).unwrap(), (0.3, -0.7));
        let v = PrimeDirection::new(1, 1).unwrap();
        let p = SectionPoint {
            kind: SectionKind::W,
            index: 0,
            position: [-0.5, 0.5],
            velocity: [1.0 - 0.25, 1.0 + 0.25],
        };
        let (b, d) = chart(v, &p, 0).unwrap();
        assert!((b - 0.5).abs() < 1e-15 && (d - 0.25).abs() < 1e-15);
        assert!(chart(v, &p, 1).is_err());
    }

    #[test]
    fn return_index_formula() {
        assert_eq!(return_index(PrimeDirection::e1()), 1);
        assert_eq!(return_index(PrimeDirection::new(1, 1).unwrap()), 2);
        assert_eq!(return_index(PrimeDirection::new(2, 1).unwrap()), 5);
    }

    #[test]
    fn flat_unit_return() {
        let spec = MetricSpec::flat();
        let p = SectionPoint {
            kind: SectionKind::V,
            index: 0,
            position: [0.0, 0.0],
            velocity: [1.0, 0.0],
        };
        let r = return_map(&spec, PrimeDirection::e1(), &p, 1e-10).unwrap();
        assert!((r.point.position[0] - 1.0).abs() < 1e-12 && r.point.position[1].abs() < 1e-12);
        assert_eq!(r.point.velocity, [1.0, 0.0]);
        assert_eq!(r.crossings.len(), 1);
    }

    #[test]
    fn flat_crossing_counts_match_index() {
        let spec = MetricSpec::flat();
        for (a, b) in [(1, 0), (1, 1), (2, 1)] {
            let v = PrimeDirection::new(a, b).unwrap();
            let w = chart_inverse(v, 0, (0.1, 0.2));
            let start = scale_map(&spec, v, &w).unwrap();
            let r = return_map(&spec, v, &start, 1e-10).unwrap();
            assert_eq!(r.crossings.len() as i64, return_index(v));
            assert!(r.event_residual < 1e-9);
        }
    }

    #[test]
    fn flat_return_is_translation_along_w() {
        let spec = MetricSpec::flat();
        let v = PrimeDirection::new(1, 1).unwrap();
        let start = scale_map(&spec, v, &chart_inverse(v, 0, (0.4, -0.3))).unwrap();
        let r = return_map(&spec, v, &start, 1e-10).unwrap();
        let w = start.velocity;
        let s = v.norm2() / dot(w, v.v());
        for i in 0..2 {
            assert!((r.point.position[i] - (start.position[i] + s * w[i])).abs() < 1e-9);
            assert!((r.point.velocity[i] - w[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_conjugacy_grid() {
        use crate::reduction::{build_reduced, truncate};
        use std::sync::Arc;
        let spec = Arc::new(MetricSpec::flat());
        let lag = truncate(build_reduced(spec.clone(), PrimeDirection::e1()), 2.0, 1.0).unwrap();
        assert_eq!(conjugacy_check(&spec, &lag, 0, 1.0, 1e-9), ConjugacyReport::default());
        let rep = conjugacy_check(&spec, &lag, 4, 1.0, 1e-10);
        assert!(rep.max_dev < 1e-9 && rep.excluded == 0, "{rep:?}");
    }
}
