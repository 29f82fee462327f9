//! Sweep of seed levels for a pair of invariant circles bounding a zone
//! with no invariant circle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::circle::{circle_detect, CircleCandidate, CircleParams, OrderWitness, Verdict};
use super::maps::LiftedMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub y_min: f64,
    pub y_max: f64,
    pub levels: usize,
    pub seeds_per_level: usize,
    pub circle: CircleParams,
    /// Largest denominator searched for periodic orbits on the boundary.
    pub q_max: u32,
    pub periodic_tol: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            y_min: -1.0,
            y_max: 1.0,
            levels: 41,
            seeds_per_level: 1,
            circle: CircleParams::default(),
            q_max: 50,
            periodic_tol: 1e-6,
        }
    }
}

/// Result of looking for `p/q`-periodic points on a boundary circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicScan {
    pub q_max: u32,
    /// `(p, q, return distance)` of the first periodic orbit found.
    pub found: Option<(i64, u32, f64)>,
    /// Closest `|q·ω − p|` over all `q ≤ q_max`.
    pub closest: f64,
}

impl PeriodicScan {
    pub fn irrational_up_to_q(&self) -> bool {
        self.found.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: (f64, f64),
    pub verdict: Verdict,
    pub omega: Option<f64>,
    /// Present exactly when the verdict is a refutation.
    pub witness: Option<OrderWitness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityBand {
    pub lower: CircleCandidate,
    pub upper: CircleCandidate,
    pub omega_minus: f64,
    pub omega_plus: f64,
    pub interior: Vec<SeedResult>,
    /// Every seed of the sweep.
    pub seeds: Vec<SeedResult>,
    pub periodic_lower: PeriodicScan,
    pub periodic_upper: PeriodicScan,
}

/// Band report in its serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub omega_minus: f64,
    pub omega_plus: f64,
    pub gamma_minus_samples: Vec<(f64, f64)>,
    pub gamma_plus_samples: Vec<(f64, f64)>,
    pub interior_verdicts: Vec<SeedResult>,
    #[serde(rename = "Q")]
    pub q: u32,
}

impl InstabilityBand {
    pub fn report(&self, samples: usize) -> BandReport {
        BandReport {
            omega_minus: self.omega_minus,
            omega_plus: self.omega_plus,
            gamma_minus_samples: self.lower.thinned(samples),
            gamma_plus_samples: self.upper.thinned(samples),
            interior_verdicts: self.interior.clone(),
            q: self.periodic_lower.q_max,
        }
    }

    /// Whether `(x, y)` lies strictly between the two boundary graphs.
    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        y > self.lower.graph_value(x) && y < self.upper.graph_value(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsenceReport {
    pub reason: String,
    pub verified_circles: usize,
    pub refuted_seeds: usize,
    pub seeds: Vec<SeedResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScanOutcome {
    Band(Box<InstabilityBand>),
    Absent(AbsenceReport),
}

impl ScanOutcome {
    pub fn band(&self) -> Option<&InstabilityBand> {
        match self {
            ScanOutcome::Band(b) => Some(b),
            ScanOutcome::Absent(_) => None,
        }
    }
}

/// Looks for `p/q`-periodic orbits on a circle by re-iterating its seed.
pub fn periodic_scan<M: LiftedMap + ?Sized>(map: &M, circle: &CircleCandidate, q_max: u32, tol: f64) -> PeriodicScan {
    let mut scan = PeriodicScan {
        q_max,
        found: None,
        closest: f64::INFINITY,
    };
    let Some(omega) = circle.omega() else {
        return scan;
    };
    let (tail, _) = map.orbit(circle.seed, 2 * q_max as i64 + 1);
    let orbit: Vec<(f64, f64)> = std::iter::once(circle.seed).chain(tail).collect();
    for q in 1..=q_max {
        let p = (omega * q as f64).round();
        let off = (omega * q as f64 - p).abs();
        scan.closest = scan.closest.min(off);
        if off > tol || orbit.len() <= q as usize {
            continue;
        }
        let dist = (0..orbit.len() - q as usize)
            .map(|k| {
                let (a, b) = (orbit[k], orbit[k + q as usize]);
                (b.0 - a.0 - p).hypot(b.1 - a.1)
            })
            .fold(f64::INFINITY, f64::min);
        if dist <= tol {
            scan.found = Some((p as i64, q, dist));
            return scan;
        }
    }
    scan
}

/// Seed points of the sweep: `levels` heights, `seeds_per_level` phases.
pub fn scan_seeds(params: &ScanParams) -> Vec<(f64, f64)> {
    let mut seeds = Vec::new();
    for l in 0..params.levels {
        let y = if params.levels == 1 {
            0.5 * (params.y_min + params.y_max)
        } else {
            params.y_min + (params.y_max - params.y_min) * l as f64 / (params.levels - 1) as f64
        };
        for s in 0..params.seeds_per_level {
            seeds.push((s as f64 / params.seeds_per_level as f64, y));
        }
    }
    seeds
}

/// Classifies every seed and returns the widest adjacent pair of verified
/// circles whose gap holds a refuted seed and no verified one.
pub fn instability_scan<M: LiftedMap + ?Sized>(map: &M, params: &ScanParams) -> ScanOutcome {
    if params.levels == 0 || params.seeds_per_level == 0 || !(params.y_max > params.y_min) {
        return ScanOutcome::Absent(AbsenceReport {
            reason: "empty y-range".into(),
            verified_circles: 0,
            refuted_seeds: 0,
            seeds: Vec::new(),
        });
    }
    let seeds = scan_seeds(params);
    let candidates: Vec<CircleCandidate> = seeds.par_iter().map(|&s| circle_detect(map, s, &params.circle)).collect();
    let results: Vec<SeedResult> = candidates
        .iter()
        .map(|c| SeedResult {
            seed: c.seed,
            verdict: c.verdict,
            omega: c.omega(),
            witness: c.witness,
        })
        .collect();
    let mut circles: Vec<&CircleCandidate> = candidates.iter().filter(|c| c.verdict == Verdict::GraphVerified).collect();
    circles.sort_by(|a, b| a.mean_y().total_cmp(&b.mean_y()));
    let refuted = results.iter().filter(|r| r.verdict == Verdict::Refuted).count();

    let mut best: Option<(f64, usize)> = None;
    for (k, pair) in circles.windows(2).enumerate() {
        let (lo, hi) = (pair[0], pair[1]);
        let (Some(wl), Some(wh)) = (lo.omega(), hi.omega()) else { continue };
        let slack = lo.rotation.as_ref().map_or(0.0, |r| r.uncertainty) + hi.rotation.as_ref().map_or(0.0, |r| r.uncertainty);
        if wh - wl <= slack {
            continue;
        }
        let inside = |c: &&CircleCandidate| {
            let (x, y) = c.seed;
            y > lo.graph_value(x) && y < hi.graph_value(x)
        };
        let interior: Vec<&CircleCandidate> = candidates.iter().filter(|c| inside(c)).collect();
        if interior.iter().any(|c| c.verdict == Verdict::GraphVerified) || !interior.iter().any(|c| c.verdict == Verdict::Refuted) {
            continue;
        }
        let width = hi.mean_y() - lo.mean_y();
        if best.map_or(true, |(w, _)| width > w) {
            best = Some((width, k));
        }
    }
    let Some((_, k)) = best else {
        return ScanOutcome::Absent(AbsenceReport {
            reason: if circles.len() == results.len() {
                "every seed lies on a verified circle".into()
            } else {
                "no adjacent pair of verified circles encloses a refuted seed".into()
            },
            verified_circles: circles.len(),
            refuted_seeds: refuted,
            seeds: results,
        });
    };
    let (lo, hi) = (circles[k].clone(), circles[k + 1].clone());
    let interior: Vec<SeedResult> = results
        .iter()
        .filter(|r| r.seed.1 > lo.graph_value(r.seed.0) && r.seed.1 < hi.graph_value(r.seed.0))
        .cloned()
        .collect();
    let periodic_lower = periodic_scan(map, &lo, params.q_max, params.periodic_tol);
    let periodic_upper = periodic_scan(map, &hi, params.q_max, params.periodic_tol);
    ScanOutcome::Band(Box::new(InstabilityBand {
        omega_minus: lo.omega().unwrap_or(f64::NAN),
        omega_plus: hi.omega().unwrap_or(f64::NAN),
        lower: lo,
        upper: hi,
        interior,
        seeds: results,
        periodic_lower,
        periodic_upper,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twistdyn::maps::{Shear, StandardMap};

    #[test]
    fn shear_has_no_band() {
        let params = ScanParams {
            levels: 11,
            y_min: 0.1,
            y_max: 0.9,
            ..Default::default()
        };
        match instability_scan(&Shear, &params) {
            ScanOutcome::Absent(r) => assert_eq!(r.refuted_seeds, 0),
            ScanOutcome::Band(_) => panic!("shear has no band"),
        }
    }

    #[test]
    fn empty_range_is_absent() {
        let params = ScanParams {
            y_min: 1.0,
            y_max: 1.0,
            ..Default::default()
        };
        assert!(matches!(instability_scan(&Shear, &params), ScanOutcome::Absent(_)));
    }

    #[test]
    fn standard_map_band_around_the_main_resonance() {
        let m = StandardMap { k: 0.9 };
        let params = ScanParams {
            y_min: -0.5,
            y_max: 0.5,
            levels: 41,
            seeds_per_level: 2,
            ..Default::default()
        };
        let ScanOutcome::Band(b) = instability_scan(&m, &params) else {
            panic!("expected a band");
        };
        assert!(b.omega_minus < b.omega_plus);
        assert!(b.interior.iter().all(|s| s.verdict != Verdict::GraphVerified));
        assert!(b.interior.iter().any(|s| s.verdict == Verdict::Refuted));
    }

    #[test]
    fn periodic_scan_finds_rational_rotation() {
        let c = crate::twistdyn::circle::circle_detect(&Shear, (0.0, 0.25), &CircleParams::default());
        let s = periodic_scan(&Shear, &c, 50, 1e-6);
        assert_eq!(s.found.map(|f| (f.0, f.1)), Some((1, 4)));
        let c = crate::twistdyn::circle::circle_detect(&Shear, (0.0, 2f64.sqrt() - 1.0), &CircleParams::default());
        assert!(periodic_scan(&Shear, &c, 50, 1e-6).irrational_up_to_q());
    }
}
