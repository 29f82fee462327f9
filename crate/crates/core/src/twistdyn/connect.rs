//! Search for an orbit that comes close to the lower boundary circle in
//! the past and to the upper one in the future.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maps::LiftedMap;
use super::scan::{InstabilityBand, ScanOutcome};
use crate::error::{Result, TwistError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectParams {
    pub m_plus: usize,
    pub m_minus: usize,
    /// Random seeds drawn inside the band, on top of the scan's interior seeds.
    pub random_seeds: usize,
    pub rng_seed: u64,
    /// Golden-section iterations of the refinement in `x`; 0 disables it.
    pub refine_iters: usize,
    pub refine_radius: f64,
}

impl Default for ConnectParams {
    fn default() -> Self {
        Self {
            m_plus: 2000,
            m_minus: 2000,
            random_seeds: 16,
            rng_seed: 0,
            refine_iters: 12,
            refine_radius: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionCandidate {
    pub seed: (f64, f64),
    pub m_plus: usize,
    pub m_minus: usize,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// Iterate indices (positive forward, negative backward) realizing `δ±`.
    pub approach_steps: (i64, i64),
    /// `(k, x, y)` for `k = −M₋ … M₊`, ascending.
    pub orbit: Vec<(i64, f64, f64)>,
    /// Set when the orbit left the map's domain before `M±` steps.
    pub truncated: bool,
}

/// Serialized connection report; the orbit goes to a separate CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionReport {
    pub seed: (f64, f64),
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub approach_steps: (i64, i64),
    pub orbit_csv_path: String,
}

impl ConnectionCandidate {
    pub fn score(&self) -> (f64, f64) {
        (self.delta_plus + self.delta_minus, self.delta_plus)
    }

    /// CSV with columns `k,x,y`.
    pub fn orbit_csv(&self) -> String {
        let mut out = String::from("k,x,y\n");
        for (k, x, y) in &self.orbit {
            let _ = writeln!(out, "{k},{x:?},{y:?}");
        }
        out
    }

    pub fn report(&self, orbit_csv_path: &str) -> ConnectionReport {
        ConnectionReport {
            seed: self.seed,
            delta_plus: self.delta_plus,
            delta_minus: self.delta_minus,
            approach_steps: self.approach_steps,
            orbit_csv_path: orbit_csv_path.to_string(),
        }
    }
}

/// `(δ₊, k₊, δ₋, k₋)` recomputed from the orbit record.
pub fn approach_distances(band: &InstabilityBand, orbit: &[(i64, f64, f64)]) -> (f64, i64, f64, i64) {
    let (mut dp, mut kp) = (f64::INFINITY, 0);
    let (mut dm, mut km) = (f64::INFINITY, 0);
    for &(k, x, y) in orbit {
        if k >= 0 {
            let d = (y - band.upper.graph_value(x)).abs();
            if d < dp {
                (dp, kp) = (d, k);
            }
        }
        if k <= 0 {
            let d = (y - band.lower.graph_value(x)).abs();
            if d < dm {
                (dm, km) = (d, k);
            }
        }
    }
    (dp, kp, dm, km)
}

fn follow<M: LiftedMap + ?Sized>(map: &M, band: &InstabilityBand, seed: (f64, f64), params: &ConnectParams) -> ConnectionCandidate {
    let (fwd, ef) = map.orbit(seed, params.m_plus as i64);
    let (bwd, eb) = map.orbit(seed, -(params.m_minus as i64));
    let mut orbit = Vec::with_capacity(fwd.len() + bwd.len() + 1);
    for (k, p) in bwd.iter().enumerate().rev() {
        orbit.push((-(k as i64) - 1, p.0, p.1));
    }
    orbit.push((0, seed.0, seed.1));
    for (k, p) in fwd.iter().enumerate() {
        orbit.push((k as i64 + 1, p.0, p.1));
    }
    let (dp, kp, dm, km) = approach_distances(band, &orbit);
    ConnectionCandidate {
        seed,
        m_plus: params.m_plus,
        m_minus: params.m_minus,
        delta_plus: dp,
        delta_minus: dm,
        approach_steps: (kp, km),
        orbit,
        truncated: ef.is_some() || eb.is_some(),
    }
}

fn better(a: &ConnectionCandidate, b: &ConnectionCandidate) -> bool {
    a.score().partial_cmp(&b.score()) == Some(std::cmp::Ordering::Less)
}

/// Seeds: the scan's interior seeds plus `random_seeds` uniform draws in
/// the band. Degenerate bands of zero width contribute a seed on the
/// common circle.
pub fn connect_seeds(band: &InstabilityBand, params: &ConnectParams) -> Vec<(f64, f64)> {
    let mut seeds: Vec<(f64, f64)> = band.interior.iter().map(|s| s.seed).filter(|&s| band.contains(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    for _ in 0..params.random_seeds {
        let x: f64 = rng.gen();
        let u: f64 = rng.gen_range(0.05..0.95);
        let (lo, hi) = (band.lower.graph_value(x), band.upper.graph_value(x));
        if hi > lo {
            seeds.push((x, lo + u * (hi - lo)));
        }
    }
    if seeds.is_empty() {
        let x = band.lower.seed.0;
        seeds.push((x, band.lower.graph_value(x)));
    }
    seeds
}

/// Best seed by `(δ₊ + δ₋, δ₊)`, optionally refined by golden-section
/// search over the seed's `x`.
pub fn connect_search<M: LiftedMap + ?Sized>(map: &M, scan: &ScanOutcome, params: &ConnectParams) -> Result<ConnectionCandidate> {
    let band = scan
        .band()
        .ok_or_else(|| TwistError::Precondition("no instability band to connect across".into()))?;
    connect_in_band(map, band, params)
}

pub fn connect_in_band<M: LiftedMap + ?Sized>(map: &M, band: &InstabilityBand, params: &ConnectParams) -> Result<ConnectionCandidate> {
    let seeds = connect_seeds(band, params);
    let runs: Vec<ConnectionCandidate> = seeds.par_iter().map(|&s| follow(map, band, s, params)).collect();
    let mut best: Option<ConnectionCandidate> = None;
    for c in runs {
        if c.orbit.len() <= 1 && c.truncated {
            continue;
        }
        if best.as_ref().map_or(true, |b| better(&c, b)) {
            best = Some(c);
        }
    }
    let mut best = best.ok_or_else(|| TwistError::TubeEscape("every seed orbit left the domain immediately".into()))?;
    if params.refine_iters > 0 && best.delta_plus + best.delta_minus > 0.0 {
        let y = best.seed.1;
        let total = |x: f64| {
            let c = follow(map, band, (x, y), params);
            (c.delta_plus + c.delta_minus, c)
        };
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (best.seed.0 - params.refine_radius, best.seed.0 + params.refine_radius);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut cc) = total(c);
        let (mut fd, mut cd) = total(d);
        for _ in 0..params.refine_iters {
            if fc < fd {
                b = d;
                (d, fd, cd) = (c, fc, cc);
                c = b - g * (b - a);
                (fc, cc) = total(c);
            } else {
                a = c;
                (c, fc, cc) = (d, fd, cd);
                d = a + g * (b - a);
                (fd, cd) = total(d);
            }
        }
        for cand in [cc, cd] {
            if band.contains(cand.seed) && better(&cand, &best) {
                best = cand;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twistdyn::circle::{circle_detect, CircleParams};
    use crate::twistdyn::maps::Shear;
    use crate::twistdyn::scan::{AbsenceReport, PeriodicScan};

    fn shear_band(lo: f64, hi: f64) -> InstabilityBand {
        let p = CircleParams::default();
        let none = PeriodicScan {
            q_max: 50,
            found: None,
            closest: 1.0,
        };
        InstabilityBand {
            lower: circle_detect(&Shear, (0.0, lo), &p),
            upper: circle_detect(&Shear, (0.0, hi), &p),
            omega_minus: lo,
            omega_plus: hi,
            interior: Vec::new(),
            seeds: Vec::new(),
            periodic_lower: none.clone(),
            periodic_upper: none,
        }
    }

    #[test]
    fn absent_band_is_a_precondition_error() {
        let scan = ScanOutcome::Absent(AbsenceReport {
            reason: "none".into(),
            verified_circles: 0,
            refuted_seeds: 0,
            seeds: Vec::new(),
        });
        let err = connect_search(&Shear, &scan, &ConnectParams::default()).unwrap_err();
        assert!(matches!(err, TwistError::Precondition(_)));
    }

    #[test]
    fn zero_width_band_gives_zero_distances() {
        let y = 2f64.sqrt() - 1.0;
        let band = shear_band(y, y);
        let c = connect_in_band(&Shear, &band, &ConnectParams::default()).unwrap();
        assert_eq!((c.delta_plus, c.delta_minus), (0.0, 0.0));
    }

    #[test]
    fn deltas_are_minima_of_the_record() {
        let band = shear_band(0.2 + 1e-3 * 2f64.sqrt(), 0.4 + 1e-3 * 3f64.sqrt());
        let params = ConnectParams {
            m_plus: 50,
            m_minus: 40,
            random_seeds: 5,
            refine_iters: 4,
            ..Default::default()
        };
        let c = connect_in_band(&Shear, &band, &params).unwrap();
        let (dp, kp, dm, km) = approach_distances(&band, &c.orbit);
        assert_eq!((dp, dm), (c.delta_plus, c.delta_minus));
        assert_eq!((kp, km), c.approach_steps);
        assert_eq!(c.orbit.len(), 91);
        assert!(c.orbit_csv().starts_with("k,x,y\n-40,"));
    }
}
