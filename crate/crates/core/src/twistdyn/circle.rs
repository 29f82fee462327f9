//! Classification of an orbit as lying on an invariant graph, refuting
//! that, or neither.

use serde::{Deserialize, Serialize};

use super::maps::LiftedMap;
use super::rotation::{rotation_from_orbit, RotationEstimate, RotationMethod};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    GraphVerified,
    Indeterminate,
    Refuted,
}

/// Two iterates whose circular order the map reverses: `a_i < a_j` but
/// the images, lifted by the actual displacements, come out in the wrong
/// order. `i` and `j` index the orbit of the seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderWitness {
    pub i: usize,
    pub j: usize,
    /// Amount by which the images are out of order.
    pub violation: f64,
    /// Whether the pair wraps across `x = 0`.
    pub wrap: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    pub iterates: usize,
    /// Largest allowed gap between consecutive `x mod 1`.
    pub density: f64,
    pub order_tol: f64,
    pub lipschitz_cap: f64,
    pub rotation_tol: f64,
}

impl Default for CircleParams {
    fn default() -> Self {
        Self {
            iterates: 2000,
            density: 0.02,
            order_tol: 1e-9,
            lipschitz_cap: 100.0,
            rotation_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleCandidate {
    pub seed: (f64, f64),
    pub rotation: Option<RotationEstimate>,
    /// `(x mod 1, y)` sorted by `x`.
    pub samples: Vec<(f64, f64)>,
    pub lipschitz: f64,
    pub max_gap: f64,
    pub verdict: Verdict,
    pub witness: Option<OrderWitness>,
    pub note: Option<String>,
}

fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Scans sorted positions for a pair whose images are out of order.
fn order_violation(orbit: &[(f64, f64)], tol: f64) -> Option<OrderWitness> {
    let n = orbit.len() - 1;
    let mut idx: Vec<usize> = (0..n).collect();
    let a: Vec<f64> = orbit[..n].iter().map(|p| frac(p.0)).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j)));
    let image = |k: usize| a[k] + (orbit[k + 1].0 - orbit[k].0);
    let mut worst: Option<OrderWitness> = None;
    let mut consider = |i: usize, j: usize, gap: f64, wrap: bool| {
        if gap < -tol && worst.map_or(true, |w| -gap > w.violation) {
            worst = Some(OrderWitness {
                i,
                j,
                violation: -gap,
                wrap,
            });
        }
    };
    for w in idx.windows(2) {
        consider(w[0], w[1], image(w[1]) - image(w[0]), false);
    }
    if n >= 2 {
        let (first, last) = (idx[0], idx[n - 1]);
        consider(last, first, image(first) + 1.0 - image(last), true);
    }
    worst
}

/// Re-checks a witness against a fresh orbit of length `iterates`.
pub fn witness_holds<M: LiftedMap + ?Sized>(map: &M, seed: (f64, f64), witness: &OrderWitness, tol: f64) -> bool {
    let need = witness.i.max(witness.j) + 1;
    let (tail, err) = map.orbit(seed, need as i64);
    if err.is_some() {
        return false;
    }
    let orbit: Vec<(f64, f64)> = std::iter::once(seed).chain(tail).collect();
    let (ai, aj) = (frac(orbit[witness.i].0), frac(orbit[witness.j].0));
    let bi = ai + orbit[witness.i + 1].0 - orbit[witness.i].0;
    let bj = aj + orbit[witness.j + 1].0 - orbit[witness.j].0;
    let gap = if witness.wrap { bj + 1.0 - bi } else { bj - bi };
    let ordered = if witness.wrap { ai >= aj } else { ai <= aj };
    ordered && gap < -tol
}

/// Iterates `seed` and classifies the orbit.
pub fn circle_detect<M: LiftedMap + ?Sized>(map: &M, seed: (f64, f64), params: &CircleParams) -> CircleCandidate {
    let (tail, err) = map.orbit(seed, params.iterates.max(2) as i64);
    let orbit: Vec<(f64, f64)> = std::iter::once(seed).chain(tail).collect();
    classify(&orbit, seed, err.map(|e| e.to_string()), params)
}

/// Classification of a precomputed orbit `seed, f(seed), …`.
pub fn classify(orbit: &[(f64, f64)], seed: (f64, f64), escape: Option<String>, params: &CircleParams) -> CircleCandidate {
    let xs: Vec<f64> = orbit.iter().map(|p| p.0).collect();
    let rotation = rotation_from_orbit(&xs, RotationMethod::WeightedBirkhoff, escape.is_some());
    let mut samples: Vec<(f64, f64)> = orbit.iter().map(|p| (frac(p.0), p.1)).collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cand = CircleCandidate {
        seed,
        rotation,
        samples,
        lipschitz: f64::INFINITY,
        max_gap: 1.0,
        verdict: Verdict::Indeterminate,
        witness: None,
        note: escape.map(|e| format!("orbit left the domain: {e}")),
    };
    if orbit.len() < 3 {
        return cand;
    }
    if let Some(w) = order_violation(orbit, params.order_tol) {
        cand.verdict = Verdict::Refuted;
        cand.witness = Some(w);
        return cand;
    }
    let s = &cand.samples;
    let mut max_gap = s[0].0 + 1.0 - s[s.len() - 1].0;
    let mut lip: f64 = 0.0;
    for w in s.windows(2) {
        let dx = w[1].0 - w[0].0;
        max_gap = max_gap.max(dx);
        if dx > 1e-9 {
            lip = lip.max((w[1].1 - w[0].1).abs() / dx);
        }
    }
    cand.max_gap = max_gap;
    cand.lipschitz = lip;
    let rot_ok = cand.rotation.as_ref().is_some_and(|r| r.uncertainty <= params.rotation_tol && !r.partial);
    if cand.note.is_none() && max_gap <= params.density && lip <= params.lipschitz_cap && rot_ok {
        cand.verdict = Verdict::GraphVerified;
    }
    cand
}

impl CircleCandidate {
    /// Piecewise-linear graph `y(x)`, periodic in `x`.
    pub fn graph_value(&self, x: f64) -> f64 {
        let s = &self.samples;
        let x = frac(x);
        let k = s.partition_point(|p| p.0 <= x);
        let (a, b) = if k == 0 {
            let last = s[s.len() - 1];
            ((last.0 - 1.0, last.1), s[0])
        } else if k == s.len() {
            (s[k - 1], (s[0].0 + 1.0, s[0].1))
        } else {
            (s[k - 1], s[k])
        };
        if b.0 == a.0 {
            return a.1;
        }
        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
    }

    pub fn mean_y(&self) -> f64 {
        self.samples.iter().map(|p| p.1).sum::<f64>() / self.samples.len() as f64
    }

    pub fn omega(&self) -> Option<f64> {
        self.rotation.as_ref().map(|r| r.value)
    }

    /// Up to `m` samples, evenly thinned, for reports.
    pub fn thinned(&self, m: usize) -> Vec<(f64, f64)> {
        let n = self.samples.len();
        if n <= m {
            return self.samples.clone();
        }
        (0..m).map(|i| self.samples[i * n / m]).collect()
    }
}

/// Runs [`circle_detect`] and re-verifies any witness on a fresh orbit.
pub fn circle_detect_checked<M: LiftedMap + ?Sized>(map: &M, seed: (f64, f64), params: &CircleParams) -> Result<CircleCandidate> {
    let c = circle_detect(map, seed, params);
    if let Some(w) = &c.witness {
        if !witness_holds(map, seed, w, params.order_tol) {
            return Err(crate::error::TwistError::Audit(format!("order witness {w:?} did not reproduce")));
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twistdyn::maps::{Shear, StandardMap};

    #[test]
    fn shear_irrational_levels_are_circles() {
        let c = circle_detect(&Shear, (0.0, 2f64.sqrt() - 1.0), &CircleParams::default());
        assert_eq!(c.verdict, Verdict::GraphVerified, "{:?}", c.note);
        assert_eq!(c.lipschitz, 0.0);
        assert!((c.graph_value(0.77) - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn shear_rational_level_is_indeterminate() {
        let c = circle_detect(&Shear, (0.0, 0.5), &CircleParams::default());
        assert_eq!(c.verdict, Verdict::Indeterminate);
        assert!(c.witness.is_none());
    }

    #[test]
    fn chaotic_standard_map_orbit_is_refuted_reproducibly() {
        let m = StandardMap { k: 1.5 };
        let seed = (0.1, 0.45);
        let c = circle_detect(&m, seed, &CircleParams::default());
        assert_eq!(c.verdict, Verdict::Refuted);
        let w = c.witness.unwrap();
        assert!(witness_holds(&m, seed, &w, 1e-9));
        assert!(circle_detect_checked(&m, seed, &CircleParams::default()).is_ok());
    }

    #[test]
    fn kam_circle_of_weak_standard_map() {
        let m = StandardMap { k: 0.2 };
        let c = circle_detect(&m, (0.0, 0.618), &CircleParams::default());
        assert_eq!(c.verdict, Verdict::GraphVerified, "{c:?}");
        assert!(c.lipschitz > 0.0 && c.lipschitz < 1.0);
    }
}
