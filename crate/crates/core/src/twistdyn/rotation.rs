use serde::{Deserialize, Serialize};

use super::maps::LiftedMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationMethod {
    Plain,
    WeightedBirkhoff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub value: f64,
    /// `|estimate(N) − estimate(N/2)|`.
    pub uncertainty: f64,
    /// Iterates actually used.
    pub iterates: usize,
    pub method: RotationMethod,
    /// Set when the orbit left the map's domain before `N` iterates.
    pub partial: bool,
}

fn bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

/// Weighted average of `d[0..n]` with the smooth bump weight.
fn weighted_mean(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, dk) in d.iter().enumerate() {
        let w = bump((k as f64 + 0.5) / n);
        num += w * dk;
        den += w;
    }
    num / den
}

fn plain_mean(d: &[f64]) -> f64 {
    d.iter().sum::<f64>() / d.len() as f64
}

/// Rotation number from the displacements of a lifted orbit `x_0, …, x_N`.
pub fn rotation_from_orbit(xs: &[f64], method: RotationMethod, partial: bool) -> Option<RotationEstimate> {
    if xs.len() < 3 {
        return None;
    }
    let d: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = match method {
        RotationMethod::Plain => plain_mean,
        RotationMethod::WeightedBirkhoff => weighted_mean,
    };
    let full = mean(&d);
    let half = mean(&d[..d.len() / 2]);
    Some(RotationEstimate {
        value: full,
        uncertainty: (full - half).abs(),
        iterates: d.len(),
        method,
        partial,
    })
}

/// Weighted Birkhoff estimate of the rotation number of the orbit of
/// `seed` over `n` iterates. `None` if fewer than two iterates exist.
pub fn rotation_number<M: LiftedMap + ?Sized>(map: &M, seed: (f64, f64), n: usize) -> Option<RotationEstimate> {
    rotation_number_with(map, seed, n, RotationMethod::WeightedBirkhoff)
}

pub fn rotation_number_with<M: LiftedMap + ?Sized>(map: &M, seed: (f64, f64), n: usize, method: RotationMethod) -> Option<RotationEstimate> {
    let (orbit, err) = map.orbit(seed, n.max(2) as i64);
    let xs: Vec<f64> = std::iter::once(seed.0).chain(orbit.iter().map(|p| p.0)).collect();
    rotation_from_orbit(&xs, method, err.is_some())
}
