//! Generating functions `h(x, x')` of twist maps: `∂₁h = −y`, `∂₂h = y'`.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::hamiltonian::{flow_jacobian, legendre, time_map, HamiltonianSystem, TwistFactorization};

/// `h` with first and second derivatives, plus the endpoint momenta.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenJet {
    pub h: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl GenJet {
    /// Momentum at departure, `−∂₁h`.
    pub fn departure(&self) -> f64 {
        -self.d1
    }

    /// Momentum at arrival, `∂₂h`.
    pub fn arrival(&self) -> f64 {
        self.d2
    }
}

pub trait GeneratingFunction: Sync {
    fn eval(&self, x: f64, x1: f64) -> Result<GenJet>;

    /// The twist map generated by `h`, used to check orbits.
    fn apply(&self, point: (f64, f64)) -> Result<(f64, f64)>;
}

/// `h = (x' − x)²/2`, generating the shear.
#[derive(Clone, Copy, Debug, Default)]
pub struct ShearGenerating;

impl GeneratingFunction for ShearGenerating {
    fn eval(&self, x: f64, x1: f64) -> Result<GenJet> {
        let d = x1 - x;
        Ok(GenJet {
            h: 0.5 * d * d,
            d1: -d,
            d2: d,
            d11: 1.0,
            d12: -1.0,
            d22: 1.0,
        })
    }

    fn apply(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        Ok((x + y, y))
    }
}

/// `h = (x' − x)²/2 − k/(4π²)·cos 2πx`, generating the standard map.
#[derive(Clone, Copy, Debug)]
pub struct StandardGenerating {
    pub k: f64,
}

impl GeneratingFunction for StandardGenerating {
    fn eval(&self, x: f64, x1: f64) -> Result<GenJet> {
        let d = x1 - x;
        let (s, c) = (TAU * x).sin_cos();
        let a = self.k / (TAU * TAU);
        Ok(GenJet {
            h: 0.5 * d * d - a * c,
            d1: -d + a * TAU * s,
            d2: d,
            d11: 1.0 + a * TAU * TAU * c,
            d12: -1.0,
            d22: 1.0,
        })
    }

    fn apply(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        let y1 = y + self.k / TAU * (TAU * x).sin();
        Ok((x + y1, y1))
    }
}

const SHOOT_TOL: f64 = 1e-12;
const SHOOT_MAX_ITER: usize = 100;

/// Least action of the `L_R` trajectory from `(s, x)` to `(t, x1)`, found
/// by shooting on the initial momentum. The action carries no additive
/// normalization: `h = ∫ L_R dt`.
pub fn generating_action(hsys: &HamiltonianSystem, s: f64, t: f64, x: f64, x1: f64, tol: f64) -> Result<GenJet> {
    let lag = hsys.lagrangian();
    let slope = (x1 - x) / (t - s);
    let mut p = legendre(lag, s, (x, slope)).1;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut last_miss = f64::NAN;
    for _ in 0..SHOOT_MAX_ITER {
        let fj = flow_jacobian(hsys, s, t, (x, p), tol)?;
        let miss = fj.end.0 - x1;
        last_miss = miss;
        if miss.abs() <= SHOOT_TOL * x1.abs().max(1.0) {
            let [[a, b], [_, d]] = fj.jac;
            if !(b > 0.0) {
                return Err(TwistError::Shooting(format!("no twist (dX/dp = {b}) at x = {x}")));
            }
            return Ok(GenJet {
                h: fj.action,
                d1: -p,
                d2: fj.end.1,
                d11: a / b,
                d12: -1.0 / b,
                d22: d / b,
            });
        }
        if miss > 0.0 {
            hi = p;
        } else {
            lo = p;
        }
        let b = fj.jac[0][1];
        let newton = p - miss / b;
        p = if b > 0.0 && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo + (lo - p).abs().max(0.5)
        } else {
            hi - (hi - p).abs().max(0.5)
        };
        if hi - lo <= 4.0 * f64::EPSILON * p.abs().max(1.0) {
            break;
        }
    }
    Err(TwistError::Shooting(format!(
        "from x = {x} to x' = {x1} over [{s}, {t}]: last miss {last_miss:e}, bracket [{lo}, {hi}]"
    )))
}

/// Generating function of factor `i` of a twist factorization, with a
/// sampled table of values for audits and plots.
#[derive(Clone, Debug)]
pub struct GeneratingTable {
    pub hsys: HamiltonianSystem,
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub tol: f64,
    pub grid: TableGrid,
    /// Row-major over `(x, Δ)`, `Δ = x' − x`.
    pub samples: Vec<GenJet>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub n_x: usize,
    pub n_delta: usize,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl TableGrid {
    fn x(&self, i: usize) -> f64 {
        i as f64 / self.n_x as f64
    }

    fn delta(&self, j: usize) -> f64 {
        self.delta_min + (self.delta_max - self.delta_min) * j as f64 / (self.n_delta - 1) as f64
    }
}

impl GeneratingTable {
    /// Handle for factor `i` without samples.
    pub fn for_factor(fact: &TwistFactorization, i: usize) -> Self {
        Self {
            hsys: fact.hsys.clone(),
            index: i,
            start: fact.breakpoints[i],
            end: fact.breakpoints[i + 1],
            tol: fact.tol,
            grid: TableGrid {
                n_x: 0,
                n_delta: 0,
                delta_min: 0.0,
                delta_max: 0.0,
            },
            samples: Vec::new(),
        }
    }

    /// One handle per factor.
    pub fn all(fact: &TwistFactorization) -> Vec<Self> {
        (0..fact.n()).map(|i| Self::for_factor(fact, i)).collect()
    }

    /// Fills the sample table on `grid`.
    pub fn fill(mut self, grid: TableGrid) -> Result<Self> {
        if grid.n_x == 0 || grid.n_delta < 2 || !(grid.delta_max > grid.delta_min) {
            return Err(TwistError::InvalidInput("degenerate generating-table grid".into()));
        }
        let samples: Result<Vec<GenJet>> = (0..grid.n_x * grid.n_delta)
            .into_par_iter()
            .map(|idx| {
                let x = grid.x(idx / grid.n_delta);
                self.eval(x, x + grid.delta(idx % grid.n_delta))
            })
            .collect();
        self.samples = samples?;
        self.grid = grid;
        Ok(self)
    }

    /// Largest sampled `∂₁₂h`; negative exactly when every sample twists.
    pub fn max_mixed_derivative(&self) -> f64 {
        self.samples.iter().map(|s| s.d12).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bicubic Hermite interpolation of the sampled `h` in `(x, Δ)`,
    /// periodic in `x`.
    pub fn interpolate(&self, x: f64, x1: f64) -> Option<f64> {
        let g = &self.grid;
        if self.samples.is_empty() {
            return None;
        }
        let delta = x1 - x;
        let hd = (g.delta_max - g.delta_min) / (g.n_delta - 1) as f64;
        let fj = (delta - g.delta_min) / hd;
        if fj < 0.0 || fj > (g.n_delta - 1) as f64 {
            return None;
        }
        let j = (fj.floor() as usize).min(g.n_delta - 2);
        let v = fj - j as f64;
        let shift = x.floor();
        let fx = (x - shift) * g.n_x as f64;
        let i = (fx.floor() as usize).min(g.n_x - 1);
        let u = fx - i as f64;
        let hx = 1.0 / g.n_x as f64;
        // In (x, Δ): ∂_x = ∂₁ + ∂₂, ∂_Δ = ∂₂, ∂_xΔ = ∂₁₂ + ∂₂₂.
        let corner = |ii: usize, jj: usize| {
            let s = &self.samples[(ii % g.n_x) * g.n_delta + jj];
            [s.h, (s.d1 + s.d2) * hx, s.d2 * hd, (s.d12 + s.d22) * hx * hd]
        };
        let c = [corner(i, j), corner(i + 1, j), corner(i, j + 1), corner(i + 1, j + 1)];
        let h0 = |s: f64| (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h1 = |s: f64| s * (1.0 - s) * (1.0 - s);
        let h2 = |s: f64| s * s * (3.0 - 2.0 * s);
        let h3 = |s: f64| s * s * (s - 1.0);
        let (a0, a1, a2, a3) = (h0(u), h1(u), h2(u), h3(u));
        let (b0, b1, b2, b3) = (h0(v), h1(v), h2(v), h3(v));
        let val = c[0][0] * a0 * b0 + c[1][0] * a2 * b0 + c[2][0] * a0 * b2 + c[3][0] * a2 * b2
            + c[0][1] * a1 * b0 + c[1][1] * a3 * b0 + c[2][1] * a1 * b2 + c[3][1] * a3 * b2
            + c[0][2] * a0 * b1 + c[1][2] * a2 * b1 + c[2][2] * a0 * b3 + c[3][2] * a2 * b3
            + c[0][3] * a1 * b1 + c[1][3] * a3 * b1 + c[2][3] * a1 * b3 + c[3][3] * a3 * b3;
        Some(val)
    }
}

impl GeneratingFunction for GeneratingTable {
    fn eval(&self, x: f64, x1: f64) -> Result<GenJet> {
        generating_action(&self.hsys, self.start, self.end, x, x1, self.tol)
    }

    fn apply(&self, point: (f64, f64)) -> Result<(f64, f64)> {
        time_map(&self.hsys, self.start, self.end, point, self.tol)
    }
}

/// Checks `∂₂h = p₁` and `−∂₁h = p₀` by flowing `(x, −∂₁h)` with a separate
/// integration: returns the larger of the endpoint miss and `|p₁ − ∂₂h|`.
pub fn derivative_identity_error<G: GeneratingFunction + ?Sized>(gen: &G, x: f64, x1: f64) -> Result<f64> {
    let j = gen.eval(x, x1)?;
    let (xe, pe) = gen.apply((x, j.departure()))?;
    Ok((xe - x1).abs().max((pe - j.arrival()).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{factorize_time1, FactorizationOptions};
    use crate::metric::MetricSpec;
    use crate::reduction::{build_reduced, truncate, PrimeDirection};
    use std::sync::Arc;

    fn flat_table() -> GeneratingTable {
        let lag = truncate(build_reduced(Arc::new(MetricSpec::flat()), PrimeDirection::e1()), 2.0, 1.0).unwrap();
        let h = HamiltonianSystem::new(Arc::new(lag));
        let f = factorize_time1(
            &h,
            h.default_tube(),
            &FactorizationOptions {
                grid: 8,
                ..Default::default()
            },
        )
        .unwrap();
        GeneratingTable::for_factor(&f, 0)
    }

    #[test]
    fn flat_action_is_segment_length() {
        let t = flat_table();
        for (x, x1) in [(0.0, 0.0), (0.2, 0.9), (0.5, -0.7), (1.3, 2.1)] {
            let j = t.eval(x, x1).unwrap();
            let d: f64 = x1 - x;
            let len = (1.0 + d * d).sqrt();
            assert!((j.h - len).abs() < 1e-9, "{x} {x1}: {} vs {len}", j.h);
            assert!((j.d2 - d / len).abs() < 1e-9);
            assert!((j.d1 + d / len).abs() < 1e-9);
            assert!((j.d12 + 1.0 / (len * len * len)).abs() < 1e-7);
        }
    }

    #[test]
    fn table_is_periodic_and_interpolates() {
        let t = flat_table()
            .fill(TableGrid {
                n_x: 4,
                n_delta: 9,
                delta_min: -1.0,
                delta_max: 1.0,
            })
            .unwrap();
        assert!(t.max_mixed_derivative() < 0.0);
        let a = t.eval(0.3, 0.8).unwrap().h;
        let b = t.eval(1.3, 1.8).unwrap().h;
        assert!((a - b).abs() < 1e-10);
        let approx = t.interpolate(0.3, 0.8).unwrap();
        assert!((approx - a).abs() < 1e-3, "{approx} {a}");
        assert!(t.interpolate(0.0, 5.0).is_none());
        assert!(derivative_identity_error(&t, 0.1, 0.6).unwrap() < 1e-8);
    }

    #[test]
    fn standard_generating_matches_map() {
        let g = StandardGenerating { k: 0.7 };
        let (x, x1) = (0.23, 0.71);
        let j = g.eval(x, x1).unwrap();
        let (xe, ye) = g.apply((x, j.departure())).unwrap();
        assert!((xe - x1).abs() < 1e-14 && (ye - j.arrival()).abs() < 1e-14);
    }
}
