//! Lifted cylinder maps `ℝ × ℝ → ℝ × ℝ` commuting with `x ↦ x + 1`.

use std::f64::consts::TAU;
use std::sync::Arc;

use crate::error::{Result, TwistError};
use crate::hamiltonian::{legendre, legendre_inverse, HamiltonianSystem};
use crate::reduction::{el_map, TruncatedLagrangian};

pub trait LiftedMap: Sync {
    fn forward(&self, point: (f64, f64)) -> Result<(f64, f64)>;
    fn backward(&self, point: (f64, f64)) -> Result<(f64, f64)>;

    /// Forward (`steps > 0`) or backward iterates, excluding the start.
    fn orbit(&self, start: (f64, f64), steps: i64) -> (Vec<(f64, f64)>, Option<TwistError>) {
        let mut out = Vec::with_capacity(steps.unsigned_abs() as usize);
        let mut p = start;
        for _ in 0..steps.unsigned_abs() {
            let next = if steps > 0 { self.forward(p) } else { self.backward(p) };
            match next {
                Ok(q) => {
                    out.push(q);
                    p = q;
                }
                Err(e) => return (out, Some(e)),
            }
        }
        (out, None)
    }
}

/// `(x, y) ↦ (x + y, y)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Shear;

impl LiftedMap for Shear {
    fn forward(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        Ok((x + y, y))
    }

    fn backward(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        Ok((x - y, y))
    }
}

/// `(x, y) ↦ (x + α, y)`.
#[derive(Clone, Copy, Debug)]
pub struct RigidRotation {
    pub alpha: f64,
}

impl LiftedMap for RigidRotation {
    fn forward(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        Ok((x + self.alpha, y))
    }

    fn backward(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        Ok((x - self.alpha, y))
    }
}

/// Chirikov's map `y' = y + k/(2π)·sin 2πx`, `x' = x + y'`.
#[derive(Clone, Copy, Debug)]
pub struct StandardMap {
    pub k: f64,
}

impl LiftedMap for StandardMap {
    fn forward(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        let y1 = y + self.k / TAU * (TAU * x).sin();
        Ok((x + y1, y1))
    }

    fn backward(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        let x0 = x - y;
        Ok((x0, y - self.k / TAU * (TAU * x0).sin()))
    }
}

/// The time-1 map `ψ^{0,1} = ℒ₀ ∘ φ^{0,1} ∘ ℒ₀⁻¹` of `L_R` in `(x, p)`
/// coordinates (`ℒ₁ = ℒ₀` by periodicity in `t`).
///
/// Points whose Legendre preimage has `|r| ≥ R` are rejected with a tube
/// escape: there `L_R` no longer describes geodesics.
#[derive(Clone, Debug)]
pub struct TimeOneMap {
    pub lag: Arc<TruncatedLagrangian>,
    pub tol: f64,
}

impl TimeOneMap {
    pub fn new(hsys: &HamiltonianSystem, tol: f64) -> Self {
        Self {
            lag: hsys.lagrangian_arc(),
            tol,
        }
    }

    fn step(&self, point: (f64, f64), s: f64, t: f64) -> Result<(f64, f64)> {
        let (x, r) = legendre_inverse(&self.lag, s, point)?;
        if r.abs() >= self.lag.r_cut {
            return Err(TwistError::TubeEscape(format!("slope r = {r} outside |r| < R = {}", self.lag.r_cut)));
        }
        let end = el_map(&*self.lag, s, t, (x, r), self.tol)?;
        Ok(legendre(&self.lag, t, end))
    }
}

impl LiftedMap for TimeOneMap {
    fn forward(&self, point: (f64, f64)) -> Result<(f64, f64)> {
        self.step(point, 0.0, 1.0)
    }

    fn backward(&self, point: (f64, f64)) -> Result<(f64, f64)> {
        self.step(point, 1.0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverses() {
        let maps: [&dyn LiftedMap; 3] = [&Shear, &RigidRotation { alpha: 0.3 }, &StandardMap { k: 0.9 }];
        for m in maps {
            let p = (0.37, -0.21);
            let q = m.backward(m.forward(p).unwrap()).unwrap();
            assert!((q.0 - p.0).abs() < 1e-14 && (q.1 - p.1).abs() < 1e-14);
        }
    }

    #[test]
    fn orbit_lengths() {
        let (fwd, err) = Shear.orbit((0.0, 0.5), 4);
        assert!(err.is_none());
        assert_eq!(fwd.last(), Some(&(2.0, 0.5)));
        let (bwd, _) = Shear.orbit((0.0, 0.5), -2);
        assert_eq!(bwd, vec![(-0.5, 0.5), (-1.0, 0.5)]);
    }
}
