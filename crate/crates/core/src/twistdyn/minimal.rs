//! Periodic minimizers of the discrete action
//! `W = Σ h_{k mod n}(x_k, x_{k+1})` with `x_{k+nq} = x_k + p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::generating::{GenJet, GeneratingFunction};
use crate::error::{Result, TwistError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitConfiguration {
    pub p: i64,
    pub q: i64,
    pub factors: usize,
    /// `x_0, …, x_{nq−1}`; the next point is `x_0 + p`.
    pub x: Vec<f64>,
    /// Momenta `y_k = −∂₁h_k(x_k, x_{k+1})`.
    pub y: Vec<f64>,
    pub action: f64,
    /// Max discrete Euler–Lagrange residual.
    pub residual: f64,
    pub converged: bool,
    /// Max distance between `(x_{k+1}, y_{k+1})` and the factor map applied
    /// to `(x_k, y_k)`.
    pub orbit_error: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200 }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

struct Evaluation {
    action: f64,
    jets: Vec<GenJet>,
}

fn evaluate(gens: &[&dyn GeneratingFunction], x: &[f64], p: i64) -> Result<Evaluation> {
    let m = x.len();
    let n = gens.len();
    let mut jets = Vec::with_capacity(m);
    let mut action = 0.0;
    for k in 0..m {
        let next = if k + 1 == m { x[0] + p as f64 } else { x[k + 1] };
        let j = gens[k % n].eval(x[k], next)?;
        action += j.h;
        jets.push(j);
    }
    Ok(Evaluation { action, jets })
}

fn gradient(jets: &[GenJet]) -> Vec<f64> {
    let m = jets.len();
    (0..m).map(|k| jets[(k + m - 1) % m].d2 + jets[k].d1).collect()
}

fn hessian(jets: &[GenJet]) -> DMatrix<f64> {
    let m = jets.len();
    let mut h = DMatrix::zeros(m, m);
    for k in 0..m {
        let prev = &jets[(k + m - 1) % m];
        h[(k, k)] += prev.d22 + jets[k].d11;
        let next = (k + 1) % m;
        h[(k, next)] += jets[k].d12;
        h[(next, k)] += jets[k].d12;
    }
    h
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Damped Newton minimization of the periodic action. `init` defaults to
/// the equally spaced configuration `x_k = k·p/(nq)`.
pub fn minimal_periodic_orbit(
    gens: &[&dyn GeneratingFunction],
    p: i64,
    q: i64,
    init: Option<Vec<f64>>,
    opts: &MinimizerOptions,
) -> Result<OrbitConfiguration> {
    if gens.is_empty() {
        return Err(TwistError::InvalidInput("no generating functions".into()));
    }
    if q < 1 || gcd(p, q) != 1 {
        return Err(TwistError::InvalidInput(format!("need q >= 1 and gcd(p, q) = 1, got {p}/{q}")));
    }
    let n = gens.len();
    let m = n * q as usize;
    let mut x = match init {
        Some(v) if v.len() == m => v,
        Some(v) => {
            return Err(TwistError::InvalidInput(format!("initial configuration has {} points, need {m}", v.len())));
        }
        None => (0..m).map(|k| p as f64 * k as f64 / m as f64).collect(),
    };
    let mut eval = evaluate(gens, &x, p)?;
    let mut grad = gradient(&eval.jets);
    let mut mu = 1e-3;
    let mut iterations = 0;
    while max_abs(&grad) > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let h = hessian(&eval.jets);
        let scale = h.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-12);
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = h.clone();
            for k in 0..m {
                damped[(k, k)] += mu * scale;
            }
            let rhs = -DVector::from_column_slice(&grad);
            let Some(step) = damped.lu().solve(&rhs) else {
                mu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let Ok(te) = evaluate(gens, &trial, p) else {
                mu *= 10.0;
                continue;
            };
            let tg = gradient(&te.jets);
            // Near the minimum W stalls at roundoff; accept any step that
            // keeps W from rising beyond it and shrinks the gradient.
            let slack = 1e-13 * eval.action.abs().max(1.0);
            if te.action < eval.action || (te.action <= eval.action + slack && max_abs(&tg) < max_abs(&grad)) {
                x = trial;
                eval = te;
                grad = tg;
                mu = (mu * 0.3).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let residual = max_abs(&grad);
    let y: Vec<f64> = eval.jets.iter().map(GenJet::departure).collect();
    let mut orbit_error: f64 = 0.0;
    for k in 0..m {
        let (x1, y1) = if k + 1 == m { (x[0] + p as f64, y[0]) } else { (x[k + 1], y[k + 1]) };
        let (xe, ye) = gens[k % n].apply((x[k], y[k]))?;
        orbit_error = orbit_error.max((xe - x1).abs()).max((ye - y1).abs());
    }
    Ok(OrbitConfiguration {
        p,
        q,
        factors: n,
        x,
        y,
        action: eval.action,
        residual,
        converged: residual <= opts.tol,
        orbit_error,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twistdyn::generating::{ShearGenerating, StandardGenerating};

    #[test]
    fn shear_fixed_points() {
        let g: [&dyn GeneratingFunction; 1] = [&ShearGenerating];
        let o = minimal_periodic_orbit(&g, 0, 1, Some(vec![0.3]), &MinimizerOptions::default()).unwrap();
        assert_eq!(o.residual, 0.0);
        assert_eq!(o.y, vec![0.0]);
        assert!(o.converged);
    }

    #[test]
    fn shear_half_orbit() {
        let g: [&dyn GeneratingFunction; 1] = [&ShearGenerating];
        let o = minimal_periodic_orbit(&g, 1, 2, Some(vec![0.1, 0.4]), &MinimizerOptions::default()).unwrap();
        assert!(o.converged);
        for y in &o.y {
            assert!((y - 0.5).abs() < 1e-9);
        }
        assert!(o.orbit_error < 1e-9);
    }

    #[test]
    fn standard_map_two_factors() {
        let s = StandardGenerating { k: 0.8 };
        let g: [&dyn GeneratingFunction; 2] = [&s, &s];
        let o = minimal_periodic_orbit(&g, 2, 5, None, &MinimizerOptions::default()).unwrap();
        assert!(o.converged, "{o:?}");
        assert_eq!(o.x.len(), 10);
        assert!(o.orbit_error < 1e-9);
    }

    #[test]
    fn rejects_non_coprime() {
        let g: [&dyn GeneratingFunction; 1] = [&ShearGenerating];
        assert!(minimal_periodic_orbit(&g, 2, 4, None, &MinimizerOptions::default()).is_err());
    }
}
