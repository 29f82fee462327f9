use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// One mode `c·cos(2π k·x) + s·sin(2π k·x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: [i32; 2],
    pub cos: f64,
    pub sin: f64,
}

/// Value, gradient and Hessian of a field at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// A real trigonometric polynomial on the 2-torus, ℤ²-periodic by construction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    pub terms: Vec<FourierTerm>,
}

impl FourierField {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn single(k: [i32; 2], cos: f64, sin: f64) -> Self {
        Self {
            terms: vec![FourierTerm { k, cos, sin }],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::single([0, 0], c, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.cos == 0.0 && (t.sin == 0.0 || t.k == [0, 0]))
    }

    /// Adds to the coefficient of mode `k`, merging with an existing term.
    pub fn add(&mut self, k: [i32; 2], cos: f64, sin: f64) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.k == k) {
            t.cos += cos;
            t.sin += sin;
        } else {
            self.terms.push(FourierTerm { k, cos, sin });
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let phase = TAU * (t.k[0] as f64 * x[0] + t.k[1] as f64 * x[1]);
                let (s, c) = phase.sin_cos();
                t.cos * c + t.sin * s
            })
            .sum()
    }

    pub fn jet(&self, x: [f64; 2]) -> FieldJet {
        let mut out = FieldJet::default();
        for t in &self.terms {
            let kx = [TAU * t.k[0] as f64, TAU * t.k[1] as f64];
            let phase = kx[0] * x[0] + kx[1] * x[1];
            let (s, c) = phase.sin_cos();
            let val = t.cos * c + t.sin * s;
            let dval = -t.cos * s + t.sin * c;
            out.value += val;
            for i in 0..2 {
                out.grad[i] += kx[i] * dval;
                for j in 0..2 {
                    out.hess[i][j] -= kx[i] * kx[j] * val;
                }
            }
        }
        out
    }

    pub fn max_abs_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.cos.hypot(t.sin)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_matches_central_differences() {
        let f = FourierField {
            terms: vec![
                FourierTerm { k: [1, 0], cos: 0.3, sin: -0.2 },
                FourierTerm { k: [1, -2], cos: 0.1, sin: 0.05 },
            ],
        };
        let x = [0.17, 0.61];
        let jet = f.jet(x);
        let h = 1e-5;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let g = (f.value(xp) - f.value(xm)) / (2.0 * h);
            assert!((g - jet.grad[i]).abs() < 1e-8);
            let gp = f.jet(xp).grad;
            let gm = f.jet(xm).grad;
            for j in 0..2 {
                assert!(((gp[j] - gm[j]) / (2.0 * h) - jet.hess[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn periodic_under_integer_shifts() {
        let f = FourierField::single([2, 3], 0.4, 0.1);
        let x = [0.123, 0.456];
        assert!((f.value(x) - f.value([x[0] + 1.0, x[1] - 2.0])).abs() < 1e-14);
    }
}
