//! Adaptive Dormand–Prince 5(4) integration with step observers and
//! crossing location.
//!
//! Every accepted step is handed to an observer as a [`Segment`] carrying
//! both endpoints and their derivatives. Event location polishes a cubic
//! Hermite guess by re-running a single RK step from the segment start, so
//! located crossings carry the integrator's own accuracy rather than the
//! interpolant's.

use crate::error::{Result, TwistError};

/// Right-hand side of `dy/dt = f(t, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> Result<[f64; N]>;
}

impl<const N: usize, T: OdeSystem<N> + ?Sized> OdeSystem<N> for &T {
    fn rhs(&self, t: f64, y: &[f64; N]) -> Result<[f64; N]> {
        (**self).rhs(t, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub fn uniform(tol: f64) -> Self {
        Self { rtol: tol, atol: tol }
    }
}

/// One accepted step `[t0, t1]`.
#[derive(Clone, Debug)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    pub y0: [f64; N],
    pub f0: [f64; N],
    pub t1: f64,
    pub y1: [f64; N],
    pub f1: [f64; N],
}

impl<const N: usize> Segment<N> {
    /// Cubic Hermite interpolant through both endpoints.
    pub fn hermite(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
        out
    }
}

/// Observer verdict after each accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct Integration<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub steps: usize,
    pub rejected: usize,
    pub stopped: bool,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Dormand–Prince 5(4) with FSAL and an I-controller.
#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub tol: Tolerance,
    pub max_steps: usize,
    /// Upper bound on |h|; `f64::INFINITY` disables it.
    pub h_max: f64,
}

impl Dopri5 {
    pub fn new(tol: f64) -> Self {
        Self {
            tol: Tolerance::uniform(tol),
            max_steps: 2_000_000,
            h_max: f64::INFINITY,
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    /// One raw RK step of size `h` (may be negative). Returns the fifth-order
    /// solution, its derivative (FSAL) and the scaled error norm.
    pub fn step<S: OdeSystem<N>, const N: usize>(
        &self,
        sys: &S,
        t: f64,
        y: &[f64; N],
        f: &[f64; N],
        h: f64,
    ) -> Result<([f64; N], [f64; N], f64)> {
        let mut tmp = [0.0; N];
        for i in 0..N {
            tmp[i] = y[i] + h * A21 * f[i];
        }
        let k2 = sys.rhs(t + C2 * h, &tmp)?;
        for i in 0..N {
            tmp[i] = y[i] + h * (A31 * f[i] + A32 * k2[i]);
        }
        let k3 = sys.rhs(t + C3 * h, &tmp)?;
        for i in 0..N {
            tmp[i] = y[i] + h * (A41 * f[i] + A42 * k2[i] + A43 * k3[i]);
        }
        let k4 = sys.rhs(t + C4 * h, &tmp)?;
        for i in 0..N {
            tmp[i] = y[i] + h * (A51 * f[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        let k5 = sys.rhs(t + C5 * h, &tmp)?;
        for i in 0..N {
            tmp[i] = y[i] + h * (A61 * f[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let k6 = sys.rhs(t + h, &tmp)?;
        let mut y1 = [0.0; N];
        for i in 0..N {
            y1[i] = y[i] + h * (B1 * f[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        let k7 = sys.rhs(t + h, &y1)?;
        let mut acc = 0.0;
        for i in 0..N {
            let e = h * (E1 * f[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y1[i].abs());
            acc += (e / sc) * (e / sc);
        }
        let err = (acc / N as f64).sqrt();
        Ok((y1, k7, err))
    }

    fn initial_step<S: OdeSystem<N>, const N: usize>(
        &self,
        sys: &S,
        t0: f64,
        y0: &[f64; N],
        f0: &[f64; N],
        dir: f64,
        span: f64,
    ) -> Result<f64> {
        let norm = |v: &[f64; N]| {
            let mut acc = 0.0;
            for i in 0..N {
                let sc = self.tol.atol + self.tol.rtol * y0[i].abs();
                acc += (v[i] / sc) * (v[i] / sc);
            }
            (acc / N as f64).sqrt()
        };
        let d0 = norm(y0);
        let d1 = norm(f0);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span);
        let mut y1 = [0.0; N];
        for i in 0..N {
            y1[i] = y0[i] + dir * h0 * f0[i];
        }
        let f1 = sys.rhs(t0 + dir * h0, &y1)?;
        let mut diff = [0.0; N];
        for i in 0..N {
            diff[i] = f1[i] - f0[i];
        }
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span).min(self.h_max))
    }

    /// Integrates from `t0` to `t1` (either direction), reporting each
    /// accepted step to `observer`. The final step lands exactly on `t1`.
    pub fn integrate_with<S, O, const N: usize>(
        &self,
        sys: &S,
        t0: f64,
        y0: [f64; N],
        t1: f64,
        mut observer: O,
    ) -> Result<Integration<N>>
    where
        S: OdeSystem<N>,
        O: FnMut(&Segment<N>) -> Result<Flow>,
    {
        let span = (t1 - t0).abs();
        if span == 0.0 {
            return Ok(Integration {
                t: t0,
                y: y0,
                steps: 0,
                rejected: 0,
                stopped: false,
            });
        }
        let dir = (t1 - t0).signum();
        let mut t = t0;
        let mut y = y0;
        let mut f = sys.rhs(t, &y)?;
        let mut h = self.initial_step(sys, t, &y, &f, dir, span)?;
        let mut steps = 0;
        let mut rejected = 0;
        let mut last_rejected = false;
        loop {
            if steps + rejected >= self.max_steps {
                return Err(TwistError::Integrator {
                    t,
                    state: y.to_vec(),
                    reason: format!("step budget of {} exhausted", self.max_steps),
                });
            }
            let remaining = (t1 - t).abs();
            let mut last = false;
            if h >= remaining {
                h = remaining;
                last = true;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(TwistError::Integrator {
                    t,
                    state: y.to_vec(),
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let (y_new, f_new, err) = match self.step(sys, t, &y, &f, dir * h) {
                Ok(v) => v,
                // A failing trial stage (e.g. a state left the domain) is
                // treated as a rejected step.
                Err(e) if h > 1e-10 * span => {
                    let _ = e;
                    rejected += 1;
                    h *= 0.25;
                    last_rejected = true;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !err.is_finite() || err > 1.0 {
                rejected += 1;
                let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.1) } else { 0.1 };
                h *= factor.min(1.0);
                last_rejected = true;
                continue;
            }
            let t_new = if last { t1 } else { t + dir * h };
            steps += 1;
            let seg = Segment {
                t0: t,
                y0: y,
                f0: f,
                t1: t_new,
                y1: y_new,
                f1: f_new,
            };
            t = t_new;
            y = y_new;
            f = f_new;
            if observer(&seg)? == Flow::Stop {
                return Ok(Integration {
                    t,
                    y,
                    steps,
                    rejected,
                    stopped: true,
                });
            }
            if last {
                return Ok(Integration {
                    t,
                    y,
                    steps,
                    rejected,
                    stopped: false,
                });
            }
            let mut factor = if err == 0.0 { 10.0 } else { 0.9 * err.powf(-0.2) };
            factor = factor.clamp(0.2, 10.0);
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h = (h * factor).min(self.h_max);
        }
    }

    pub fn integrate<S: OdeSystem<N>, const N: usize>(
        &self,
        sys: &S,
        t0: f64,
        y0: [f64; N],
        t1: f64,
    ) -> Result<[f64; N]> {
        Ok(self.integrate_with(sys, t0, y0, t1, |_| Ok(Flow::Continue))?.y)
    }

    /// States at each of `times` (monotone, starting at or after `t0` in the
    /// direction of travel), integrating piecewise between them.
    pub fn integrate_at<S: OdeSystem<N>, const N: usize>(
        &self,
        sys: &S,
        t0: f64,
        y0: [f64; N],
        times: &[f64],
    ) -> Result<Vec<[f64; N]>> {
        let mut out = Vec::with_capacity(times.len());
        let mut t = t0;
        let mut y = y0;
        for &tk in times {
            y = self.integrate(sys, t, y, tk)?;
            t = tk;
            out.push(y);
        }
        Ok(out)
    }

    /// Locates `g(t, y(t)) = 0` inside an accepted segment whose endpoints
    /// bracket a sign change. Each trial state is produced by a single RK
    /// step from the segment start, so the returned state carries the
    /// integrator's accuracy.
    pub fn locate<S, G, const N: usize>(
        &self,
        sys: &S,
        seg: &Segment<N>,
        g: G,
        t_tol: f64,
    ) -> Result<(f64, [f64; N])>
    where
        S: OdeSystem<N>,
        G: Fn(f64, &[f64; N]) -> f64,
    {
        let state_at = |tau: f64| -> Result<[f64; N]> {
            if tau == seg.t0 {
                return Ok(seg.y0);
            }
            if tau == seg.t1 {
                return Ok(seg.y1);
            }
            Ok(self.step(sys, seg.t0, &seg.y0, &seg.f0, tau - seg.t0)?.0)
        };
        let ga = g(seg.t0, &seg.y0);
        let gb = g(seg.t1, &seg.y1);
        if ga == 0.0 {
            return Ok((seg.t0, seg.y0));
        }
        if gb == 0.0 {
            return Ok((seg.t1, seg.y1));
        }
        if ga.signum() == gb.signum() {
            return Err(TwistError::InvalidInput("segment does not bracket a crossing".into()));
        }
        let root = brent(
            |tau| {
                let y = state_at(tau)?;
                Ok(g(tau, &y))
            },
            seg.t0,
            seg.t1,
            ga,
            gb,
            t_tol,
            100,
        )?;
        Ok((root, state_at(root)?))
    }
}

/// Brent's bracketed root finder for a fallible scalar function.
pub fn brent<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa.signum() == fb.signum() && fa != 0.0 && fb != 0.0 {
        return Err(TwistError::InvalidInput("brent: no sign change".into()));
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..max_iter {
        if fb == 0.0 || (b - a).abs() <= xtol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc)) + b * fa * fc / ((fb - fa) * (fb - fc)) + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let between = if lo < b { s > lo && s < b } else { s > b && s < lo };
        if !between
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
            || (mflag && (b - c).abs() < xtol)
            || (!mflag && (c - d).abs() < xtol)
        {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s)?;
        d = c;
        c = b;
        fc = fb;
        if fa.signum() != fs.signum() {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;
    impl OdeSystem<2> for Oscillator {
        fn rhs(&self, _t: f64, y: &[f64; 2]) -> Result<[f64; 2]> {
            Ok([y[1], -y[0]])
        }
    }

    struct Linear;
    impl OdeSystem<2> for Linear {
        fn rhs(&self, _t: f64, y: &[f64; 2]) -> Result<[f64; 2]> {
            Ok([y[1], 0.0])
        }
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        let solver = Dopri5::new(1e-11);
        let y = solver.integrate(&Oscillator, 0.0, [1.0, 0.0], 2.0 * std::f64::consts::PI).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9, "{y:?}");
        assert!(y[1].abs() < 1e-9);
    }

    #[test]
    fn backward_integration_returns() {
        let solver = Dopri5::new(1e-11);
        let y = solver.integrate(&Oscillator, 0.0, [0.3, 0.7], 5.0).unwrap();
        let back = solver.integrate(&Oscillator, 5.0, y, 0.0).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-9 && (back[1] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn linear_motion_is_exact() {
        let solver = Dopri5::new(1e-6);
        let y = solver.integrate(&Linear, 0.0, [0.25, 0.375], 3.0).unwrap();
        assert!((y[0] - (0.25 + 3.0 * 0.375)).abs() < 1e-14);
    }

    #[test]
    fn locate_quarter_period_crossing() {
        let solver = Dopri5::new(1e-12);
        let mut hit = None;
        solver
            .integrate_with(&Oscillator, 0.0, [1.0, 0.0], 3.0, |seg| {
                if seg.y0[0] > 0.0 && seg.y1[0] <= 0.0 {
                    hit = Some(solver.locate(&Oscillator, seg, |_, y| y[0], 1e-14)?);
                    return Ok(Flow::Stop);
                }
                Ok(Flow::Continue)
            })
            .unwrap();
        let (t, y) = hit.unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-10, "{t}");
        assert!(y[0].abs() < 1e-12);
    }

    #[test]
    fn integrate_at_samples_requested_times() {
        let solver = Dopri5::new(1e-12);
        let ys = solver.integrate_at(&Oscillator, 0.0, [1.0, 0.0], &[0.5, 1.0, 1.5]).unwrap();
        for (k, y) in ys.iter().enumerate() {
            let t = 0.5 * (k + 1) as f64;
            assert!((y[0] - t.cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn brent_finds_cube_root() {
        let r = brent(|x| Ok(x * x * x - 2.0), 0.0, 2.0, -2.0, 6.0, 1e-15, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }
}
