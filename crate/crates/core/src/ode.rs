//! Dormand-Prince 5(4) integration of z'' = a(z).
//!
//! Both the adaptive and fixed-step modes use the same tableau; the fixed mode
//! simply ignores the embedded error estimate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MAX_STEPS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StepControl {
    Adaptive { atol: f64, rtol: f64 },
    Fixed { dt: f64 },
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::Adaptive { atol: 1e-12, rtol: 1e-10 }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepControl::Adaptive { atol, rtol } => {
                if !(atol > 0.0 && rtol > 0.0 && atol.is_finite() && rtol.is_finite()) {
                    return Err(invalid("tolerances must be positive"));
                }
            }
            StepControl::Fixed { dt } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(invalid("fixed step must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// One accepted integrator node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub z: f64,
    pub v: f64,
    pub a: f64,
}

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

type State = [f64; 2];

#[inline]
fn rhs<F: Fn(f64) -> f64>(f: &F, y: State) -> State {
    [y[1], f(y[0])]
}

#[inline]
fn axpy(y: State, h: f64, terms: &[(f64, State)]) -> State {
    let mut out = y;
    for &(c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// One DP5 step from y with k1 = f(y). Returns (y_new, k7, error estimate).
fn dp_step<F: Fn(f64) -> f64>(f: &F, y: State, k1: State, h: f64) -> (State, State, State) {
    let k2 = rhs(f, axpy(y, h, &[(A21, k1)]));
    let k3 = rhs(f, axpy(y, h, &[(A31, k1), (A32, k2)]));
    let k4 = rhs(f, axpy(y, h, &[(A41, k1), (A42, k2), (A43, k3)]));
    let k5 = rhs(f, axpy(y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]));
    let k6 = rhs(f, axpy(y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]));
    let y_new = axpy(y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    let k7 = rhs(f, y_new);
    let mut err = [0.0; 2];
    for i in 0..2 {
        err[i] = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y_new, k7, err)
}

fn err_norm(err: State, y0: State, y1: State, atol: f64, rtol: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        s += (err[i] / sc).powi(2);
    }
    (s / 2.0).sqrt()
}

fn initial_step<F: Fn(f64) -> f64>(f: &F, y: State, k1: State, atol: f64, rtol: f64, span: f64) -> f64 {
    let sc = [atol + rtol * y[0].abs(), atol + rtol * y[1].abs()];
    let norm = |v: State| ((v[0] / sc[0]).powi(2) + (v[1] / sc[1]).powi(2)).sqrt() / 2f64.sqrt();
    let d0 = norm(y);
    let d1 = norm(k1);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = axpy(y, h0, &[(1.0, k1)]);
    let k = rhs(f, y1);
    let d2 = norm([k[0] - k1[0], k[1] - k1[1]]) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrate z'' = accel(z) from (t0, z0, v0) to t_end, returning every
/// accepted node including both endpoints.
pub fn integrate<F: Fn(f64) -> f64>(
    accel: F,
    t0: f64,
    z0: f64,
    v0: f64,
    t_end: f64,
    control: StepControl,
) -> Result<Vec<Sample>> {
    control.validate()?;
    if !(t_end > t0) {
        return Err(invalid(format!("integration end {t_end} must follow start {t0}")));
    }
    if !(z0.is_finite() && v0.is_finite()) {
        return Err(invalid("initial state must be finite"));
    }
    let mut y: State = [z0, v0];
    let mut k1 = rhs(&accel, y);
    let mut t = t0;
    let mut out = vec![Sample { t, z: y[0], v: y[1], a: k1[1] }];

    match control {
        StepControl::Fixed { dt } => {
            let n = ((t_end - t0) / dt).ceil() as usize;
            if n > MAX_STEPS {
                return Err(invalid(format!("fixed step {dt} needs {n} steps")));
            }
            out.reserve(n);
            for i in 1..=n {
                let t_next = if i == n { t_end } else { t0 + i as f64 * dt };
                let h = t_next - t;
                if h <= 0.0 {
                    continue;
                }
                let (y_new, k7, _) = dp_step(&accel, y, k1, h);
                check_finite(t_next, y_new, out.last().unwrap())?;
                y = y_new;
                k1 = k7;
                t = t_next;
                out.push(Sample { t, z: y[0], v: y[1], a: k1[1] });
            }
        }
        StepControl::Adaptive { atol, rtol } => {
            let mut h = initial_step(&accel, y, k1, atol, rtol, t_end - t0);
            let mut steps = 0usize;
            let mut last_rejected = false;
            while t < t_end {
                steps += 1;
                if steps > MAX_STEPS {
                    let l = out.last().unwrap();
                    return Err(Error::IntegrationFailure {
                        t: l.t,
                        z: l.z,
                        v: l.v,
                        reason: "step budget exhausted".into(),
                    });
                }
                let remaining = t_end - t;
                let last = h >= remaining * (1.0 - 1e-12);
                let h_try = if last { remaining } else { h };
                if h_try <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
                    let l = out.last().unwrap();
                    return Err(Error::IntegrationFailure {
                        t: l.t,
                        z: l.z,
                        v: l.v,
                        reason: format!("step size underflow (h = {h_try:e})"),
                    });
                }
                let (y_new, k7, e) = dp_step(&accel, y, k1, h_try);
                let en = err_norm(e, y, y_new, atol, rtol);
                if !en.is_finite() {
                    h = h_try * 0.2;
                    last_rejected = true;
                    continue;
                }
                if en <= 1.0 {
                    t = if last { t_end } else { t + h_try };
                    y = y_new;
                    k1 = k7;
                    check_finite(t, y, out.last().unwrap())?;
                    out.push(Sample { t, z: y[0], v: y[1], a: k1[1] });
                    let mut fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
                    fac = fac.clamp(0.2, 5.0);
                    if last_rejected {
                        fac = fac.min(1.0);
                    }
                    h = h_try * fac;
                    last_rejected = false;
                } else {
                    h = h_try * (0.9 * en.powf(-0.2)).max(0.2);
                    last_rejected = true;
                }
            }
        }
    }
    Ok(out)
}

fn check_finite(t: f64, y: State, last: &Sample) -> Result<()> {
    if y[0].is_finite() && y[1].is_finite() {
        Ok(())
    } else {
        Err(Error::IntegrationFailure {
            t: last.t,
            z: last.z,
            v: last.v,
            reason: format!("non-finite state at t = {t:e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_adaptive() {
        let w: f64 = 3.0;
        let s = integrate(|z| -w * w * z, 0.0, 1.0, 0.0, 10.0, StepControl::default()).unwrap();
        let end = s.last().unwrap();
        assert_eq!(end.t, 10.0);
        assert!((end.z - (w * 10.0).cos()).abs() < 1e-8);
        assert!((end.v + w * (w * 10.0).sin()).abs() < 1e-8);
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let w: f64 = 2.0;
        let err = |dt: f64| {
            let s = integrate(|z| -w * w * z, 0.0, 1.0, 0.0, 2.0, StepControl::Fixed { dt }).unwrap();
            (s.last().unwrap().z - (w * 2.0).cos()).abs()
        };
        let order = (err(0.02) / err(0.01)).log2();
        assert!(order > 4.5, "order {order}");
    }

    #[test]
    fn zero_state_stays_zero() {
        let s = integrate(|z| -z - z * z * z, 0.0, 0.0, 0.0, 5.0, StepControl::default()).unwrap();
        assert!(s.iter().all(|q| q.z == 0.0 && q.v == 0.0));
        assert_eq!(s.last().unwrap().t, 5.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(integrate(|z| -z, 0.0, 1.0, 0.0, 0.0, StepControl::default()).is_err());
        assert!(integrate(|z| -z, 0.0, 1.0, 0.0, 1.0, StepControl::Fixed { dt: 0.0 }).is_err());
    }

    #[test]
    fn blow_up_reports_failure() {
        let r = integrate(|z| z * z * z * 1e6, 0.0, 1.0, 0.0, 10.0, StepControl::default());
        assert!(matches!(r, Err(Error::IntegrationFailure { .. })));
    }
}
