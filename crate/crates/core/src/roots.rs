//! Bracketed root refinement and zero-crossing scans on sampled functions.

use crate::error::{Error, Result};

/// Illinois false-position with a bisection fallback.
///
/// Requires `fa` and `fb` to have opposite signs (or one of them to be zero).
/// Stops when |f| <= `f_tol` or the bracket shrinks to `x_tol`.
pub fn refine_root<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    x_tol: f64,
    f_tol: f64,
) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NotFound(format!("[{a}, {b}] does not bracket a root")));
    }
    let mut side = 0i8;
    for it in 0..200 {
        let width = (b - a).abs();
        let floor = 4.0 * f64::EPSILON * a.abs().max(b.abs());
        if width <= x_tol.max(floor) {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        // Every fourth iteration bisect, which guarantees linear convergence.
        if it % 4 == 3 || !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 || fc.abs() <= f_tol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// All roots of `f` inside [t_lo, t_hi], located by sign changes between
/// consecutive `knots` and refined on `f` itself.
pub fn crossings<F: FnMut(f64) -> f64>(
    knots: &[f64],
    mut f: F,
    t_lo: f64,
    t_hi: f64,
    f_tol: f64,
) -> Vec<f64> {
    let mut pts: Vec<f64> = knots.iter().copied().filter(|&t| t > t_lo && t < t_hi).collect();
    pts.insert(0, t_lo);
    pts.push(t_hi);
    let mut out = Vec::new();
    let mut prev_t = pts[0];
    let mut prev_f = f(prev_t);
    if prev_f == 0.0 {
        out.push(prev_t);
    }
    for &t in &pts[1..] {
        if t <= prev_t {
            continue;
        }
        let ft = f(t);
        if ft == 0.0 {
            out.push(t);
        } else if prev_f != 0.0 && ft.signum() != prev_f.signum() {
            let x_tol = 1e-15 * t.abs().max(1.0);
            if let Ok(r) = refine_root(&mut f, prev_t, t, prev_f, ft, x_tol, f_tol) {
                out.push(r);
            }
        }
        prev_t = t;
        prev_f = ft;
    }
    out
}

/// Golden-section minimisation of a unimodal function on [a, b].
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, x_tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_cubic_root() {
        let f = |x: f64| x * x * x - 2.0;
        let r = refine_root(f, 0.0, 2.0, f(0.0), f(2.0), 1e-15, 0.0).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_bracket() {
        assert!(refine_root(|x| x * x + 1.0, -1.0, 1.0, 2.0, 2.0, 1e-12, 0.0).is_err());
    }

    #[test]
    fn sine_crossings() {
        let knots: Vec<f64> = (0..=2200).map(|i| i as f64 * 1e-3).collect();
        let f = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
        let roots = crossings(&knots, f, 0.1, 2.2, 1e-9);
        assert_eq!(roots.len(), 4);
        for (k, r) in roots.iter().enumerate() {
            assert!((r - 0.5 * (k + 1) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn golden_parabola() {
        let (x, _) = golden_min(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9);
    }
}
