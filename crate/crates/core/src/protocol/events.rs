//! Superposition series and zero-crossing event detection.

use crate::dynamics::{union_grid, Trajectory};
use crate::error::{Error, Result};
use crate::roots;

pub type Series = Vec<(f64, f64)>;

/// How to pick one crossing when several exist.
#[derive(Debug, Clone, Copy)]
pub enum ZeroMode<'a> {
    /// The first crossing at or after the given time.
    FirstAfter(f64),
    /// The crossing where the companion series has the largest magnitude.
    MaxCompanion(&'a [(f64, f64)]),
}

/// Lab-frame separation and velocity difference, up minus down.
pub fn superposition_series(up: &Trajectory, down: &Trajectory) -> Result<(Series, Series)> {
    let lo = up.t_start().max(down.t_start());
    let hi = up.t_end().min(down.t_end());
    if !(hi >= lo) || (hi == lo && up.samples.len() > 1) {
        return Err(Error::Domain("arm trajectories do not share a time domain".into()));
    }
    let grid = union_grid(&up.times(), &down.times(), lo, hi);
    let mut dz = Vec::with_capacity(grid.len());
    let mut dv = Vec::with_capacity(grid.len());
    for t in grid {
        let (zu, vu) = up.state_at(t)?;
        let (zd, vd) = down.state_at(t)?;
        dz.push((t, up.field.to_lab(zu) - down.field.to_lab(zd)));
        dv.push((t, vu - vd));
    }
    Ok((dz, dv))
}

/// Linear interpolation of a sampled series; clamps outside its domain.
pub fn interpolate(series: &[(f64, f64)], t: f64) -> f64 {
    let i = series.partition_point(|p| p.0 <= t);
    if i == 0 {
        return series[0].1;
    }
    if i >= series.len() {
        return series[series.len() - 1].1;
    }
    let (t0, y0) = series[i - 1];
    let (t1, y1) = series[i];
    if t1 == t0 {
        return y1;
    }
    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
}

/// Event time on a sampled series, refined on its linear interpolant.
pub fn detect_zero(series: &[(f64, f64)], accuracy: f64, mode: ZeroMode) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let knots: Vec<f64> = series.iter().map(|p| p.0).collect();
    let lo = match mode {
        ZeroMode::FirstAfter(t0) => t0.max(knots[0]),
        ZeroMode::MaxCompanion(_) => knots[0],
    };
    let hi = knots[knots.len() - 1];
    let f = |t: f64| interpolate(series, t);
    let companion = |t: f64| match mode {
        ZeroMode::MaxCompanion(c) => interpolate(c, t).abs(),
        ZeroMode::FirstAfter(_) => 0.0,
    };
    select_crossing(&knots, f, companion, lo, hi, accuracy, matches!(mode, ZeroMode::FirstAfter(_)))
}

/// Shared selection logic for sampled and interpolated series.
pub(crate) fn select_crossing<F: FnMut(f64) -> f64, G: Fn(f64) -> f64>(
    knots: &[f64],
    f: F,
    companion: G,
    lo: f64,
    hi: f64,
    accuracy: f64,
    first: bool,
) -> Result<f64> {
    if !(hi >= lo) {
        return Err(Error::NotFound(format!("empty search window [{lo}, {hi}]")));
    }
    let found = if hi == lo { Vec::new() } else { roots::crossings(knots, f, lo, hi, accuracy) };
    if first {
        found
            .first()
            .copied()
            .ok_or_else(|| Error::NotFound(format!("no crossing in [{lo}, {hi}]")))
    } else {
        let mut best: Option<(f64, f64)> = None;
        for t in found {
            let c = companion(t);
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((t, c));
            }
        }
        best.map(|b| b.0)
            .ok_or_else(|| Error::NotFound(format!("no crossing in [{lo}, {hi}]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_zero_series() {
        let s: Series = (0..10).map(|i| (i as f64 * 0.1, 0.0)).collect();
        assert_eq!(detect_zero(&s, 1e-9, ZeroMode::FirstAfter(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn sine_roots() {
        let s: Series = (0..=3200).map(|i| {
            let t = i as f64 * 1e-3;
            (t, (2.0 * PI * t).sin())
        }).collect();
        for k in 1..6 {
            let t0 = 0.5 * k as f64 - 0.1;
            let r = detect_zero(&s, 1e-9, ZeroMode::FirstAfter(t0)).unwrap();
            assert!((r - 0.5 * k as f64).abs() < 1e-6, "{r}");
        }
    }

    #[test]
    fn companion_selection() {
        let s: Series = (0..=3200).map(|i| {
            let t = i as f64 * 1e-3;
            (t, (2.0 * PI * t).sin())
        }).collect();
        let c: Series = s.iter().map(|&(t, _)| (t, t)).collect();
        let r = detect_zero(&s, 1e-9, ZeroMode::MaxCompanion(&c)).unwrap();
        assert!((r - 3.0).abs() < 1e-6);
    }

    #[test]
    fn no_crossing() {
        let s: Series = (0..10).map(|i| (i as f64, 1.0 + i as f64)).collect();
        assert!(matches!(detect_zero(&s, 1e-9, ZeroMode::FirstAfter(0.0)), Err(Error::NotFound(_))));
    }
}
