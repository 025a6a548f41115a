//! Stage-I velocity-difference scaling, the ejection amplitude predictor and
//! the T1 upper bound.
//!
//! The velocity law is kept in its published form,
//! dV = (k / m) * (T1 / 1 s) * 1e-6 m/s with k in kg, so the fitted
//! coefficient is mass * slope / (1e-6 m/s^2).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::ode::StepControl;
use crate::physconst::{diamond_preset, DEFAULT_B0};
use crate::protocol::{launch_stage, PairState};

/// Published velocity-law coefficient (kg).
pub const VELOCITY_COEFFICIENT: f64 = 5.4e-13;

/// Velocity unit trailing the published law (m/s).
pub const VELOCITY_UNIT: f64 = 1e-6;

/// Largest stage-I velocity difference considered reachable (m/s).
pub const DEFAULT_V_MAX: f64 = 0.14;

/// The stage-I trap for which the velocity law holds.
pub const STAGE_ONE_ETA: f64 = 1e8;
pub const STAGE_ONE_Z0: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOneConfig {
    pub eta: f64,
    /// Release point (magnetic coordinate, m); both arms start at rest.
    pub z0: f64,
    pub b0: f64,
    /// Latest T1 on the fit grid (s).
    pub window: f64,
    /// T1 grid density (Hz).
    pub sample_rate: f64,
    pub control: StepControl,
}

impl Default for StageOneConfig {
    fn default() -> Self {
        StageOneConfig {
            eta: STAGE_ONE_ETA,
            z0: STAGE_ONE_Z0,
            b0: DEFAULT_B0,
            window: 0.5,
            sample_rate: 1000.0,
            control: StepControl::default(),
        }
    }
}

impl StageOneConfig {
    pub fn validate(&self) -> Result<()> {
        let off = |a: f64, b: f64| ((a - b) / b).abs() > 1e-9;
        if off(self.eta, STAGE_ONE_ETA) || off(self.z0, STAGE_ONE_Z0) {
            return Err(invalid(format!(
                "the velocity law only holds for eta = {STAGE_ONE_ETA:e} T/m^2 released at z = {STAGE_ONE_Z0:e} m"
            )));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(invalid("fit window must be positive"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid("sample rate must be positive"));
        }
        self.control.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassSlope {
    pub mass: f64,
    /// d(max |dv|)/dT1 (m/s^2).
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Mean of mass * slope / VELOCITY_UNIT over the masses (kg).
    pub coefficient: f64,
    pub per_mass_slopes: Vec<MassSlope>,
    /// Worst per-mass r^2.
    pub r_squared: f64,
}

/// (T1, max |dv| over (0, T1]) on the configured T1 grid.
pub fn velocity_envelope(mass: f64, cfg: &StageOneConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let particle = diamond_preset(mass)?;
    let start = PairState::at_rest(0.0, cfg.z0);
    let pair = launch_stage(&start, &particle, cfg.b0, cfg.eta, cfg.z0, cfg.window, cfg.control, 0)?;
    let n = (cfg.window * cfg.sample_rate).floor() as usize;
    let mut running = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let t = k as f64 / cfg.sample_rate;
        running = running.max(pair.dv(t).abs());
        out.push((t, running));
    }
    Ok(out)
}

/// Ordinary least squares y = slope * x + intercept, with r^2.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: points.len() });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::FitFailure("degenerate data for a line fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok((slope, intercept, sxy * sxy / (sxx * syy)))
}

pub fn fit_velocity_slope(masses: &[f64], cfg: &StageOneConfig) -> Result<ScalingFit> {
    cfg.validate()?;
    if masses.is_empty() {
        return Err(Error::FitFailure("no masses to fit".into()));
    }
    let per_mass: Vec<MassSlope> = masses
        .par_iter()
        .map(|&mass| {
            let env = velocity_envelope(mass, cfg)?;
            let (slope, intercept, r_squared) = linear_fit(&env)?;
            if !(slope > 0.0) {
                return Err(Error::FitFailure(format!("non-increasing envelope for m = {mass:e} kg")));
            }
            Ok(MassSlope { mass, slope, intercept, r_squared })
        })
        .collect::<Result<_>>()?;
    let coefficient =
        per_mass.iter().map(|s| s.mass * s.slope / VELOCITY_UNIT).sum::<f64>() / per_mass.len() as f64;
    let r_squared = per_mass.iter().map(|s| s.r_squared).fold(1.0, f64::min);
    Ok(ScalingFit { coefficient, per_mass_slopes: per_mass, r_squared })
}

/// Velocity difference after T1 according to the published law (m/s).
pub fn velocity_law(mass: f64, t1: f64) -> f64 {
    VELOCITY_COEFFICIENT / mass * t1 * VELOCITY_UNIT
}

/// Latest T1 before the law exceeds `v_max` (s).
pub fn t1_upper_bound(mass: f64, v_max: f64) -> Result<f64> {
    if !(mass > 0.0) || !(v_max > 0.0) {
        return Err(invalid("mass and v_max must be positive"));
    }
    Ok(v_max * mass / (VELOCITY_COEFFICIENT * VELOCITY_UNIT))
}

/// Ejection amplitude dV(T1) / sqrt(A) (m).
pub fn predict_amplitude(mass: f64, sqrt_a: f64, t1: f64) -> Result<f64> {
    if !(sqrt_a > 0.0) || !(t1 >= 0.0) {
        return Err(invalid("sqrt(A) must be positive and T1 non-negative"));
    }
    let bound = t1_upper_bound(mass, DEFAULT_V_MAX)?;
    if t1 > bound {
        return Err(Error::Domain(format!("T1 = {t1} s exceeds the {bound:.3} s bound for m = {mass:e} kg")));
    }
    Ok(velocity_law(mass, t1) / sqrt_a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn amplitude_examples() {
        let z = predict_amplitude(1e-17, PI / 0.4, 0.2).unwrap();
        assert!((z / 1.375e-3 - 1.0).abs() < 1e-3, "{z}");
        let half_mass = predict_amplitude(2e-17, PI / 0.4, 0.2).unwrap();
        assert!((z / half_mass - 2.0).abs() < 1e-12);
        let slow = predict_amplitude(1e-17, PI / 0.8, 0.2).unwrap();
        assert!((slow / z - 2.0).abs() < 1e-12);
        assert!(matches!(predict_amplitude(1e-17, PI / 0.4, 3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn upper_bound_examples() {
        assert!((t1_upper_bound(1e-17, DEFAULT_V_MAX).unwrap() - 2.6).abs() < 0.05);
        assert!((t1_upper_bound(1e-15, DEFAULT_V_MAX).unwrap() - 260.0).abs() < 5.0);
        let a = t1_upper_bound(1e-16, DEFAULT_V_MAX).unwrap();
        let b = t1_upper_bound(3e-16, DEFAULT_V_MAX).unwrap();
        assert!((b / a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn law_at_two_tenths_of_a_second() {
        assert!((velocity_law(1e-17, 0.2) - 1.08e-2).abs() < 1e-12);
    }

    #[test]
    fn line_fit() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        let (s, c, r2) = linear_fit(&pts).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn config_outside_validity() {
        let cfg = StageOneConfig { eta: 1e6, ..Default::default() };
        assert!(fit_velocity_slope(&[1e-17], &cfg).is_err());
    }
}
