//! Single-arm equation of motion, trajectories and the harmonic surrogate.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::field::FieldParams;
use crate::ode::{self, Sample, StepControl};
use crate::physconst::{ParticleParams, Spin};
use crate::roots;

/// Acceleration of one arm on the x = 0 line.
pub fn acceleration(z: f64, particle: &ParticleParams, p: &FieldParams) -> f64 {
    let c = &particle.constants;
    let bz = p.b0 + p.eta * z * z;
    let diamagnetic = particle.chi_m / c.vacuum_permeability * bz * 2.0 * p.eta * z;
    let spin = particle.spin_value() * c.lande_g * c.electron_charge * c.hbar
        / (particle.mass * c.electron_mass)
        * p.eta
        * z;
    diamagnetic - spin
}

/// Potential energy per unit mass (J/kg), with a = -dU/dz / m.
pub fn potential_per_mass(z: f64, particle: &ParticleParams, p: &FieldParams) -> f64 {
    let c = &particle.constants;
    let bz = p.b0 + p.eta * z * z;
    -particle.chi_m / (2.0 * c.vacuum_permeability) * bz * bz
        + particle.spin_value() * c.lande_g * c.bohr_magneton / particle.mass * bz
}

pub fn energy_per_mass(z: f64, v: f64, particle: &ParticleParams, p: &FieldParams) -> f64 {
    0.5 * v * v + potential_per_mass(z, particle, p)
}

/// Samples of one arm within one stage. `z` is the magnetic coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spin: Spin,
    pub samples: Vec<Sample>,
    pub field: FieldParams,
    pub stage_id: usize,
    pub particle: ParticleParams,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        &self.samples[self.samples.len() - 1]
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    fn segment(&self, t: f64) -> Result<usize> {
        let n = self.samples.len();
        if n < 2 {
            if n == 1 && t == self.samples[0].t {
                return Ok(0);
            }
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let (lo, hi) = (self.t_start(), self.t_end());
        let slack = 1e-12 * hi.abs().max(1.0);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::Domain(format!("t = {t} outside [{lo}, {hi}]")));
        }
        let i = self.samples.partition_point(|s| s.t <= t);
        Ok(i.clamp(1, n - 1) - 1)
    }

    /// Magnetic position and velocity at t by quintic Hermite interpolation.
    pub fn state_at(&self, t: f64) -> Result<(f64, f64)> {
        let i = self.segment(t)?;
        if self.samples.len() == 1 {
            let s = self.samples[0];
            return Ok((s.z, s.v));
        }
        Ok(hermite(&self.samples[i], &self.samples[i + 1], t))
    }

    pub fn z_at(&self, t: f64) -> Result<f64> {
        Ok(self.state_at(t)?.0)
    }

    pub fn lab_z_at(&self, t: f64) -> Result<f64> {
        Ok(self.field.to_lab(self.z_at(t)?))
    }

    pub fn acceleration_at(&self, t: f64) -> Result<f64> {
        let (z, _) = self.state_at(t)?;
        Ok(acceleration(z, &self.particle, &self.field))
    }

    /// Copy truncated at `t_cut`, with the final node interpolated.
    pub fn truncated(&self, t_cut: f64) -> Result<Trajectory> {
        let (z, v) = self.state_at(t_cut)?;
        let mut samples: Vec<Sample> = self.samples.iter().copied().take_while(|s| s.t < t_cut).collect();
        samples.push(Sample { t: t_cut, z, v, a: acceleration(z, &self.particle, &self.field) });
        Ok(Trajectory { samples, ..self.clone() })
    }
}

fn hermite(s0: &Sample, s1: &Sample, t: f64) -> (f64, f64) {
    let h = s1.t - s0.t;
    let u = (t - s0.t) / h;
    let (u2, u3) = (u * u, u * u * u);
    let (u4, u5) = (u3 * u, u3 * u2);
    let h0 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
    let h1 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
    let h2 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5;
    let h3 = 0.5 * u3 - u4 + 0.5 * u5;
    let h4 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
    let h5 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    let z = h0 * s0.z + h1 * h * s0.v + h2 * h * h * s0.a + h3 * h * h * s1.a + h4 * h * s1.v + h5 * s1.z;
    let d0 = -30.0 * u2 + 60.0 * u3 - 30.0 * u4;
    let d1 = 1.0 - 18.0 * u2 + 32.0 * u3 - 15.0 * u4;
    let d2 = u - 4.5 * u2 + 6.0 * u3 - 2.5 * u4;
    let d3 = 1.5 * u2 - 4.0 * u3 + 2.5 * u4;
    let d4 = -12.0 * u2 + 28.0 * u3 - 15.0 * u4;
    let v = (d0 * s0.z + d1 * h * s0.v + d2 * h * h * s0.a + d3 * h * h * s1.a + d4 * h * s1.v
        - d0 * s1.z)
        / h;
    (z, v)
}

fn require_spin(particle: &ParticleParams) -> Result<Spin> {
    particle
        .spin
        .ok_or_else(|| invalid("particle has no spin assigned to this arm"))
}

/// Propagate one arm from rest or motion at t = 0 for `duration`.
pub fn propagate(
    z0: f64,
    v0: f64,
    particle: &ParticleParams,
    p: &FieldParams,
    duration: f64,
    control: StepControl,
) -> Result<Trajectory> {
    propagate_span(0.0, z0, v0, particle, p, duration, control, 0)
}

/// Propagate from (t0, z0, v0) to t_end in magnetic coordinates.
#[allow(clippy::too_many_arguments)]
pub fn propagate_span(
    t0: f64,
    z0: f64,
    v0: f64,
    particle: &ParticleParams,
    p: &FieldParams,
    t_end: f64,
    control: StepControl,
    stage_id: usize,
) -> Result<Trajectory> {
    let spin = require_spin(particle)?;
    if !(t_end > t0) {
        return Err(invalid(format!("duration must be positive (t0 = {t0}, t_end = {t_end})")));
    }
    let part = *particle;
    let field = *p;
    let samples = ode::integrate(|z| acceleration(z, &part, &field), t0, z0, v0, t_end, control)?;
    Ok(Trajectory { spin, samples, field: *p, stage_id, particle: *particle })
}

/// Squared angular frequency of the harmonic surrogate.
pub fn harmonic_a(particle: &ParticleParams, p: &FieldParams, c_correction: f64) -> Result<f64> {
    let c = &particle.constants;
    let bracket = c_correction * particle.chi_m * p.b0 / c.vacuum_permeability
        - particle.spin_value() * c.lande_g * c.electron_charge * c.hbar
            / (particle.mass * c.electron_mass);
    if !(bracket < 0.0) {
        return Err(Error::ModelInapplicable(format!(
            "trap coefficient {bracket:e} is not negative; no harmonic confinement"
        )));
    }
    Ok(-bracket * p.eta)
}

/// Correction factor that yields the given A.
fn correction_for_a(particle: &ParticleParams, p: &FieldParams, a: f64) -> f64 {
    let c = &particle.constants;
    let spin = particle.spin_value() * c.lande_g * c.electron_charge * c.hbar
        / (particle.mass * c.electron_mass);
    (spin - a / p.eta) * c.vacuum_permeability / (particle.chi_m * p.b0)
}

/// z(t) = amplitude * cos(sqrt(A) (t - t0) + phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicModel {
    pub a: f64,
    pub c_correction: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub t0: f64,
}

impl HarmonicModel {
    pub fn omega(&self) -> f64 {
        self.a.sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega()
    }

    pub fn z(&self, t: f64) -> f64 {
        self.amplitude * (self.omega() * (t - self.t0) + self.phase).cos()
    }

    pub fn v(&self, t: f64) -> f64 {
        -self.amplitude * self.omega() * (self.omega() * (t - self.t0) + self.phase).sin()
    }

    /// Sampled surrogate over [t_start, t_end] with `per_period` nodes per cycle.
    pub fn trajectory(
        &self,
        t_start: f64,
        t_end: f64,
        per_period: usize,
        like: &Trajectory,
    ) -> Result<Trajectory> {
        if !(t_end > t_start) || per_period < 4 {
            return Err(invalid("surrogate needs a positive span and >= 4 nodes per period"));
        }
        let n = (((t_end - t_start) / self.period()) * per_period as f64).ceil().max(2.0) as usize;
        let samples = (0..=n)
            .map(|i| {
                let t = t_start + (t_end - t_start) * i as f64 / n as f64;
                let z = self.z(t);
                Sample { t, z, v: self.v(t), a: -self.a * z }
            })
            .collect();
        Ok(Trajectory { samples, ..like.clone() })
    }
}

/// Fit the correction factor of the harmonic surrogate to an exact trajectory.
///
/// The exact trajectory must start at rest off-centre, or at the trap centre
/// with non-zero velocity. C is first matched to the measured period and then
/// refined by least squares over the whole trajectory.
pub fn fit_correction_factor(exact: &Trajectory) -> Result<(f64, HarmonicModel)> {
    let particle = exact.particle;
    let field = exact.field;
    let s0 = *exact.first();
    let t0 = s0.t;
    let at_rest = s0.v == 0.0 && s0.z != 0.0;
    let from_centre = s0.z == 0.0 && s0.v != 0.0;
    if !(at_rest || from_centre) {
        return Err(Error::FitFailure(
            "trajectory must start at rest off-centre or at the centre with non-zero velocity".into(),
        ));
    }
    let knots = exact.times();
    let tol = 1e-14;
    let probe = |t: f64| -> f64 {
        let (z, v) = exact.state_at(t).unwrap_or((f64::NAN, f64::NAN));
        if at_rest {
            v
        } else {
            z
        }
    };
    let roots = roots::crossings(&knots, probe, t0 + 1e-9 * (exact.t_end() - t0), exact.t_end(), tol);
    if roots.len() < 2 {
        return Err(Error::FitFailure("trajectory shorter than one full period".into()));
    }
    let period = roots[1] - t0;
    let a_period = (2.0 * PI / period).powi(2);
    let c_period = correction_for_a(&particle, &field, a_period);

    let (amplitude, phase) = if at_rest {
        (s0.z, 0.0)
    } else {
        let n = 2000;
        let mut zmax = 0.0f64;
        for i in 0..=n {
            let t = t0 + period * i as f64 / n as f64;
            zmax = zmax.max(exact.z_at(t)?.abs());
        }
        (zmax * s0.v.signum(), -PI / 2.0)
    };

    let span = exact.t_end() - t0;
    let periods = span / period;
    let n = ((periods * 1000.0).ceil() as usize).max(1000);
    let grid: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let t = t0 + span * i as f64 / n as f64;
            exact.z_at(t).map(|z| (t, z))
        })
        .collect::<Result<_>>()?;
    let mse = |c: f64| -> f64 {
        let Ok(a) = harmonic_a(&particle, &field, c) else {
            return f64::INFINITY;
        };
        let w = a.sqrt();
        grid.iter()
            .map(|&(t, z)| (amplitude * (w * (t - t0) + phase).cos() - z).powi(2))
            .sum::<f64>()
            / grid.len() as f64
    };
    let delta = (0.25 / periods).clamp(1e-5, 0.02);
    let (lo, hi) = (c_period * (1.0 - delta), c_period * (1.0 + delta));
    let (c_best, _) = roots::golden_min(mse, lo.min(hi), lo.max(hi), 1e-12 * c_period.abs());
    let a = harmonic_a(&particle, &field, c_best)?;
    Ok((c_best, HarmonicModel { a, c_correction: c_best, amplitude, phase, t0 }))
}

/// Pointwise lab-frame difference a - b on the union of both sample grids.
pub fn trajectory_deviation(a: &Trajectory, b: &Trajectory) -> Result<(f64, Vec<(f64, f64)>)> {
    let lo = a.t_start().max(b.t_start());
    let hi = a.t_end().min(b.t_end());
    if !(hi > lo) {
        return Err(Error::Domain("trajectories do not overlap in time".into()));
    }
    let grid = union_grid(&a.times(), &b.times(), lo, hi);
    let mut worst = 0.0f64;
    let mut series = Vec::with_capacity(grid.len());
    for t in grid {
        let d = a.lab_z_at(t)? - b.lab_z_at(t)?;
        worst = worst.max(d.abs());
        series.push((t, d));
    }
    Ok((worst, series))
}

/// Sorted, de-duplicated union of two time grids clipped to [lo, hi].
pub fn union_grid(a: &[f64], b: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut g: Vec<f64> = a
        .iter()
        .chain(b.iter())
        .copied()
        .filter(|&t| t >= lo && t <= hi)
        .collect();
    g.push(lo);
    g.push(hi);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physconst::diamond_preset;

    fn particle(m: f64, s: Spin) -> ParticleParams {
        diamond_preset(m).unwrap().with_spin(s)
    }

    fn field(eta: f64) -> FieldParams {
        FieldParams::new(5.7e-4, eta, 0.0).unwrap()
    }

    #[test]
    fn acceleration_example() {
        let a = acceleration(1e-4, &particle(1e-17, Spin::Up), &field(1e8));
        // diamagnetic -98.731, spin -0.0371
        assert!((a + 98.768).abs() < 0.01, "{a}");
        assert_eq!(acceleration(0.0, &particle(1e-17, Spin::Up), &field(1e8)), 0.0);
    }

    #[test]
    fn force_is_minus_potential_gradient() {
        let p = particle(1e-16, Spin::Down);
        let f = field(1e7);
        for &z in &[3e-6, -4e-5, 1.2e-4] {
            let h = 1e-9;
            let num = -(potential_per_mass(z + h, &p, &f) - potential_per_mass(z - h, &p, &f)) / (2.0 * h);
            let a = acceleration(z, &p, &f);
            assert!(((num - a) / a).abs() < 1e-6);
        }
    }

    #[test]
    fn hermite_reproduces_quintic() {
        let zf = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t.powi(3) - 0.3 * t.powi(4) + 0.1 * t.powi(5);
        let vf = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t - 1.2 * t.powi(3) + 0.5 * t.powi(4);
        let af = |t: f64| -2.0 + 3.0 * t - 3.6 * t * t + 2.0 * t.powi(3);
        let s0 = Sample { t: 0.5, z: zf(0.5), v: vf(0.5), a: af(0.5) };
        let s1 = Sample { t: 1.7, z: zf(1.7), v: vf(1.7), a: af(1.7) };
        for &t in &[0.5, 0.8, 1.1, 1.7] {
            let (z, v) = hermite(&s0, &s1, t);
            assert!((z - zf(t)).abs() < 1e-12);
            assert!((v - vf(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let tr = propagate(0.0, 0.0, &particle(1e-17, Spin::Up), &field(1e8), 1.0, StepControl::default()).unwrap();
        assert!(tr.samples.iter().all(|s| s.z == 0.0 && s.v == 0.0));
    }

    #[test]
    fn requires_spin() {
        let p = diamond_preset(1e-17).unwrap();
        assert!(propagate(1e-4, 0.0, &p, &field(1e8), 1.0, StepControl::default()).is_err());
    }

    #[test]
    fn harmonic_half_period_anchors() {
        let p = particle(1e-17, Spin::Up);
        let a2 = harmonic_a(&p, &field(1e6), 27.3467).unwrap();
        assert!((2.0 * PI / a2.sqrt() - 0.6998).abs() < 1e-3);
        let a1 = harmonic_a(&p, &field(1e8), 2526.82).unwrap();
        assert!((60.0 * PI / a1.sqrt() - 0.2235).abs() < 1e-3);
        let double = harmonic_a(&p, &field(2e6), 27.3467).unwrap();
        assert!((double / a2 - 2.0).abs() < 1e-12);
        assert!(harmonic_a(&p, &field(1e6), -10.0).is_err());
    }

    #[test]
    fn correction_inverse() {
        let p = particle(1e-16, Spin::Down);
        let f = field(1e6);
        let a = harmonic_a(&p, &f, 31.0).unwrap();
        assert!((correction_for_a(&p, &f, a) - 31.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_synthetic_correction() {
        let p = particle(1e-17, Spin::Up);
        let f = field(1e6);
        let a = harmonic_a(&p, &f, 30.0).unwrap();
        let template = propagate(1e-4, 0.0, &p, &f, 0.01, StepControl::default()).unwrap();
        let model = HarmonicModel { a, c_correction: 30.0, amplitude: 1e-4, phase: 0.0, t0: 0.0 };
        let synth = model.trajectory(0.0, 3.0, 400, &template).unwrap();
        let (c, fitted) = fit_correction_factor(&synth).unwrap();
        assert!((c - 30.0).abs() < 1e-6, "{c}");
        assert!((fitted.a / a - 1.0).abs() < 1e-7);
    }

    #[test]
    fn fit_rejects_degenerate() {
        let tr = propagate(0.0, 0.0, &particle(1e-17, Spin::Up), &field(1e8), 1.0, StepControl::default()).unwrap();
        assert!(matches!(fit_correction_factor(&tr), Err(Error::FitFailure(_))));
    }

    #[test]
    fn deviation_of_identical_is_zero() {
        let tr = propagate(1e-4, 0.0, &particle(1e-17, Spin::Up), &field(1e8), 0.05, StepControl::default()).unwrap();
        let (m, s) = trajectory_deviation(&tr, &tr).unwrap();
        assert_eq!(m, 0.0);
        assert!(!s.is_empty());
    }

    #[test]
    fn deviation_disjoint_is_error() {
        let p = particle(1e-17, Spin::Up);
        let a = propagate_span(0.0, 1e-4, 0.0, &p, &field(1e8), 0.1, StepControl::default(), 0).unwrap();
        let b = propagate_span(0.2, 1e-4, 0.0, &p, &field(1e8), 0.3, StepControl::default(), 0).unwrap();
        assert!(matches!(trajectory_deviation(&a, &b), Err(Error::Domain(_))));
    }
}
