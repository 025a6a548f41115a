//! Split-step propagation of a 1-D wavepacket in the spin-dependent trap.
//!
//! The potential is taken along x = 0 with the spin term at a fixed S_z
//! eigenvalue. Its value at z = 0 is subtracted analytically: a constant
//! only contributes a global phase and would otherwise swamp the trap
//! curvature in the per-step phase budget.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::FieldParams;
use crate::physconst::{units, ParticleParams};

/// Probability allowed within three points of either edge.
pub const EDGE_TOLERANCE: f64 = 1e-8;

/// Largest phase advance per step accepted by [`Propagator::new`].
pub const MAX_STEP_PHASE: f64 = PI / 4.0;

/// Phase budget used when choosing a default time step.
pub const DEFAULT_STEP_PHASE: f64 = PI / 8.0;

const EDGE_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpatialGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub n_points: usize,
}

impl SpatialGrid {
    pub fn new(z_min: f64, z_max: f64, n_points: usize) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite() && z_max > z_min) {
            return Err(invalid(format!("grid bounds [{z_min}, {z_max}] are not an interval")));
        }
        if n_points < 256 || !n_points.is_power_of_two() {
            return Err(invalid(format!("grid size {n_points} must be a power of two >= 256")));
        }
        Ok(SpatialGrid { z_min, z_max, n_points })
    }

    /// Grid for a packet released at rest at `center` in a confining trap.
    ///
    /// Spans four turning points either side of the trap centre (at least the
    /// turning point plus eight widths) and resolves twice the largest
    /// momentum the packet can carry.
    pub fn default_for(potential: &SpinPotential, center: f64, width: f64) -> Result<Self> {
        let turn = center.abs();
        let half = (4.0 * turn).max(turn + 8.0 * width);
        let hbar = potential.particle.constants.hbar;
        let m = potential.particle.mass;
        let u_min = (0..=400)
            .map(|i| potential.energy(-half + 2.0 * half * i as f64 / 400.0))
            .fold(f64::INFINITY, f64::min);
        let drop = (potential.energy(center) - u_min).max(0.0);
        let p_mean = (2.0 * m * drop).sqrt();
        let omega = potential.curvature_frequency();
        let p_width = (hbar / (2.0 * width)).max(m * omega * width);
        let k_need = 2.0 * (p_mean + 8.0 * p_width) / hbar;
        let dz = PI / k_need;
        let n = ((2.0 * half / dz).ceil() as usize).max(256).next_power_of_two();
        SpatialGrid::new(-half, half, n)
    }

    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / self.n_points as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.dz()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.z(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / (n as f64 * self.dz());
        (0..n)
            .map(|j| if j < n / 2 { j as f64 } else { j as f64 - n as f64 } * dk)
            .collect()
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.dz()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavePacketState {
    pub grid: SpatialGrid,
    pub amplitudes: Vec<Complex64>,
    pub t: f64,
    pub spin_z: f64,
}

impl WavePacketState {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dz()
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn edge_probability(&self) -> f64 {
        let n = self.amplitudes.len();
        let head = self.amplitudes[..EDGE_POINTS].iter();
        let tail = self.amplitudes[n - EDGE_POINTS..].iter();
        head.chain(tail).map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dz()
    }
}

/// Minimum-uncertainty Gaussian at rest, normalised on the grid.
pub fn init_gaussian(grid: SpatialGrid, center: f64, width: f64, spin_z: f64) -> Result<WavePacketState> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(invalid("wavepacket width must be positive"));
    }
    if width < 4.0 * grid.dz() {
        return Err(Error::Resolution(format!(
            "width {width:e} m is below four grid spacings ({:e} m)",
            4.0 * grid.dz()
        )));
    }
    if !(center - 6.0 * width > grid.z_min && center + 6.0 * width < grid.z_max) {
        return Err(invalid(format!("centre {center:e} m is not inside the grid interior")));
    }
    let pre = (2.0 * PI * width * width).powf(-0.25);
    let mut amplitudes: Vec<Complex64> = grid
        .points()
        .into_iter()
        .map(|z| Complex64::new(pre * (-(z - center).powi(2) / (4.0 * width * width)).exp(), 0.0))
        .collect();
    let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dz();
    let s = norm.sqrt().recip();
    amplitudes.iter_mut().for_each(|a| *a *= s);
    Ok(WavePacketState { grid, amplitudes, t: 0.0, spin_z })
}

/// A 1-D potential energy (J) sampled on the grid.
pub trait Potential: Sync {
    fn energy(&self, z: f64) -> f64;
    fn mass(&self) -> f64;
    fn hbar(&self) -> f64;
}

/// Diamagnetic plus spin energy of the trap at x = 0, minus its value at z = 0.
#[derive(Debug, Clone, Copy)]
pub struct SpinPotential {
    pub particle: ParticleParams,
    pub field: FieldParams,
}

impl SpinPotential {
    pub fn new(particle: ParticleParams, field: FieldParams) -> Result<Self> {
        if particle.spin.is_none() {
            return Err(invalid("the wavepacket potential needs a spin eigenvalue"));
        }
        Ok(SpinPotential { particle, field })
    }

    /// Small-oscillation frequency about z = 0 (zero if not confining).
    pub fn curvature_frequency(&self) -> f64 {
        let c = &self.particle.constants;
        let eta = self.field.eta;
        let k = -self.particle.chi_m / c.vacuum_permeability * 2.0 * self.field.b0 * eta
            + self.particle.spin_value() * c.lande_g * c.bohr_magneton * 2.0 * eta / self.particle.mass;
        k.max(0.0).sqrt()
    }
}

impl Potential for SpinPotential {
    fn energy(&self, z: f64) -> f64 {
        let c = &self.particle.constants;
        let (b0, eta) = (self.field.b0, self.field.eta);
        let q = eta * z * z;
        let m = self.particle.mass;
        -self.particle.chi_m * m / (2.0 * c.vacuum_permeability) * (2.0 * b0 * q + q * q)
            + self.particle.spin_value() * c.lande_g * c.bohr_magneton * q
    }

    fn mass(&self) -> f64 {
        self.particle.mass
    }

    fn hbar(&self) -> f64 {
        self.particle.constants.hbar
    }
}

/// No potential at all.
#[derive(Debug, Clone, Copy)]
pub struct FreeSpace {
    pub mass: f64,
    pub hbar: f64,
}

impl Potential for FreeSpace {
    fn energy(&self, _z: f64) -> f64 {
        0.0
    }

    fn mass(&self) -> f64 {
        self.mass
    }

    fn hbar(&self) -> f64 {
        self.hbar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    pub t: f64,
    pub mean_z: f64,
    pub mean_p: f64,
    pub delta_z: f64,
    pub delta_p: f64,
    pub product: f64,
    pub norm: f64,
}

/// Symmetric split-step propagator with precomputed phase factors.
pub struct Propagator {
    grid: SpatialGrid,
    dt: f64,
    hbar: f64,
    half_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Largest kinetic and potential phase advances of one step.
pub fn step_phases(grid: &SpatialGrid, potential: &dyn Potential, dt: f64) -> (f64, f64) {
    let (m, hbar) = (potential.mass(), potential.hbar());
    let k = grid.nyquist();
    let kinetic = hbar * k * k / (2.0 * m) * dt;
    let (lo, hi) = grid
        .points()
        .into_iter()
        .map(|z| potential.energy(z))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u), hi.max(u)));
    (kinetic, (hi - lo) / hbar * dt)
}

/// Time step whose larger per-step phase equals `phase`.
pub fn default_dt(grid: &SpatialGrid, potential: &dyn Potential, phase: f64) -> f64 {
    let (k, v) = step_phases(grid, potential, 1.0);
    phase / k.max(v)
}

impl Propagator {
    pub fn new(grid: SpatialGrid, potential: &dyn Potential, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("time step must be positive"));
        }
        let (pk, pv) = step_phases(&grid, potential, dt);
        if pk >= MAX_STEP_PHASE || pv >= MAX_STEP_PHASE {
            return Err(Error::Resolution(format!(
                "dt = {dt:e} s advances the phase by {pk:.3} (kinetic) and {pv:.3} (potential) rad per step; both must stay below pi/4"
            )));
        }
        let (m, hbar) = (potential.mass(), potential.hbar());
        let half_potential = grid
            .points()
            .into_iter()
            .map(|z| Complex64::from_polar(1.0, -potential.energy(z) * dt / (2.0 * hbar)))
            .collect();
        let wavenumbers = grid.wavenumbers();
        let kinetic = wavenumbers
            .iter()
            .map(|&k| Complex64::from_polar(1.0, -hbar * k * k * dt / (2.0 * m)))
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n_points);
        let inverse = planner.plan_fft_inverse(grid.n_points);
        Ok(Propagator { grid, dt, hbar, half_potential, kinetic, wavenumbers, forward, inverse })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, state: &mut WavePacketState) {
        let n = self.grid.n_points as f64;
        let psi = &mut state.amplitudes;
        psi.iter_mut().zip(&self.half_potential).for_each(|(a, v)| *a *= v);
        self.forward.process(psi);
        psi.iter_mut().zip(&self.kinetic).for_each(|(a, k)| *a *= k);
        self.inverse.process(psi);
        let s = 1.0 / n;
        psi.iter_mut().zip(&self.half_potential).for_each(|(a, v)| *a *= v * s);
        state.t += self.dt;
    }

    /// Advance `n_steps`, recording observables every `every` steps (and at
    /// the start and end). Fails if probability reaches the grid edge.
    pub fn run(&self, state: &mut WavePacketState, n_steps: usize, every: usize) -> Result<Vec<Observables>> {
        if state.grid != self.grid {
            return Err(invalid("state and propagator grids differ"));
        }
        let every = every.max(1);
        let mut out = vec![self.observe(state)];
        for i in 1..=n_steps {
            self.step(state);
            let edge = state.edge_probability();
            if edge > EDGE_TOLERANCE {
                return Err(Error::BoundaryEscape { t: state.t, mass: edge });
            }
            if i % every == 0 || i == n_steps {
                out.push(self.observe(state));
            }
        }
        Ok(out)
    }

    pub fn observe(&self, state: &WavePacketState) -> Observables {
        observables_with(state, &self.wavenumbers, self.forward.as_ref(), self.hbar)
    }
}

/// Position moments by quadrature, momentum moments from the spectrum.
pub fn observables(state: &WavePacketState, hbar: f64) -> Observables {
    let fft = FftPlanner::new().plan_fft_forward(state.grid.n_points);
    observables_with(state, &state.grid.wavenumbers(), fft.as_ref(), hbar)
}

fn observables_with(state: &WavePacketState, k: &[f64], fft: &dyn Fft<f64>, hbar: f64) -> Observables {
    let dz = state.grid.dz();
    let (mut w, mut z1, mut z2) = (0.0, 0.0, 0.0);
    for (i, a) in state.amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        let z = state.grid.z(i);
        w += p;
        z1 += p * z;
        z2 += p * z * z;
    }
    let mean_z = z1 / w;
    let delta_z = (z2 / w - mean_z * mean_z).max(0.0).sqrt();

    let mut spec = state.amplitudes.clone();
    fft.process(&mut spec);
    let (mut s, mut k1, mut k2) = (0.0, 0.0, 0.0);
    for (a, &kk) in spec.iter().zip(k) {
        let p = a.norm_sqr();
        s += p;
        k1 += p * kk;
        k2 += p * kk * kk;
    }
    let mean_k = k1 / s;
    let delta_k = (k2 / s - mean_k * mean_k).max(0.0).sqrt();
    let (mean_p, delta_p) = (hbar * mean_k, hbar * delta_k);
    Observables { t: state.t, mean_z, mean_p, delta_z, delta_p, product: delta_z * delta_p, norm: w * dz }
}

/// Evolve in the spin trap for `n_steps` of `dt`.
pub fn evolve(
    state: &WavePacketState,
    particle: &ParticleParams,
    p: &FieldParams,
    dt: f64,
    n_steps: usize,
) -> Result<WavePacketState> {
    let mut particle = *particle;
    particle.spin = Some(crate::physconst::Spin::from_value(state.spin_z)?);
    let pot = SpinPotential::new(particle, *p)?;
    let prop = Propagator::new(state.grid, &pot, dt)?;
    let mut out = state.clone();
    prop.run(&mut out, n_steps, n_steps.max(1))?;
    Ok(out)
}

/// Result of [`run_packet`].
#[derive(Debug, Clone)]
pub struct PacketRun {
    pub grid: SpatialGrid,
    pub dt: f64,
    pub observables: Vec<Observables>,
    pub final_state: WavePacketState,
}

/// Release a minimum-uncertainty packet at rest at `center` in the spin trap
/// and evolve for `duration` on the default grid and step, keeping about
/// `outputs` observable records.
pub fn run_packet(
    particle: &ParticleParams,
    field: &FieldParams,
    center: f64,
    width: f64,
    duration: f64,
    outputs: usize,
) -> Result<PacketRun> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(invalid("duration must be positive"));
    }
    let pot = SpinPotential::new(*particle, *field)?;
    let grid = SpatialGrid::default_for(&pot, center, width)?;
    let mut state = init_gaussian(grid, center, width, particle.spin_value())?;
    let n = (duration / default_dt(&grid, &pot, DEFAULT_STEP_PHASE)).ceil() as usize;
    let dt = duration / n as f64;
    let prop = Propagator::new(grid, &pot, dt)?;
    let observables = prop.run(&mut state, n, (n / outputs.max(1)).max(1))?;
    Ok(PacketRun { grid, dt, observables, final_state: state })
}

pub const DENSITY_HEADER: &str = "z_um,density_per_um";

/// |psi|^2 on the grid, in um and 1/um.
pub fn density_csv(state: &WavePacketState) -> String {
    let mut s = String::from(DENSITY_HEADER);
    s.push('\n');
    for (i, a) in state.amplitudes.iter().enumerate() {
        let _ = writeln!(s, "{:.9e},{:.9e}", units::m_to_um(state.grid.z(i)), a.norm_sqr() * units::UM);
    }
    s
}

pub const OBSERVABLES_HEADER: &str = "t_s,mean_z_um,mean_p_kg_m_per_s,delta_z_um,delta_p_kg_m_per_s,product_over_hbar,norm";

pub fn observables_csv(rows: &[Observables], hbar: f64) -> String {
    let mut s = String::from(OBSERVABLES_HEADER);
    s.push('\n');
    for o in rows {
        let _ = writeln!(
            s,
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.12}",
            o.t,
            units::m_to_um(o.mean_z),
            o.mean_p,
            units::m_to_um(o.delta_z),
            o.delta_p,
            o.product / hbar,
            o.norm
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physconst::{diamond_preset, Spin};

    fn reference_potential(spin: Spin) -> SpinPotential {
        let particle = diamond_preset(1e-17).unwrap().with_spin(spin);
        SpinPotential::new(particle, FieldParams::new(5.7e-4, 1e6, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(SpatialGrid::new(0.0, 1.0, 100).is_err());
        assert!(SpatialGrid::new(0.0, 1.0, 128).is_err());
        assert!(SpatialGrid::new(1.0, 0.0, 256).is_err());
        let g = SpatialGrid::new(-1.0, 1.0, 256).unwrap();
        assert_eq!(g.dz(), 2.0 / 256.0);
        let k = g.wavenumbers();
        assert_eq!(k[0], 0.0);
        assert!(k[128] < 0.0);
    }

    #[test]
    fn fresh_gaussian_moments() {
        let g = SpatialGrid::new(-1e-7, 1e-7, 4096).unwrap();
        let s = init_gaussian(g, 2e-8, 5e-9, 1.0).unwrap();
        let hbar = crate::physconst::Constants::codata().hbar;
        let o = observables(&s, hbar);
        assert!((o.norm - 1.0).abs() < 1e-12);
        assert!((o.mean_z - 2e-8).abs() < 1e-15);
        assert!((o.delta_z / 5e-9 - 1.0).abs() < 1e-9);
        assert!(o.mean_p.abs() < 1e-6 * o.delta_p);
        assert!((o.product / (hbar / 2.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn under_resolved_width() {
        let g = SpatialGrid::new(-1e-7, 1e-7, 256).unwrap();
        assert!(matches!(init_gaussian(g, 0.0, 1e-9, 1.0), Err(Error::Resolution(_))));
        assert!(init_gaussian(g, 9.9e-8, 5e-9, 1.0).is_err());
    }

    #[test]
    fn potential_matches_classical_energy() {
        let pot = reference_potential(Spin::Up);
        let m = pot.particle.mass;
        for &z in &[1e-8, -3e-8, 1e-4] {
            let classical = (crate::dynamics::potential_per_mass(z, &pot.particle, &pot.field)
                - crate::dynamics::potential_per_mass(0.0, &pot.particle, &pot.field))
                * m;
            assert!((pot.energy(z) / classical - 1.0).abs() < 1e-6, "{z}");
        }
    }

    #[test]
    fn reference_conditions_accepted_on_default_grid() {
        let pot = reference_potential(Spin::Up);
        let g = SpatialGrid::default_for(&pot, 5e-8, 5e-9).unwrap();
        assert!(g.z_max >= 5e-8 + 6.0 * 5e-9);
        let s = init_gaussian(g, 5e-8, 5e-9, 1.0).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-12);
        let dt = default_dt(&g, &pot, DEFAULT_STEP_PHASE);
        assert!(Propagator::new(g, &pot, dt).is_ok());
        assert!(matches!(Propagator::new(g, &pot, 4.0 * dt), Err(Error::Resolution(_))));
    }

    #[test]
    fn boundary_escape_reported() {
        let g = SpatialGrid::new(-4e-8, 4e-8, 512).unwrap();
        let free = FreeSpace { mass: 1e-22, hbar: crate::physconst::Constants::codata().hbar };
        let mut s = init_gaussian(g, 0.0, 2e-9, 1.0).unwrap();
        let dt = default_dt(&g, &free, DEFAULT_STEP_PHASE);
        let prop = Propagator::new(g, &free, dt).unwrap();
        let r = prop.run(&mut s, 200_000, 1000);
        assert!(matches!(r, Err(Error::BoundaryEscape { .. })));
    }

    #[test]
    fn density_export() {
        let g = SpatialGrid::new(-1e-7, 1e-7, 256).unwrap();
        let s = init_gaussian(g, 0.0, 1e-8, -1.0).unwrap();
        let csv = density_csv(&s);
        assert!(csv.starts_with(DENSITY_HEADER));
        assert_eq!(csv.lines().count(), 257);
    }
}
