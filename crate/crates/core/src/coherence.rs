//! Spin coherence after recombination and the field-accuracy budget.

use std::f64::consts::PI;

use serde::Serialize;

use crate::dynamics::{acceleration, harmonic_a, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::field::FieldParams;
use crate::physconst::{diamond_preset, Constants, Spin, DEFAULT_B0};

/// Eight-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Integrate `f(t)` along the trajectory's sample intervals, each split into
/// `pieces` Gauss-Legendre panels.
fn integrate_along<F: FnMut(f64) -> f64>(traj: &Trajectory, pieces: usize, mut f: F) -> f64 {
    let mut acc = Sum::default();
    for w in traj.samples.windows(2) {
        let h = (w[1].t - w[0].t) / pieces as f64;
        for k in 0..pieces {
            let a = w[0].t + k as f64 * h;
            let mid = a + 0.5 * h;
            for (x, wt) in GL_X.iter().zip(GL_W.iter()) {
                acc.add(0.5 * h * wt * f(mid + 0.5 * h * x));
            }
        }
    }
    acc.value()
}

/// Accumulated Larmor angle g muB/hbar * integral of B_z along the path.
pub fn larmor_phase(traj: &Trajectory) -> f64 {
    larmor_phase_with(traj, 1)
}

/// As [`larmor_phase`] with each sample interval split into `pieces` panels.
pub fn larmor_phase_with(traj: &Trajectory, pieces: usize) -> f64 {
    let c = &traj.particle.constants;
    let rate = c.lande_g * c.bohr_magneton / c.hbar;
    let field = traj.field;
    rate * integrate_along(traj, pieces.max(1), |t| field.bz_axis(traj.z_at(t).unwrap_or(f64::NAN)))
}

/// Phase reduced to (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Momentum and position functionals of one arm over consecutive stages,
/// measured from the first stage's start to the last stage's end.
fn arm_functionals(stages: &[Trajectory], pieces: usize) -> Result<(f64, f64)> {
    let first = stages.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let t_end = stages.last().unwrap().t_end();
    let m = first.particle.mass;
    let mut dp = Sum::default();
    let mut dz = Sum::default();
    for tr in stages {
        let force = |t: f64| m * acceleration(tr.z_at(t).unwrap_or(f64::NAN), &tr.particle, &tr.field);
        dp.add(integrate_along(tr, pieces, force));
        dz.add(integrate_along(tr, pieces, |t| (t_end - t) * force(t)) / m);
    }
    Ok((dp.value(), dz.value()))
}

/// Differences (up minus down) of the momentum and position functionals.
pub fn heisenberg_deltas(up: &[Trajectory], down: &[Trajectory]) -> Result<(f64, f64)> {
    if up.len() != down.len() || up.is_empty() {
        return Err(Error::Domain("arms must cover the same stages".into()));
    }
    for (a, b) in up.iter().zip(down) {
        let tol = 1e-12 * a.t_end().abs().max(1.0);
        if (a.t_start() - b.t_start()).abs() > tol || (a.t_end() - b.t_end()).abs() > tol {
            return Err(Error::Domain("arm trajectories span different intervals".into()));
        }
    }
    let (pu, zu) = arm_functionals(up, 2)?;
    let (pd, zd) = arm_functionals(down, 2)?;
    Ok((pu - pd, zu - zd))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceInputs {
    pub phi: f64,
    pub delta_z: f64,
    pub delta_p: f64,
    pub width_z: f64,
    pub width_p: f64,
}

/// <sigma_x> after recombination.
pub fn spin_coherence(inp: &CoherenceInputs) -> Result<f64> {
    if !(inp.width_z > 0.0 && inp.width_p > 0.0) {
        return Err(invalid("wavepacket widths must be positive"));
    }
    let x = (inp.delta_z / inp.width_z).powi(2) + (inp.delta_p / inp.width_p).powi(2);
    Ok(inp.phi.cos() * (-0.5 * x).exp())
}

/// Minimum-uncertainty widths (dz, dp) of a packet after time t.
pub fn minimum_uncertainty_widths(c: &Constants, mass: f64, t: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && t > 0.0) {
        return Err(invalid(format!("mass and time must be positive (m = {mass}, t = {t})")));
    }
    Ok(((t * c.hbar / (2.0 * mass)).sqrt(), (mass * c.hbar / (2.0 * t)).sqrt()))
}

fn closure_term(c: &Constants, mass: f64, z0: f64, a: f64, t: f64, epsilon: f64) -> Result<f64> {
    if !(mass > 0.0 && z0 > 0.0 && a > 0.0 && t > 0.0) {
        return Err(invalid("mass, z0, A and t must be positive"));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon must be non-negative"));
    }
    let cycles = a.sqrt() * t / (2.0 * PI);
    let n = cycles.round();
    if n < 1.0 || ((cycles - n) / cycles).abs() > 1e-6 {
        return Err(Error::ClosurePhase { cycles });
    }
    Ok(2.0 * epsilon * c.hbar.sqrt() / (z0 * a * mass.sqrt() * t.powf(1.5)))
}

/// Relative eta tolerance from the position mismatch.
pub fn eta_tolerance_z(c: &Constants, mass: f64, z0: f64, a: f64, t: f64, epsilon: f64) -> Result<f64> {
    Ok(closure_term(c, mass, z0, a, t, epsilon)?.sqrt())
}

/// Relative eta tolerance from the momentum mismatch.
pub fn eta_tolerance_p(c: &Constants, mass: f64, z0: f64, a: f64, t: f64, epsilon: f64) -> Result<f64> {
    let x = closure_term(c, mass, z0, a, t, epsilon)?;
    // sqrt(1 + x) - 1 without cancellation.
    Ok(x / ((1.0 + x).sqrt() + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BudgetStage {
    I,
    II,
    III,
}

impl BudgetStage {
    pub fn label(self) -> &'static str {
        match self {
            BudgetStage::I => "I",
            BudgetStage::II => "II",
            BudgetStage::III => "III",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(BudgetStage::I),
            "II" | "2" => Ok(BudgetStage::II),
            "III" | "3" => Ok(BudgetStage::III),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

/// Trap coefficient, correction factor and number of closed cycles used for
/// one stage's budget rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetPreset {
    pub eta: f64,
    pub c_correction: f64,
    pub cycles: u32,
}

pub fn budget_preset(stage: BudgetStage) -> Result<BudgetPreset> {
    match stage {
        BudgetStage::II => Ok(BudgetPreset { eta: 1e6, c_correction: 27.3467, cycles: 1 }),
        BudgetStage::I => Ok(BudgetPreset { eta: 1e8, c_correction: 2526.82, cycles: 30 }),
        BudgetStage::III => Err(Error::Config("no budget preset for stage III".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceBudget {
    pub epsilon: f64,
    pub mass: f64,
    pub spin: f64,
    pub stage: BudgetStage,
    pub z0: f64,
    pub a: f64,
    pub t: f64,
    pub eta: f64,
    pub tol_z: f64,
    pub tol_p: f64,
}

/// Tolerance rows for every mass and both spins.
pub fn budget_table(
    c: &Constants,
    masses: &[f64],
    stage: BudgetStage,
    epsilon: f64,
    z0: f64,
) -> Result<Vec<CoherenceBudget>> {
    let preset = budget_preset(stage)?;
    let field = FieldParams::new(DEFAULT_B0, preset.eta, 0.0)?;
    let mut rows = Vec::with_capacity(2 * masses.len());
    for &mass in masses {
        for spin in [Spin::Up, Spin::Down] {
            let particle = diamond_preset(mass)?.with_spin(spin).with_constants(*c);
            let a = harmonic_a(&particle, &field, preset.c_correction)?;
            let t = 2.0 * PI * preset.cycles as f64 / a.sqrt();
            rows.push(CoherenceBudget {
                epsilon,
                mass,
                spin: spin.value(),
                stage,
                z0,
                a,
                t,
                eta: preset.eta,
                tol_z: eta_tolerance_z(c, mass, z0, a, t, epsilon)?,
                tol_p: eta_tolerance_p(c, mass, z0, a, t, epsilon)?,
            });
        }
    }
    Ok(rows)
}

/// Round to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - e);
    (x * scale).round() / scale
}

/// Plain-text table in the layout of a printed budget table.
pub fn format_table(rows: &[CoherenceBudget]) -> String {
    let mut out = String::new();
    if let Some(r) = rows.first() {
        out.push_str(&format!(
            "Stage {} field-accuracy budget (epsilon = {}, z0 = {:.0} um, eta = {:e} T/m^2)\n",
            r.stage.label(),
            r.epsilon,
            r.z0 * 1e6,
            r.eta
        ));
    }
    out.push_str(&format!("{:>10}  {:>4}  {:>12}  {:>12}  {:>10}  {:>9}\n", "mass (kg)", "S_z", "(deta/eta)_z", "(deta/eta)_p", "A (s^-2)", "t (s)"));
    for r in rows {
        out.push_str(&format!(
            "{:>10.0e}  {:>4}  {:>12.1e}  {:>12.1e}  {:>10.4}  {:>9.4}\n",
            r.mass,
            if r.spin > 0.0 { "+1" } else { "-1" },
            r.tol_z,
            r.tol_p,
            r.a,
            r.t
        ));
    }
    out
}
