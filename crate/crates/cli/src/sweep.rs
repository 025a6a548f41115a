//! Parallel grid of single-trap runs with deterministic row order.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use catapult_core::ode::StepControl;
use catapult_core::physconst::{units, ParticleParams};
use catapult_core::protocol::{launch_stage, PairState};
use rayon::prelude::*;

use crate::config::SweepSpec;

pub const SWEEP_HEADER: &str =
    "index,mass_kg,eta_tesla_per_m2,z0_um,status,max_dz_um,t_max_dz_s,max_dv_um_per_s,t_max_dv_s";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub mass: f64,
    pub eta: f64,
    /// Release point (m).
    pub z0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMetrics {
    pub max_dz: f64,
    pub t_max_dz: f64,
    pub max_dv: f64,
    pub t_max_dv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub outcome: Result<SweepMetrics, String>,
}

/// Grid points in mass-major, then eta, then z0 order.
pub fn grid(spec: &SweepSpec) -> Vec<SweepPoint> {
    let mut out = Vec::with_capacity(spec.len());
    for &mass in &spec.masses_kg {
        for &eta in &spec.etas_tesla_per_m2 {
            for &z0 in &spec.z0_um {
                out.push(SweepPoint { index: out.len(), mass, eta, z0: units::um_to_m(z0) });
            }
        }
    }
    out
}

/// Both arms released at rest from the same point; maxima of |dz| and |dv|
/// over the integrator nodes and a uniform sampling grid.
pub fn run_point(p: &SweepPoint, spec: &SweepSpec, control: StepControl) -> catapult_core::Result<SweepMetrics> {
    let particle = ParticleParams::new(p.mass, spec.chi_m)?;
    let start = PairState::at_rest(0.0, p.z0);
    let pair = launch_stage(&start, &particle, spec.b0_tesla, p.eta, p.z0, spec.duration_s, control, 0)?;
    let n = (spec.duration_s * spec.sample_rate_hz).ceil() as usize;
    let mut times = pair.knots();
    times.extend((0..=n).map(|i| spec.duration_s * i as f64 / n as f64));
    let mut m = SweepMetrics { max_dz: 0.0, t_max_dz: 0.0, max_dv: 0.0, t_max_dv: 0.0 };
    for t in times {
        let (dz, dv) = (pair.dz(t).abs(), pair.dv(t).abs());
        if dz > m.max_dz || (dz == m.max_dz && t < m.t_max_dz) {
            m.max_dz = dz;
            m.t_max_dz = t;
        }
        if dv > m.max_dv || (dv == m.max_dv && t < m.t_max_dv) {
            m.max_dv = dv;
            m.t_max_dv = t;
        }
    }
    Ok(m)
}

/// Run the whole grid on `workers` threads (0 = all cores). Failed points
/// are recorded in their row and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, control: StepControl, workers: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("building worker pool")?;
    let points = grid(spec);
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|p| SweepRow { point: *p, outcome: run_point(p, spec, control).map_err(|e| e.to_string()) })
            .collect()
    }))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let p = &r.point;
        let _ = write!(out, "{},{:e},{:e},{},", p.index, p.mass, p.eta, units::m_to_um(p.z0));
        match &r.outcome {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "ok,{},{},{},{}",
                    units::m_to_um(m.max_dz),
                    m.t_max_dz,
                    units::m_to_um(m.max_dv),
                    m.t_max_dv
                );
            }
            Err(e) => {
                let msg: String = e.chars().map(|c| if c == ',' || c == '\n' || c == '"' { ' ' } else { c }).collect();
                let _ = writeln!(out, "\"error: {msg}\",,,,");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepSpec {
        SweepSpec {
            masses_kg: vec![1e-17, 1e-16],
            etas_tesla_per_m2: vec![1e6, 2e6],
            z0_um: vec![50.0, 60.0],
            duration_s: 0.3,
            ..Default::default()
        }
    }

    #[test]
    fn grid_order_and_size() {
        let g = grid(&small());
        assert_eq!(g.len(), 8);
        assert!(g.iter().enumerate().all(|(i, p)| p.index == i));
        assert_eq!((g[1].mass, g[1].eta, g[1].z0), (1e-17, 1e6, units::um_to_m(60.0)));
        assert_eq!((g[2].mass, g[2].eta), (1e-17, 2e6));
    }

    #[test]
    fn failures_are_recorded_per_row() {
        let spec = SweepSpec { masses_kg: vec![1e-17, -1.0], ..small() };
        let rows = run_sweep(&spec, StepControl::default(), 2).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows[..4].iter().all(|r| r.outcome.is_ok()));
        assert!(rows[4..].iter().all(|r| r.outcome.is_err()));
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.lines().skip(5).all(|l| l.contains("error") && l.split(',').count() == 9));
    }

    #[test]
    fn single_point_matches_direct_run() {
        let spec = SweepSpec { etas_tesla_per_m2: vec![2.4e6], ..Default::default() };
        let rows = run_sweep(&spec, StepControl::default(), 1).unwrap();
        let direct = run_point(&grid(&spec)[0], &spec, StepControl::default()).unwrap();
        assert_eq!(rows[0].outcome, Ok(direct));
    }
}
