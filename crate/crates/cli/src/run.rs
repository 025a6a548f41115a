//! Mode runners: compute, then write CSV, SVG and a TOML summary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use catapult_core::analysis::{self, StageOneConfig};
use catapult_core::coherence::{budget_table, format_table, CoherenceBudget};
use catapult_core::dynamics::{fit_correction_factor, propagate, trajectory_deviation, Trajectory};
use catapult_core::export::{series_csv, trajectories_csv};
use catapult_core::field::adiabaticity_margin;
use catapult_core::physconst::{units, Constants, ParticleParams, Spin};
use catapult_core::protocol::run_protocol;
use catapult_core::quantum::{density_csv, observables_csv, run_packet};
use catapult_core::FieldParams;
use serde::Serialize;

use crate::config::{Mode, OutputFormat, RunConfig};
use crate::svg::{line_plot, Line};
use crate::sweep::{run_sweep, sweep_csv};

pub const BUDGET_HEADER: &str = "mass_kg,spin,stage,tol_z,tol_p,A_s2,t_s,eta";

#[derive(Debug, Clone)]
pub struct Options {
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    /// Worker threads for sweeps and scaling fits; 0 uses every core.
    pub workers: usize,
    pub fixed_step: Option<f64>,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Writer<'a> {
    dir: &'a Path,
    format: OutputFormat,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, body: impl FnOnce() -> String) -> Result<()> {
        if self.format.csv() {
            self.put(name, &body())?;
        }
        Ok(())
    }

    fn svg(&mut self, name: &str, body: impl FnOnce() -> String) -> Result<()> {
        if self.format.svg() {
            self.put(name, &body())?;
        }
        Ok(())
    }

    fn summary<T: Serialize>(&mut self, value: &T) -> Result<String> {
        let text = toml::to_string(value).context("serialising summary")?;
        self.put("summary.toml", &text)?;
        Ok(text)
    }
}

/// Validate, run the mode and write its artifacts under `opts.out_dir`.
pub fn run(mode: Mode, cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(dt) = opts.fixed_step {
        cfg.solver.fixed_step_s = Some(dt);
    }
    cfg.validate(mode)?;
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let mut w = Writer { dir: &opts.out_dir, format: opts.format, files: Vec::new() };
    let summary = match mode {
        Mode::Simulate => simulate(&cfg, &mut w)?,
        Mode::Protocol => protocol(&cfg, &mut w)?,
        Mode::CoherenceBudget => coherence_budget(&cfg, &mut w)?,
        Mode::Quantum => quantum(&cfg, &mut w)?,
        Mode::ScalingFit => scaling_fit(&cfg, opts.workers, &mut w)?,
        Mode::Sweep => sweep(&cfg, opts.workers, &mut w)?,
    };
    Ok(Outcome { files: w.files, summary })
}

fn lab_points(trs: &[Trajectory], f: impl Fn(&Trajectory, f64, f64) -> f64) -> Vec<(f64, f64)> {
    trs.iter().flat_map(|tr| tr.samples.iter().map(|s| (s.t, f(tr, s.z, s.v)))).collect()
}

#[derive(Serialize)]
struct ArmSummary {
    spin: i8,
    final_z_um: f64,
    final_v_um_per_s: f64,
    max_abs_z_um: f64,
    adiabaticity_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fitted_correction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate_deviation_um: Option<f64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    mode: &'static str,
    mass_kg: f64,
    eta_tesla_per_m2: f64,
    z0_um: f64,
    duration_s: f64,
    arms: Vec<ArmSummary>,
}

fn simulate(cfg: &RunConfig, w: &mut Writer) -> Result<String> {
    let s = cfg.simulate.clone().unwrap_or_default();
    let control = cfg.solver.control();
    let field = FieldParams::new(s.b0_tesla, s.eta_tesla_per_m2, 0.0)?;
    let base = ParticleParams::new(s.mass_kg, s.chi_m)?;
    let mut trajs = Vec::new();
    let mut arms = Vec::new();
    for &spin in &s.spins {
        let particle = base.with_spin(Spin::from_value(spin as f64)?);
        let z0 = units::um_to_m(s.z0_um);
        let tr = propagate(z0, units::um_to_m(s.v0_um_per_s), &particle, &field, s.duration_s, control)?;
        let (fitted, dev) = if s.fit_correction {
            let (c, model) = fit_correction_factor(&tr)?;
            let surrogate = model.trajectory(tr.t_start(), tr.t_end(), 2000, &tr)?;
            (Some(c), Some(units::m_to_um(trajectory_deviation(&tr, &surrogate)?.0)))
        } else {
            (None, None)
        };
        arms.push(ArmSummary {
            spin,
            final_z_um: units::m_to_um(tr.last().z),
            final_v_um_per_s: units::m_to_um(tr.last().v),
            max_abs_z_um: units::m_to_um(tr.samples.iter().map(|x| x.z.abs()).fold(0.0, f64::max)),
            adiabaticity_margin: adiabaticity_margin(&tr, &particle.constants)?,
            fitted_correction: fitted,
            surrogate_deviation_um: dev,
        });
        trajs.push(tr);
    }
    w.csv("trajectories.csv", || trajectories_csv(&trajs))?;
    w.svg("trajectories.svg", || {
        let series: Vec<Vec<(f64, f64)>> =
            trajs.iter().map(|tr| lab_points(std::slice::from_ref(tr), |_, z, _| units::m_to_um(z))).collect();
        let labels: Vec<String> = trajs.iter().map(|tr| format!("S = {}", tr.spin.label())).collect();
        let lines: Vec<Line> = series.iter().zip(&labels).map(|(p, l)| Line { label: l, points: p }).collect();
        line_plot("Single-arm trajectories", "t (s)", "z (um)", &lines)
    })?;
    w.summary(&SimulateSummary {
        mode: Mode::Simulate.label(),
        mass_kg: s.mass_kg,
        eta_tesla_per_m2: s.eta_tesla_per_m2,
        z0_um: s.z0_um,
        duration_s: s.duration_s,
        arms,
    })
}

#[derive(Serialize)]
struct StageSummary {
    eta_tesla_per_m2: f64,
    initial_z_um: f64,
    end_s: f64,
    max_superposition_um: f64,
}

#[derive(Serialize)]
struct ClosureSummary {
    eta_tesla_per_m2: f64,
    initial_z_um: f64,
    t3_s: f64,
    dz_um: f64,
    dv_um_per_s: f64,
}

#[derive(Serialize)]
struct ProtocolSummary {
    mode: &'static str,
    name: String,
    mass_kg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    t1_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t2_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t3_s: Option<f64>,
    total_time_s: f64,
    max_superposition_um: f64,
    final_dz_um: f64,
    final_dv_um_per_s: f64,
    adiabaticity_margin: f64,
    stages: Vec<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closure: Option<ClosureSummary>,
}

fn protocol(cfg: &RunConfig, w: &mut Writer) -> Result<String> {
    let section = cfg.protocol.clone().unwrap_or_default();
    let spec = section.spec()?;
    let pc = section.to_config(&cfg.solver, cfg.b_min_tesla)?;
    let res = run_protocol(&pc)?;
    let fin = res.final_state();

    w.csv("trajectories.csv", || trajectories_csv(res.arm_up.iter().chain(&res.arm_down)))?;
    w.csv("dz.csv", || series_csv("t_s,dz_um", &res.dz_series, 1e6))?;
    w.csv("dv.csv", || series_csv("t_s,dv_um_per_s", &res.dv_series, 1e6))?;
    let um = |s: &[(f64, f64)]| s.iter().map(|&(t, y)| (t, units::m_to_um(y))).collect::<Vec<_>>();
    w.svg("dz.svg", || line_plot("Superposition size", "t (s)", "dz (um)", &[Line { label: "dz", points: &um(&res.dz_series) }]))?;
    w.svg("dv.svg", || {
        line_plot("Velocity difference", "t (s)", "dv (um/s)", &[Line { label: "dv", points: &um(&res.dv_series) }])
    })?;
    w.svg("arms.svg", || {
        let up = lab_points(&res.arm_up, |tr, z, _| units::m_to_um(tr.field.to_lab(z)));
        let down = lab_points(&res.arm_down, |tr, z, _| units::m_to_um(tr.field.to_lab(z)));
        line_plot("Arm positions (lab frame)", "t (s)", "z (um)", &[Line { label: "S = +1", points: &up }, Line { label: "S = -1", points: &down }])
    })?;

    let stages = res
        .stages
        .iter()
        .zip(&res.stage_end_times)
        .zip(&res.stage_max_superposition)
        .map(|((s, &end), &max)| StageSummary {
            eta_tesla_per_m2: s.eta,
            initial_z_um: units::m_to_um(s.initial_magnetic_z),
            end_s: end,
            max_superposition_um: units::m_to_um(max),
        })
        .collect();
    w.summary(&ProtocolSummary {
        mode: Mode::Protocol.label(),
        name: spec.name.clone().unwrap_or_else(|| "custom".into()),
        mass_kg: spec.mass_kg,
        t1_s: res.t1,
        t2_s: res.t2,
        t3_s: res.t3,
        total_time_s: res.total_time(),
        max_superposition_um: units::m_to_um(res.max_superposition),
        final_dz_um: units::m_to_um(fin.dz()),
        final_dv_um_per_s: units::m_to_um(fin.dv()),
        adiabaticity_margin: res.adiabaticity_margin()?,
        stages,
        closure: res.closure.map(|c| ClosureSummary {
            eta_tesla_per_m2: c.eta,
            initial_z_um: units::m_to_um(c.initial_magnetic_z),
            t3_s: c.t3,
            dz_um: units::m_to_um(c.dz),
            dv_um_per_s: units::m_to_um(c.dv),
        }),
    })
}

/// Budget rows for every configured stage, in configured order.
pub fn budget_rows(cfg: &RunConfig) -> Result<Vec<CoherenceBudget>> {
    let b = cfg.coherence_budget.clone().unwrap_or_default();
    let c = Constants::codata();
    let mut rows = Vec::new();
    for stage in b.stages()? {
        rows.extend(budget_table(&c, &b.masses_kg, stage, b.epsilon, units::um_to_m(b.z0_um))?);
    }
    Ok(rows)
}

pub fn budget_csv(rows: &[CoherenceBudget]) -> String {
    let mut out = String::from(BUDGET_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:e},{},{},{:e},{:e},{},{},{:e}\n",
            r.mass,
            if r.spin > 0.0 { "+1" } else { "-1" },
            r.stage.label(),
            r.tol_z,
            r.tol_p,
            r.a,
            r.t,
            r.eta
        ));
    }
    out
}

#[derive(Serialize)]
struct BudgetSummary {
    mode: &'static str,
    epsilon: f64,
    z0_um: f64,
    rows: Vec<CoherenceBudget>,
}

fn coherence_budget(cfg: &RunConfig, w: &mut Writer) -> Result<String> {
    let b = cfg.coherence_budget.clone().unwrap_or_default();
    let rows = budget_rows(cfg)?;
    w.csv("budget.csv", || budget_csv(&rows))?;
    let mut text = String::new();
    for stage in b.stages()? {
        let part: Vec<CoherenceBudget> = rows.iter().filter(|r| r.stage == stage).copied().collect();
        text.push_str(&format_table(&part));
        text.push('\n');
    }
    w.put("tables.txt", &text)?;
    w.summary(&BudgetSummary { mode: Mode::CoherenceBudget.label(), epsilon: b.epsilon, z0_um: b.z0_um, rows })
}

#[derive(Serialize)]
struct QuantumSummary {
    mode: &'static str,
    mass_kg: f64,
    spin: i8,
    grid_points: usize,
    grid_min_um: f64,
    grid_max_um: f64,
    dt_s: f64,
    min_product_over_hbar: f64,
    max_product_over_hbar: f64,
    max_norm_drift: f64,
}

fn quantum(cfg: &RunConfig, w: &mut Writer) -> Result<String> {
    let q = cfg.quantum.clone().unwrap_or_default();
    let particle = ParticleParams::new(q.mass_kg, q.chi_m)?.with_spin(Spin::from_value(q.spin as f64)?);
    let field = FieldParams::new(q.b0_tesla, q.eta_tesla_per_m2, 0.0)?;
    let run = run_packet(
        &particle,
        &field,
        units::um_to_m(q.center_um),
        units::um_to_m(q.width_um),
        q.duration_s,
        q.outputs,
    )?;
    let hbar = particle.constants.hbar;
    let obs = &run.observables;
    w.csv("observables.csv", || observables_csv(obs, hbar))?;
    w.csv("density_final.csv", || density_csv(&run.final_state))?;
    w.svg("uncertainty.svg", || {
        let pts: Vec<(f64, f64)> = obs.iter().map(|o| (o.t, o.product / hbar)).collect();
        line_plot("Uncertainty product", "t (s)", "dz dp / hbar", &[Line { label: "dz dp", points: &pts }])
    })?;
    w.svg("mean_position.svg", || {
        let pts: Vec<(f64, f64)> = obs.iter().map(|o| (o.t, units::m_to_um(o.mean_z))).collect();
        line_plot("Mean position", "t (s)", "<z> (um)", &[Line { label: "<z>", points: &pts }])
    })?;
    w.summary(&QuantumSummary {
        mode: Mode::Quantum.label(),
        mass_kg: q.mass_kg,
        spin: q.spin,
        grid_points: run.grid.n_points,
        grid_min_um: units::m_to_um(run.grid.z_min),
        grid_max_um: units::m_to_um(run.grid.z_max),
        dt_s: run.dt,
        min_product_over_hbar: obs.iter().map(|o| o.product / hbar).fold(f64::INFINITY, f64::min),
        max_product_over_hbar: obs.iter().map(|o| o.product / hbar).fold(0.0, f64::max),
        max_norm_drift: obs.iter().map(|o| (o.norm - 1.0).abs()).fold(0.0, f64::max),
    })
}

#[derive(Serialize)]
struct AmplitudeRow {
    mass_kg: f64,
    t1_s: f64,
    t1_bound_s: f64,
    amplitude_um: f64,
}

#[derive(Serialize)]
struct ScalingSummary {
    mode: &'static str,
    published_coefficient_kg: f64,
    fit: analysis::ScalingFit,
    sqrt_a: f64,
    amplitudes: Vec<AmplitudeRow>,
}

fn scaling_fit(cfg: &RunConfig, workers: usize, w: &mut Writer) -> Result<String> {
    let s = cfg.scaling_fit.clone().unwrap_or_default();
    let stage = StageOneConfig {
        window: s.window_s,
        sample_rate: s.sample_rate_hz,
        control: cfg.solver.control(),
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let (fit, envelopes) = pool.install(|| -> Result<_> {
        let fit = analysis::fit_velocity_slope(&s.masses_kg, &stage)?;
        let env = s
            .masses_kg
            .iter()
            .map(|&m| analysis::velocity_envelope(m, &stage))
            .collect::<catapult_core::Result<Vec<_>>>()?;
        Ok((fit, env))
    })?;

    let mut amplitudes = Vec::new();
    for &mass in &s.masses_kg {
        let bound = analysis::t1_upper_bound(mass, s.v_max_m_per_s)?;
        for &t1 in s.t1_s.iter().filter(|&&t| t <= bound) {
            let dz = analysis::velocity_law(mass, t1) / s.sqrt_a;
            amplitudes.push(AmplitudeRow { mass_kg: mass, t1_s: t1, t1_bound_s: bound, amplitude_um: units::m_to_um(dz) });
        }
    }

    w.csv("envelope.csv", || {
        let mut out = String::from("mass_kg,t1_s,max_dv_m_per_s\n");
        for (m, env) in s.masses_kg.iter().zip(&envelopes) {
            for (t, v) in env {
                out.push_str(&format!("{m:e},{t},{v}\n"));
            }
        }
        out
    })?;
    w.csv("amplitude.csv", || {
        let mut out = String::from("mass_kg,t1_s,t1_bound_s,amplitude_um\n");
        for r in &amplitudes {
            out.push_str(&format!("{:e},{},{},{}\n", r.mass_kg, r.t1_s, r.t1_bound_s, r.amplitude_um));
        }
        out
    })?;
    w.svg("envelope.svg", || {
        let labels: Vec<String> = s.masses_kg.iter().map(|m| format!("m = {m:e} kg")).collect();
        let scaled: Vec<Vec<(f64, f64)>> =
            envelopes.iter().map(|e| e.iter().map(|&(t, v)| (t, units::m_to_um(v))).collect()).collect();
        let lines: Vec<Line> = scaled.iter().zip(&labels).map(|(p, l)| Line { label: l, points: p }).collect();
        line_plot("Stage-I velocity envelope", "T1 (s)", "max |dv| (um/s)", &lines)
    })?;
    w.summary(&ScalingSummary {
        mode: Mode::ScalingFit.label(),
        published_coefficient_kg: analysis::VELOCITY_COEFFICIENT,
        fit,
        sqrt_a: s.sqrt_a,
        amplitudes,
    })
}

#[derive(Serialize)]
struct SweepSummary {
    mode: &'static str,
    points: usize,
    failed: usize,
    duration_s: f64,
}

fn sweep(cfg: &RunConfig, workers: usize, w: &mut Writer) -> Result<String> {
    let spec = cfg.sweep.clone().unwrap_or_default();
    let rows = run_sweep(&spec, cfg.solver.control(), workers)?;
    w.csv("sweep.csv", || sweep_csv(&rows))?;
    w.svg("sweep.svg", || {
        let mut lines_data: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for &m in &spec.masses_kg {
            for &z0 in &spec.z0_um {
                let pts = rows
                    .iter()
                    .filter(|r| r.point.mass == m && units::m_to_um(r.point.z0) == z0)
                    .filter_map(|r| r.outcome.as_ref().ok().map(|x| (r.point.eta, units::m_to_um(x.max_dz))))
                    .collect();
                lines_data.push((format!("m = {m:e}, z0 = {z0} um"), pts));
            }
        }
        let lines: Vec<Line> = lines_data.iter().map(|(l, p)| Line { label: l, points: p }).collect();
        line_plot("Maximum superposition", "eta (T/m^2)", "max |dz| (um)", &lines)
    })?;
    w.summary(&SweepSummary {
        mode: Mode::Sweep.label(),
        points: rows.len(),
        failed: rows.iter().filter(|r| r.outcome.is_err()).count(),
        duration_s: spec.duration_s,
    })
}
