//! Three-stage catapult protocol for the two spin arms.
//!
//! Each stage switches the trap coefficient and re-bases the magnetic
//! coordinate so that the arms' mean lab position sits at the stage's
//! `initial_magnetic_z`. Lab-frame position and velocity carry over.

mod closure;
pub mod events;
pub mod presets;

pub use closure::{search_closure, ClosureSolution, SearchBox};
pub use events::{detect_zero, superposition_series, Series, ZeroMode};

use crate::dynamics::{acceleration, propagate_span, union_grid, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::field::{adiabaticity_margin, FieldParams, DEFAULT_B_MIN};
use crate::ode::StepControl;
use crate::physconst::{ParticleParams, Spin};
use crate::roots;

/// Residual normaliser for the separation (m).
pub const LAMBDA_Z: f64 = 1e-12;
/// Residual normaliser for the velocity difference (m/s).
pub const LAMBDA_V: f64 = 1e-12;

pub const DEFAULT_TIME_CAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrossingSelection {
    /// First crossing later than `delay` after the stage start.
    FirstAfter { delay: f64 },
    /// Crossing with the largest |dv| within `window` of the stage start.
    MaxVelocityDifference { window: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCondition {
    FixedDuration { duration: f64 },
    SuperpositionZero { accuracy: f64, selection: CrossingSelection },
    SimultaneousZero { dz_accuracy: f64, dv_accuracy: f64, search: Option<SearchBox> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub eta: f64,
    pub initial_magnetic_z: f64,
    pub end: EndCondition,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("stage eta must be positive, got {}", self.eta)));
        }
        if !self.initial_magnetic_z.is_finite() {
            return Err(invalid("stage initial z must be finite"));
        }
        let pos = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive, got {x}")))
            }
        };
        match self.end {
            EndCondition::FixedDuration { duration } => pos(duration, "duration"),
            EndCondition::SuperpositionZero { accuracy, selection } => {
                pos(accuracy, "accuracy")?;
                match selection {
                    CrossingSelection::FirstAfter { delay } if delay < 0.0 => {
                        Err(invalid("crossing delay must be non-negative"))
                    }
                    CrossingSelection::MaxVelocityDifference { window } => pos(window, "window"),
                    _ => Ok(()),
                }
            }
            EndCondition::SimultaneousZero { dz_accuracy, dv_accuracy, search } => {
                pos(dz_accuracy, "dz accuracy")?;
                pos(dv_accuracy, "dv accuracy")?;
                search.map_or(Ok(()), |s| s.validate())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Spin is assigned per arm; any value here is ignored.
    pub particle: ParticleParams,
    pub b0: f64,
    /// Adiabaticity floor that `b0` must not go below (T).
    pub b_min: f64,
    pub stages: Vec<StageConfig>,
    pub time_cap: f64,
    pub control: StepControl,
}

impl ProtocolConfig {
    pub fn new(particle: ParticleParams, b0: f64, stages: Vec<StageConfig>) -> Self {
        ProtocolConfig {
            particle,
            b0,
            b_min: DEFAULT_B_MIN,
            stages,
            time_cap: DEFAULT_TIME_CAP,
            control: StepControl::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(invalid("protocol needs at least one stage"));
        }
        for s in &self.stages {
            s.validate()?;
        }
        FieldParams::new(self.b0, 1.0, 0.0)?.check_floor(self.b_min)?;
        if !(self.time_cap > 0.0) {
            return Err(invalid("time cap must be positive"));
        }
        self.particle.constants.validate()?;
        self.control.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    /// Lab-frame position (m).
    pub z: f64,
    pub v: f64,
}

/// Kinematic state of both arms at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    pub t: f64,
    pub up: ArmState,
    pub down: ArmState,
}

impl PairState {
    pub fn at_rest(t: f64, z: f64) -> Self {
        let s = ArmState { z, v: 0.0 };
        PairState { t, up: s, down: s }
    }

    pub fn dz(&self) -> f64 {
        self.up.z - self.down.z
    }

    pub fn dv(&self) -> f64 {
        self.up.v - self.down.v
    }
}

/// Both arms over one stage, sharing the same field.
#[derive(Debug, Clone)]
pub struct Pair {
    pub up: Trajectory,
    pub down: Trajectory,
}

impl Pair {
    pub fn dz(&self, t: f64) -> f64 {
        self.up.z_at(t).unwrap_or(f64::NAN) - self.down.z_at(t).unwrap_or(f64::NAN)
    }

    pub fn dv(&self, t: f64) -> f64 {
        let v = |tr: &Trajectory| tr.state_at(t).map(|s| s.1).unwrap_or(f64::NAN);
        v(&self.up) - v(&self.down)
    }

    pub fn da(&self, t: f64) -> f64 {
        self.up.acceleration_at(t).unwrap_or(f64::NAN) - self.down.acceleration_at(t).unwrap_or(f64::NAN)
    }

    pub fn knots(&self) -> Vec<f64> {
        union_grid(
            &self.up.times(),
            &self.down.times(),
            self.up.t_start().max(self.down.t_start()),
            self.up.t_end().min(self.down.t_end()),
        )
    }

    pub fn end_state(&self) -> PairState {
        let (u, d) = (self.up.last(), self.down.last());
        PairState {
            t: u.t,
            up: ArmState { z: self.up.field.to_lab(u.z), v: u.v },
            down: ArmState { z: self.down.field.to_lab(d.z), v: d.v },
        }
    }
}

/// Start a stage from `state`: re-base so the arms' mean sits at
/// `initial_magnetic_z`, then propagate both arms to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn launch_stage(
    state: &PairState,
    particle: &ParticleParams,
    b0: f64,
    eta: f64,
    initial_magnetic_z: f64,
    t_end: f64,
    control: StepControl,
    stage_id: usize,
) -> Result<Pair> {
    let mean = 0.5 * (state.up.z + state.down.z);
    let field = FieldParams::new(b0, eta, mean - initial_magnetic_z)?;
    let arm = |spin: Spin, s: ArmState| {
        propagate_span(
            state.t,
            field.to_magnetic(s.z),
            s.v,
            &particle.with_spin(spin),
            &field,
            t_end,
            control,
            stage_id,
        )
    };
    let (up, down) = rayon::join(|| arm(Spin::Up, state.up), || arm(Spin::Down, state.down));
    Ok(Pair { up: up?, down: down? })
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub arm_up: Vec<Trajectory>,
    pub arm_down: Vec<Trajectory>,
    /// End time of every stage.
    pub stage_end_times: Vec<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    pub dz_series: Series,
    pub dv_series: Series,
    pub max_superposition: f64,
    pub stage_max_superposition: Vec<f64>,
    /// Stage parameters as run, including any closure refinement.
    pub stages: Vec<StageConfig>,
    pub closure: Option<ClosureSolution>,
}

impl ProtocolResult {
    pub fn final_state(&self) -> PairState {
        let n = self.arm_up.len() - 1;
        Pair { up: self.arm_up[n].clone(), down: self.arm_down[n].clone() }.end_state()
    }

    pub fn total_time(&self) -> f64 {
        *self.stage_end_times.last().unwrap_or(&0.0)
    }

    pub fn adiabaticity_margin(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for tr in self.arm_up.iter().chain(self.arm_down.iter()) {
            worst = worst.max(adiabaticity_margin(tr, &tr.particle.constants)?);
        }
        Ok(worst)
    }
}

fn end_of_stage(
    pair: &Pair,
    start: f64,
    horizon: f64,
    end: &EndCondition,
    stage: usize,
    cap: f64,
) -> Result<Option<f64>> {
    let knots = pair.knots();
    let found = match *end {
        EndCondition::FixedDuration { .. } => return Ok(Some(horizon)),
        EndCondition::SuperpositionZero { accuracy, selection } => {
            let (lo, hi, first) = match selection {
                CrossingSelection::FirstAfter { delay } => (start + delay, horizon, true),
                CrossingSelection::MaxVelocityDifference { window } => {
                    (start, (start + window).min(horizon), false)
                }
            };
            events::select_crossing(
                &knots,
                |t| pair.dz(t),
                |t| pair.dv(t).abs(),
                lo,
                hi,
                accuracy,
                first,
            )
        }
        EndCondition::SimultaneousZero { dz_accuracy, dv_accuracy, .. } => {
            first_simultaneous_zero(pair, &knots, start, horizon, dz_accuracy, dv_accuracy)
                .ok_or_else(|| Error::NotFound("no simultaneous zero".into()))
        }
    };
    match found {
        Ok(t) => Ok(Some(t)),
        Err(Error::NotFound(_)) if matches!(end, EndCondition::SimultaneousZero { search: Some(_), .. }) => {
            Ok(None)
        }
        Err(Error::NotFound(_)) => Err(Error::ProtocolTimeout { stage, cap }),
        Err(e) => Err(e),
    }
}

/// Earliest time where both |dz| and |dv| are within accuracy.
pub(crate) fn first_simultaneous_zero(
    pair: &Pair,
    knots: &[f64],
    lo: f64,
    hi: f64,
    dz_acc: f64,
    dv_acc: f64,
) -> Option<f64> {
    if pair.dz(lo).abs() <= dz_acc && pair.dv(lo).abs() <= dv_acc {
        return Some(lo);
    }
    roots::crossings(knots, |t| pair.dv(t), lo, hi, 0.1 * dv_acc)
        .into_iter()
        .find(|&t| pair.dz(t).abs() <= dz_acc && pair.dv(t).abs() <= dv_acc)
}

/// Run every stage in order for both arms.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolResult> {
    cfg.validate()?;
    let first = &cfg.stages[0];
    let mut state = PairState::at_rest(0.0, first.initial_magnetic_z);
    let mut res = ProtocolResult {
        arm_up: Vec::new(),
        arm_down: Vec::new(),
        stage_end_times: Vec::new(),
        t1: None,
        t2: None,
        t3: None,
        dz_series: Vec::new(),
        dv_series: Vec::new(),
        max_superposition: 0.0,
        stage_max_superposition: Vec::new(),
        stages: Vec::new(),
        closure: None,
    };

    for (k, stage) in cfg.stages.iter().enumerate() {
        let start = state.t;
        if start >= cfg.time_cap {
            return Err(Error::ProtocolTimeout { stage: k, cap: cfg.time_cap });
        }
        let mut run = *stage;
        let horizon = match stage.end {
            EndCondition::FixedDuration { duration } => start + duration,
            EndCondition::SimultaneousZero { search: Some(b), .. } => {
                b.deadline.unwrap_or(cfg.time_cap).min(cfg.time_cap)
            }
            _ => cfg.time_cap,
        };
        if horizon > cfg.time_cap {
            return Err(Error::ProtocolTimeout { stage: k, cap: cfg.time_cap });
        }
        if !(horizon > start) {
            return Err(Error::ProtocolTimeout { stage: k, cap: horizon });
        }
        let pair = launch_stage(
            &state, &cfg.particle, cfg.b0, stage.eta, stage.initial_magnetic_z, horizon, cfg.control, k,
        )?;
        let t_end = match end_of_stage(&pair, start, horizon, &stage.end, k, cfg.time_cap)? {
            Some(t) => t,
            None => {
                let EndCondition::SimultaneousZero { dz_accuracy, dv_accuracy, search: Some(b) } = stage.end
                else {
                    unreachable!()
                };
                let sol = search_closure(
                    &state,
                    &cfg.particle,
                    cfg.b0,
                    (stage.eta, stage.initial_magnetic_z),
                    horizon,
                    &b,
                    (dz_accuracy, dv_accuracy),
                    cfg.control,
                )?;
                run.eta = sol.eta;
                run.initial_magnetic_z = sol.initial_magnetic_z;
                res.closure = Some(sol);
                sol.t3
            }
        };
        let pair = if t_end > start {
            launch_stage(&state, &cfg.particle, cfg.b0, run.eta, run.initial_magnetic_z, t_end, cfg.control, k)?
        } else {
            // Already closed on entry: a single-node stage.
            let mut p = pair;
            p.up = p.up.truncated(start)?;
            p.down = p.down.truncated(start)?;
            p.up.samples.truncate(1);
            p.down.samples.truncate(1);
            p
        };

        let (dz, dv) = if pair.up.samples.len() > 1 {
            superposition_series(&pair.up, &pair.down)?
        } else {
            (vec![(start, state.dz())], vec![(start, state.dv())])
        };
        let mut stage_max = dz.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        if pair.up.samples.len() > 1 {
            for t in roots::crossings(&pair.knots(), |t| pair.dv(t), start, t_end, 0.0) {
                stage_max = stage_max.max(pair.dz(t).abs());
            }
        }
        let skip = usize::from(!res.dz_series.is_empty());
        res.dz_series.extend(dz.into_iter().skip(skip));
        res.dv_series.extend(dv.into_iter().skip(skip));
        res.stage_max_superposition.push(stage_max);
        res.max_superposition = res.max_superposition.max(stage_max);
        match k {
            0 => res.t1 = Some(t_end),
            1 => res.t2 = Some(t_end),
            2 => res.t3 = Some(t_end),
            _ => {}
        }
        res.stage_end_times.push(t_end);
        res.stages.push(run);
        state = pair.end_state();
        res.arm_up.push(pair.up);
        res.arm_down.push(pair.down);
    }
    Ok(res)
}

/// Largest mismatch between stored and recomputed sample accelerations.
pub fn check_arm_acceleration(tr: &Trajectory) -> f64 {
    tr.samples
        .iter()
        .map(|s| (s.a - acceleration(s.z, &tr.particle, &tr.field)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::propagate;
    use crate::physconst::diamond_preset;

    fn particle() -> ParticleParams {
        diamond_preset(1e-17).unwrap()
    }

    #[test]
    fn single_fixed_stage_matches_propagate() {
        let stage = StageConfig {
            eta: 1e8,
            initial_magnetic_z: 1e-4,
            end: EndCondition::FixedDuration { duration: 0.05 },
        };
        let cfg = ProtocolConfig::new(particle(), 5.7e-4, vec![stage]);
        let r = run_protocol(&cfg).unwrap();
        let f = FieldParams::new(5.7e-4, 1e8, 0.0).unwrap();
        let up = propagate(1e-4, 0.0, &particle().with_spin(Spin::Up), &f, 0.05, StepControl::default()).unwrap();
        let down = propagate(1e-4, 0.0, &particle().with_spin(Spin::Down), &f, 0.05, StepControl::default()).unwrap();
        assert_eq!(r.arm_up[0].samples, up.samples);
        assert_eq!(r.arm_down[0].samples, down.samples);
        assert_eq!(r.t1, Some(0.05));
    }

    #[test]
    fn empty_protocol_rejected() {
        let cfg = ProtocolConfig::new(particle(), 5.7e-4, vec![]);
        assert!(run_protocol(&cfg).is_err());
    }

    #[test]
    fn timeout_when_no_crossing() {
        let stage = StageConfig {
            eta: 1e8,
            initial_magnetic_z: 1e-4,
            end: EndCondition::SuperpositionZero {
                accuracy: 1e-12,
                selection: CrossingSelection::FirstAfter { delay: 0.5 },
            },
        };
        let mut cfg = ProtocolConfig::new(particle(), 5.7e-4, vec![stage]);
        cfg.time_cap = 0.4;
        assert!(matches!(run_protocol(&cfg), Err(Error::ProtocolTimeout { .. })));
    }

    #[test]
    fn stage_one_crossing_accuracy() {
        let stage = StageConfig {
            eta: 1e8,
            initial_magnetic_z: 1e-4,
            end: EndCondition::SuperpositionZero {
                accuracy: 1e-12,
                selection: CrossingSelection::FirstAfter { delay: 1e-3 },
            },
        };
        let r = run_protocol(&ProtocolConfig::new(particle(), 5.7e-4, vec![stage])).unwrap();
        assert!(r.final_state().dz().abs() < 1e-12);
        assert!(check_arm_acceleration(&r.arm_up[0]) < 1e-9);
    }
}
