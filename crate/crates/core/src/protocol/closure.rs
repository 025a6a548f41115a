//! Numerical closure of the final stage.
//!
//! Closure means the separation has a local extremum (dv = 0) whose value is
//! zero. A coarse scan over (eta, z) records every such extremum; where the
//! value of a matched extremum changes sign between neighbouring grid points
//! the bracket is refined by Illinois iteration on the parameter. Without a
//! bracket the closest extrema are polished by a secant iteration, trap
//! coefficient first and entry coordinate as fallback. T3 is finally pinned by
//! Newton steps in time alone.

use rayon::prelude::*;

use super::{launch_stage, Pair, PairState, LAMBDA_V, LAMBDA_Z};
use crate::error::{invalid, Error, Result};
use crate::ode::StepControl;
use crate::physconst::ParticleParams;
use crate::roots;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    /// Half-width of the eta range relative to the seed.
    pub eta_rel: f64,
    /// Half-width of the entry-coordinate range (m).
    pub z_half_width: f64,
    /// Points per axis of the coarse scan (1 scans only the seed).
    pub grid: usize,
    /// Absolute protocol time by which closure must happen.
    pub deadline: Option<f64>,
}

impl SearchBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_rel >= 0.0 && self.eta_rel < 1.0) {
            return Err(invalid("eta_rel must lie in [0, 1)"));
        }
        if !(self.z_half_width >= 0.0 && self.z_half_width.is_finite()) {
            return Err(invalid("z_half_width must be non-negative"));
        }
        if self.grid == 0 || self.grid > 101 {
            return Err(invalid("search grid must have 1..=101 points per axis"));
        }
        if let Some(d) = self.deadline {
            if !(d > 0.0) {
                return Err(invalid("deadline must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureSolution {
    pub eta: f64,
    pub initial_magnetic_z: f64,
    pub t3: f64,
    pub dz: f64,
    pub dv: f64,
    /// (dz/LAMBDA_Z)^2 + (dv/LAMBDA_V)^2.
    pub residual: f64,
}

fn residual(dz: f64, dv: f64) -> f64 {
    (dz / LAMBDA_Z).powi(2) + (dv / LAMBDA_V).powi(2)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Knob {
    Eta,
    Z,
}

/// A local extremum of the separation: (time, separation there, sign of the
/// relative acceleration). A genuine closure keeps the curvature sign while
/// the value changes sign; a maximum turning into a minimum is a mismatch.
type Extremum = (f64, f64, f64);

struct Ctx<'a> {
    state: &'a PairState,
    particle: &'a ParticleParams,
    b0: f64,
    end: f64,
    control: StepControl,
    acc: (f64, f64),
}

impl Ctx<'_> {
    fn launch(&self, eta: f64, z: f64, t_end: f64) -> Result<Pair> {
        launch_stage(self.state, self.particle, self.b0, eta, z, t_end, self.control, 2)
    }

    fn extrema(&self, eta: f64, z: f64) -> Option<Vec<Extremum>> {
        let pair = self.launch(eta, z, self.end).ok()?;
        let knots = pair.knots();
        let out: Vec<Extremum> = roots::crossings(&knots, |t| pair.dv(t), self.state.t, self.end, 0.0)
            .into_iter()
            .filter(|&t| t > self.state.t)
            .map(|t| (t, pair.dz(t), pair.da(t).signum()))
            .collect();
        (!out.is_empty()).then_some(out)
    }

    fn nearest(&self, eta: f64, z: f64, like: (f64, f64)) -> Option<Extremum> {
        nearest(&self.extrema(eta, z)?, like)
    }

    /// (dz, dv, da) at the end node of a stage propagated exactly to t.
    fn at(&self, eta: f64, z: f64, t: f64) -> Result<(f64, f64, f64)> {
        if !(t > self.state.t && t <= self.end) {
            return Err(Error::Domain(format!("closure time {t} left the budget")));
        }
        let p = self.launch(eta, z, t)?;
        let (u, d) = (p.up.last(), p.down.last());
        Ok((u.z - d.z, u.v - d.v, u.a - d.a))
    }

    fn params(knob: Knob, base: (f64, f64), p: f64) -> (f64, f64) {
        match knob {
            Knob::Eta => (p, base.1),
            Knob::Z => (base.0, p),
        }
    }

    fn finish(&self, eta: f64, z: f64, mut t: f64) -> Result<ClosureSolution> {
        let (mut dz, mut dv, mut da) = self.at(eta, z, t)?;
        for _ in 0..8 {
            if dz.abs() <= self.acc.0 && dv.abs() <= self.acc.1 {
                return Ok(ClosureSolution { eta, initial_magnetic_z: z, t3: t, dz, dv, residual: residual(dz, dv) });
            }
            if da == 0.0 {
                break;
            }
            t -= dv / da;
            (dz, dv, da) = self.at(eta, z, t)?;
        }
        Err(Error::SearchFailure { best_residual: residual(dz, dv) })
    }

    /// Illinois iteration on one parameter across a sign change of the
    /// tracked extremum.
    fn refine(&self, knob: Knob, base: (f64, f64), a: (f64, Extremum), b: (f64, Extremum)) -> Result<ClosureSolution> {
        let mut track = (a.1 .0, a.1 .2);
        let mut best = if a.1 .1.abs() < b.1 .1.abs() { a } else { b };
        let f = |p: f64| {
            let (eta, z) = Self::params(knob, base, p);
            match self.nearest(eta, z, track) {
                Some(e) => {
                    track = (e.0, e.2);
                    if e.1.abs() < best.1 .1.abs() {
                        best = (p, e);
                    }
                    e.1
                }
                None => f64::NAN,
            }
        };
        let x_tol = 1e-15 * a.0.abs().max(b.0.abs());
        let _ = roots::refine_root(f, a.0, b.0, a.1 .1, b.1 .1, x_tol, 0.25 * self.acc.0);
        let (eta, z) = Self::params(knob, base, best.0);
        self.finish(eta, z, best.1 .0)
    }

    /// Secant iteration on the separation at the extremum nearest `t0`.
    fn polish(&self, knob: Knob, base: (f64, f64), e0: Extremum, bounds: (f64, f64)) -> Result<ClosureSolution> {
        let eval = |p: f64, like: (f64, f64)| {
            let (eta, z) = Self::params(knob, base, p);
            self.nearest(eta, z, like)
        };
        let (p0, h) = match knob {
            Knob::Eta => (base.0, 1e-3 * base.0),
            Knob::Z => (base.1, 1e-8),
        };
        let none = || Error::SearchFailure { best_residual: f64::INFINITY };
        let mut a = (p0, eval(p0, (e0.0, e0.2)).ok_or_else(none)?);
        let p1 = if p0 + h <= bounds.1 { p0 + h } else { p0 - h };
        let mut b = (p1, eval(p1, (a.1 .0, a.1 .2)).ok_or_else(none)?);
        let mut best = if b.1 .1.abs() < a.1 .1.abs() { b } else { a };
        for _ in 0..40 {
            let (ga, gb) = (a.1 .1, b.1 .1);
            if best.1 .1.abs() <= 0.25 * self.acc.0 || ga == gb {
                break;
            }
            if ga.signum() != gb.signum() {
                return self.refine(knob, base, a, b);
            }
            let pc = (b.0 - gb * (b.0 - a.0) / (gb - ga)).clamp(bounds.0, bounds.1);
            if pc == b.0 {
                break;
            }
            let Some(ec) = eval(pc, (b.1 .0, b.1 .2)) else { break };
            (a, b) = (b, (pc, ec));
            if ec.1.abs() < best.1 .1.abs() {
                best = b;
            }
        }
        let (eta, z) = Self::params(knob, base, best.0);
        self.finish(eta, z, best.1 .0)
    }
}

/// Extremum of the same curvature nearest in time to `like` = (t, sign).
fn nearest(list: &[Extremum], like: (f64, f64)) -> Option<Extremum> {
    list.iter()
        .copied()
        .filter(|e| e.2 == like.1)
        .min_by(|a, b| (a.0 - like.0).abs().total_cmp(&(b.0 - like.0).abs()))
}

/// Extremum of `b` matching the k-th of `a`: same curvature, nearest in time
/// and closer than half the local spacing of `a`'s extrema.
fn matched(a: &[Extremum], k: usize, b: &[Extremum]) -> Option<Extremum> {
    let t = a[k].0;
    let gap = [k.checked_sub(1).map(|i| t - a[i].0), a.get(k + 1).map(|e| e.0 - t)]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    nearest(b, (t, a[k].2)).filter(|e| (e.0 - t).abs() < 0.5 * gap)
}

/// Find (eta, entry z, T3) that close both separation and velocity difference.
#[allow(clippy::too_many_arguments)]
pub fn search_closure(
    state: &PairState,
    particle: &ParticleParams,
    b0: f64,
    seed: (f64, f64),
    budget_end: f64,
    search: &SearchBox,
    accuracy: (f64, f64),
    control: StepControl,
) -> Result<ClosureSolution> {
    search.validate()?;
    if state.dz().abs() <= accuracy.0 && state.dv().abs() <= accuracy.1 {
        return Ok(ClosureSolution {
            eta: seed.0,
            initial_magnetic_z: seed.1,
            t3: state.t,
            dz: state.dz(),
            dv: state.dv(),
            residual: residual(state.dz(), state.dv()),
        });
    }
    if !(budget_end > state.t) {
        return Err(invalid("closure budget ends before the stage starts"));
    }
    let ctx = Ctx { state, particle, b0, end: budget_end, control, acc: accuracy };

    let n = search.grid;
    let axis = |i: usize| if n == 1 { 0.0 } else { 2.0 * i as f64 / (n - 1) as f64 - 1.0 };
    let etas: Vec<f64> = (0..n).map(|i| seed.0 * (1.0 + search.eta_rel * axis(i))).collect();
    let zs: Vec<f64> = (0..n).map(|j| seed.1 + search.z_half_width * axis(j)).collect();
    let cells: Vec<Option<Vec<Extremum>>> = (0..n * n)
        .into_par_iter()
        .map(|k| ctx.extrema(etas[k / n], zs[k % n]))
        .collect();

    // Sign changes of matched extrema between grid neighbours, earliest first.
    // (time, knob, grid point, bracket ends as (knob value, extremum))
    type Bracket = (f64, Knob, (f64, f64), (f64, Extremum), (f64, Extremum));
    let mut brackets: Vec<Bracket> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let Some(here) = &cells[i * n + j] else { continue };
            let right = [(Knob::Z, i, j + 1), (Knob::Eta, i + 1, j)];
            for (knob, ii, jj) in right {
                if ii >= n || jj >= n {
                    continue;
                }
                let Some(there) = &cells[ii * n + jj] else { continue };
                for k in 0..here.len() {
                    let Some(m) = matched(here, k, there) else { continue };
                    if here[k].1.signum() == m.1.signum() {
                        continue;
                    }
                    let (pa, pb) = match knob {
                        Knob::Z => (zs[j], zs[jj]),
                        Knob::Eta => (etas[i], etas[ii]),
                    };
                    brackets.push((here[k].0, knob, (etas[i], zs[j]), (pa, here[k]), (pb, m)));
                }
            }
        }
    }
    brackets.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best = f64::INFINITY;
    let mut note = |r: Result<ClosureSolution>| -> Option<ClosureSolution> {
        match r {
            Ok(sol) => Some(sol),
            Err(Error::SearchFailure { best_residual }) => {
                best = best.min(best_residual);
                None
            }
            Err(_) => None,
        }
    };
    for &(_, knob, base, a, b) in brackets.iter().take(8) {
        if let Some(sol) = note(ctx.refine(knob, base, a, b)) {
            return Ok(sol);
        }
    }

    let mut ranked: Vec<(usize, Extremum)> = cells
        .iter()
        .enumerate()
        .filter_map(|(k, c)| {
            let c = c.as_ref()?;
            c.iter().copied().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|e| (k, e))
        })
        .collect();
    ranked.sort_by(|a, b| a.1 .1.abs().total_cmp(&b.1 .1.abs()).then(a.0.cmp(&b.0)));
    let eta_bounds = (etas[0], etas[n - 1]);
    let z_bounds = (zs[0], zs[n - 1]);
    for knob in [Knob::Eta, Knob::Z] {
        let bounds = if knob == Knob::Eta { eta_bounds } else { z_bounds };
        for &(k, e) in ranked.iter().take(4) {
            if let Some(sol) = note(ctx.polish(knob, (etas[k / n], zs[k % n]), e, bounds)) {
                return Ok(sol);
            }
        }
    }
    Err(Error::SearchFailure { best_residual: best })
}
