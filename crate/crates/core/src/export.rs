//! CSV writers for trajectories and series.

use std::fmt::Write as _;

use crate::dynamics::Trajectory;
use crate::physconst::units::m_to_um;

pub const TRAJECTORY_HEADER: &str = "t_s,z_um,v_um_per_s,a_um_per_s2,spin,stage";

/// Lab-frame samples of every trajectory, one row per node.
pub fn trajectories_csv<'a, I: IntoIterator<Item = &'a Trajectory>>(trajs: I) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for tr in trajs {
        for s in &tr.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.t,
                m_to_um(tr.field.to_lab(s.z)),
                m_to_um(s.v),
                m_to_um(s.a),
                tr.spin.label(),
                tr.stage_id + 1
            );
        }
    }
    out
}

/// Two-column series with a header; `scale` is applied to the values.
pub fn series_csv(header: &str, series: &[(f64, f64)], scale: f64) -> String {
    let mut out = String::with_capacity(series.len() * 32);
    out.push_str(header);
    out.push('\n');
    for &(t, y) in series {
        let _ = writeln!(out, "{},{}", t, y * scale);
    }
    out
}
