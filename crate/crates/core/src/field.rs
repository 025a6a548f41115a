//! Quartic trap field, its gradient and the Larmor/adiabaticity diagnostics.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::physconst::{Constants, DEFAULT_B0};

/// Default adiabaticity floor for the bias field (T).
pub const DEFAULT_B_MIN: f64 = DEFAULT_B0;

/// Margins below this count as adiabatic.
pub const ADIABATIC_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub b0: f64,
    pub eta: f64,
    /// Lab-frame position of the magnetic z = 0 for this stage.
    pub z_origin: f64,
}

impl FieldParams {
    pub fn new(b0: f64, eta: f64, z_origin: f64) -> Result<Self> {
        if !(b0.is_finite() && b0 >= 0.0) {
            return Err(invalid(format!("B0 must be non-negative, got {b0}")));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(invalid(format!("eta must be positive, got {eta}")));
        }
        if !z_origin.is_finite() {
            return Err(invalid("z_origin must be finite"));
        }
        Ok(FieldParams { b0, eta, z_origin })
    }

    pub fn check_floor(&self, b_min: f64) -> Result<()> {
        if self.b0 < b_min {
            return Err(invalid(format!(
                "B0 = {} T is below the adiabaticity floor {} T",
                self.b0, b_min
            )));
        }
        Ok(())
    }

    pub fn to_lab(&self, z_magnetic: f64) -> f64 {
        z_magnetic + self.z_origin
    }

    pub fn to_magnetic(&self, z_lab: f64) -> f64 {
        z_lab - self.z_origin
    }

    /// B_z on the x = 0 line.
    pub fn bz_axis(&self, z: f64) -> f64 {
        self.b0 + self.eta * z * z
    }
}

pub fn field_vector(z: f64, x: f64, p: &FieldParams) -> (f64, f64) {
    let bz = p.b0 + p.eta * z * z - p.eta * x * x;
    let bx = -2.0 * p.eta * z * x;
    (bz, bx)
}

pub fn field_magnitude(z: f64, x: f64, p: &FieldParams) -> f64 {
    let (bz, bx) = field_vector(z, x, p);
    bz.hypot(bx)
}

/// d(B^2)/dz at x = 0.
pub fn grad_b_squared_z(z: f64, p: &FieldParams) -> f64 {
    4.0 * p.eta * z * (p.b0 + p.eta * z * z)
}

pub fn larmor_frequency(c: &Constants, z: f64, x: f64, p: &FieldParams) -> f64 {
    c.gyromagnetic_ratio() * field_magnitude(z, x, p)
}

/// Largest |d omega_L/dt| / omega_L^2 along the trajectory (x = 0).
///
/// Returns infinity if the field vanishes at a sample.
pub fn adiabaticity_margin(traj: &Trajectory, c: &Constants) -> Result<f64> {
    let s = &traj.samples;
    if s.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: s.len() });
    }
    let omega: Vec<f64> = s
        .iter()
        .map(|q| larmor_frequency(c, q.z, 0.0, &traj.field))
        .collect();
    let n = s.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let (lo, hi) = match i {
            0 => (0, 1),
            _ if i == n - 1 => (n - 2, n - 1),
            _ => (i - 1, i + 1),
        };
        let rate = (omega[hi] - omega[lo]) / (s[hi].t - s[lo].t);
        if omega[i] == 0.0 {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(rate.abs() / (omega[i] * omega[i]));
    }
    Ok(worst)
}
