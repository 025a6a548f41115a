//! Physical constants, particle parameters and unit conversions.
//!
//! Everything internal is SI. The `units` helpers convert to the micrometre
//! based units used in configuration files and exported tables.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Mass magnetic susceptibility of diamond (m^3/kg).
pub const DIAMOND_CHI_M: f64 = -6.2e-9;

/// Default bias field (T).
pub const DEFAULT_B0: f64 = 5.7e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    pub hbar: f64,
    pub electron_charge: f64,
    pub electron_mass: f64,
    pub bohr_magneton: f64,
    pub vacuum_permeability: f64,
    pub lande_g: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self::codata()
    }
}

impl Constants {
    /// CODATA 2018 values with g = 2.
    pub fn codata() -> Self {
        let hbar = 1.054_571_817e-34;
        let electron_charge = 1.602_176_634e-19;
        let electron_mass = 9.109_383_701_5e-31;
        Constants {
            hbar,
            electron_charge,
            electron_mass,
            bohr_magneton: electron_charge * hbar / (2.0 * electron_mass),
            vacuum_permeability: 1.256_637_062_12e-6,
            lande_g: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("hbar", self.hbar),
            ("electron_charge", self.electron_charge),
            ("electron_mass", self.electron_mass),
            ("bohr_magneton", self.bohr_magneton),
            ("vacuum_permeability", self.vacuum_permeability),
            ("lande_g", self.lande_g),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("constant {name} must be positive, got {v}")));
            }
        }
        let mu_b = self.electron_charge * self.hbar / (2.0 * self.electron_mass);
        if ((self.bohr_magneton - mu_b) / mu_b).abs() > 1e-12 {
            return Err(invalid(format!(
                "bohr_magneton {} inconsistent with e*hbar/(2 m_e) = {}",
                self.bohr_magneton, mu_b
            )));
        }
        Ok(())
    }

    /// Gyromagnetic ratio g e / (2 m_e) in rad s^-1 T^-1.
    pub fn gyromagnetic_ratio(&self) -> f64 {
        self.lande_g * self.electron_charge / (2.0 * self.electron_mass)
    }
}

/// Spin eigenvalue carried by one arm of the superposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn value(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }

    pub fn from_value(s: f64) -> Result<Spin> {
        if s == 1.0 {
            Ok(Spin::Up)
        } else if s == -1.0 {
            Ok(Spin::Down)
        } else {
            Err(invalid(format!("spin must be +1 or -1, got {s}")))
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Spin::Up => "+1",
            Spin::Down => "-1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleParams {
    pub mass: f64,
    pub chi_m: f64,
    pub spin: Option<Spin>,
    /// Inert; the D S^2 term only adds a global phase.
    pub zero_field_splitting: Option<f64>,
    pub constants: Constants,
}

impl ParticleParams {
    pub fn new(mass: f64, chi_m: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(invalid(format!("mass must be positive, got {mass}")));
        }
        if !chi_m.is_finite() {
            return Err(invalid("chi_m must be finite"));
        }
        Ok(ParticleParams {
            mass,
            chi_m,
            spin: None,
            zero_field_splitting: None,
            constants: Constants::default(),
        })
    }

    pub fn with_spin(mut self, spin: Spin) -> Self {
        self.spin = Some(spin);
        self
    }

    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }

    /// Spin eigenvalue, or 0 when no arm has been assigned.
    pub fn spin_value(&self) -> f64 {
        self.spin.map_or(0.0, Spin::value)
    }
}

/// Diamond nano-crystal of the given mass.
pub fn diamond_preset(mass: f64) -> Result<ParticleParams> {
    ParticleParams::new(mass, DIAMOND_CHI_M)
}

pub mod units {
    pub const UM: f64 = 1e-6;

    pub fn um_to_m(x: f64) -> f64 {
        x * UM
    }

    pub fn m_to_um(x: f64) -> f64 {
        x / UM
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bohr_magneton_consistent() {
        let c = Constants::codata();
        c.validate().unwrap();
        assert!((c.bohr_magneton - 9.274_010_078_3e-24).abs() / 9.274e-24 < 1e-9);
    }

    #[test]
    fn gyromagnetic_ratio_value() {
        let g = Constants::codata().gyromagnetic_ratio();
        assert!((g / 1.7588e11 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_inconsistent_magneton() {
        let mut c = Constants::codata();
        c.bohr_magneton *= 1.001;
        assert!(c.validate().is_err());
        c = Constants::codata();
        c.hbar = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn diamond_preset_values() {
        let p = diamond_preset(1e-17).unwrap();
        assert_eq!(p.mass, 1e-17);
        assert_eq!(p.chi_m, -6.2e-9);
        assert!(p.spin.is_none());
        assert_eq!(diamond_preset(1e-15).unwrap().chi_m, -6.2e-9);
        assert!(diamond_preset(0.0).is_err());
        assert!(diamond_preset(-1.0).is_err());
    }

    #[test]
    fn chi_from_volume_susceptibility() {
        // -2.2e-5 / 3510 kg m^-3
        assert!((-2.2e-5 / 3510.0 / DIAMOND_CHI_M - 1.0).abs() < 0.02);
    }

    #[test]
    fn spin_values() {
        assert_eq!(Spin::Up.value(), 1.0);
        assert_eq!(Spin::Down.flipped(), Spin::Up);
        assert_eq!(Spin::from_value(-1.0).unwrap(), Spin::Down);
        assert!(Spin::from_value(0.5).is_err());
    }

    #[test]
    fn unit_round_trip() {
        for x in [1e-9, 3.7e-4, 100.0, -42.5] {
            let back = units::m_to_um(units::um_to_m(x));
            assert!(((back - x) / x).abs() < 1e-12);
        }
    }
}
