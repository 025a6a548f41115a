//! Serializable protocol descriptions and the shipped mass presets.
//!
//! Lengths are in micrometres and velocities in micrometres per second, as in
//! configuration files; conversion to SI happens in [`ProtocolSpec::to_config`].

use serde::{Deserialize, Serialize};

use super::{CrossingSelection, EndCondition, ProtocolConfig, SearchBox, StageConfig, DEFAULT_TIME_CAP};
use crate::error::{Error, Result};
use crate::physconst::{units::um_to_m, ParticleParams, DEFAULT_B0, DIAMOND_CHI_M};

pub const M1E17: &str = include_str!("../../presets/m1e-17.toml");
pub const M1E16: &str = include_str!("../../presets/m1e-16.toml");
pub const M1E15: &str = include_str!("../../presets/m1e-15.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub mass_kg: f64,
    #[serde(default)]
    pub chi_m: Option<f64>,
    #[serde(default)]
    pub b0_tesla: Option<f64>,
    /// Adiabaticity floor; defaults to the standard bias field.
    #[serde(default)]
    pub b_min_tesla: Option<f64>,
    #[serde(default)]
    pub time_cap_s: Option<f64>,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub eta_tesla_per_m2: f64,
    pub initial_z_um: f64,
    pub end: EndSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectSpec {
    FirstAfter,
    MaxVelocityDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EndSpec {
    FixedDuration {
        duration_s: f64,
    },
    SuperpositionZero {
        accuracy_um: f64,
        select: SelectSpec,
        #[serde(default)]
        delay_s: Option<f64>,
        #[serde(default)]
        window_s: Option<f64>,
    },
    SimultaneousZero {
        dz_accuracy_um: f64,
        dv_accuracy_um_per_s: f64,
        #[serde(default)]
        search: Option<SearchSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub eta_rel: f64,
    pub z_half_width_um: f64,
    pub grid: usize,
    #[serde(default)]
    pub deadline_s: Option<f64>,
}

impl EndSpec {
    fn to_condition(&self) -> Result<EndCondition> {
        Ok(match *self {
            EndSpec::FixedDuration { duration_s } => EndCondition::FixedDuration { duration: duration_s },
            EndSpec::SuperpositionZero { accuracy_um, select, delay_s, window_s } => {
                let selection = match select {
                    SelectSpec::FirstAfter => CrossingSelection::FirstAfter { delay: delay_s.unwrap_or(0.0) },
                    SelectSpec::MaxVelocityDifference => CrossingSelection::MaxVelocityDifference {
                        window: window_s.ok_or_else(|| {
                            Error::Config("max-velocity-difference needs window_s".into())
                        })?,
                    },
                };
                EndCondition::SuperpositionZero { accuracy: um_to_m(accuracy_um), selection }
            }
            EndSpec::SimultaneousZero { dz_accuracy_um, dv_accuracy_um_per_s, search } => {
                EndCondition::SimultaneousZero {
                    dz_accuracy: um_to_m(dz_accuracy_um),
                    dv_accuracy: um_to_m(dv_accuracy_um_per_s),
                    search: search.map(|s| SearchBox {
                        eta_rel: s.eta_rel,
                        z_half_width: um_to_m(s.z_half_width_um),
                        grid: s.grid,
                        deadline: s.deadline_s,
                    }),
                }
            }
        })
    }
}

impl StageSpec {
    pub fn to_stage(&self) -> Result<StageConfig> {
        let s = StageConfig {
            eta: self.eta_tesla_per_m2,
            initial_magnetic_z: um_to_m(self.initial_z_um),
            end: self.end.to_condition()?,
        };
        s.validate()?;
        Ok(s)
    }
}

impl ProtocolSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn particle(&self) -> Result<ParticleParams> {
        ParticleParams::new(self.mass_kg, self.chi_m.unwrap_or(DIAMOND_CHI_M))
    }

    pub fn to_config(&self) -> Result<ProtocolConfig> {
        if self.stages.is_empty() {
            return Err(Error::Config("stage list is empty".into()));
        }
        let stages = self.stages.iter().map(StageSpec::to_stage).collect::<Result<Vec<_>>>()?;
        let mut cfg = ProtocolConfig::new(self.particle()?, self.b0_tesla.unwrap_or(DEFAULT_B0), stages);
        cfg.time_cap = self.time_cap_s.unwrap_or(DEFAULT_TIME_CAP);
        if let Some(b) = self.b_min_tesla {
            cfg.b_min = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shipped preset by name (`m1e-17`, `m1e-16`, `m1e-15`).
pub fn preset(name: &str) -> Result<ProtocolSpec> {
    let text = match name {
        "m1e-17" => M1E17,
        "m1e-16" => M1E16,
        "m1e-15" => M1E15,
        _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
    };
    ProtocolSpec::from_toml(text)
}

pub const PRESET_NAMES: [&str; 3] = ["m1e-17", "m1e-16", "m1e-15"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            let cfg = spec.to_config().unwrap();
            assert_eq!(cfg.stages.len(), 3);
            assert_eq!(cfg.stages[0].eta, 1e8);
        }
        let s = preset("m1e-17").unwrap().to_config().unwrap();
        assert!((s.stages[2].initial_magnetic_z + 102.8e-6).abs() < 1e-15);
        assert_eq!(s.stages[1].eta, 1e5);
    }

    #[test]
    fn bias_floor_enforced() {
        let low = M1E17.replacen("b0_tesla = 5.7e-4", "b0_tesla = 1e-4", 1);
        assert_ne!(low, M1E17);
        assert!(ProtocolSpec::from_toml(&low).unwrap().to_config().is_err());
        let relaxed = low.replacen("b0_tesla = 1e-4", "b0_tesla = 1e-4\nb_min_tesla = 1e-5", 1);
        ProtocolSpec::from_toml(&relaxed).unwrap().to_config().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = M1E17.replace("initial_z_um = 0.0", "initial_z_um = 0.0\ncolour = 1");
        assert!(ProtocolSpec::from_toml(&bad).is_err());
        let bad = M1E17.replace("delay_s = 1e-3", "delay_s = 1e-3, bogus = 2");
        assert!(ProtocolSpec::from_toml(&bad).is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(preset("m1e-14").is_err());
    }
}
