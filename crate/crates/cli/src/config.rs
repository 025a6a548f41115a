//! Run configuration: one TOML document, one optional section per mode.
//!
//! Lengths are in micrometres, times in seconds, trap coefficients in T/m^2.
//! Unknown keys are rejected everywhere. See `docs/config-schema.md`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use catapult_core::coherence::BudgetStage;
use catapult_core::field::DEFAULT_B_MIN;
use catapult_core::ode::StepControl;
use catapult_core::physconst::{DEFAULT_B0, DIAMOND_CHI_M};
use catapult_core::protocol::presets::{self, ProtocolSpec};
use catapult_core::protocol::ProtocolConfig;
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "CATAPULT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "catapult-out";

/// Sweeps larger than this are refused.
pub const MAX_SWEEP_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Protocol,
    CoherenceBudget,
    Quantum,
    ScalingFit,
    Sweep,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Protocol => "protocol",
            Mode::CoherenceBudget => "coherence-budget",
            Mode::Quantum => "quantum",
            Mode::ScalingFit => "scaling-fit",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Svg,
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn svg(self) -> bool {
        matches!(self, OutputFormat::Svg | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Adiabaticity floor for every bias field in the run (T).
    #[serde(default)]
    pub b_min_tesla: Option<f64>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub protocol: Option<ProtocolSection>,
    #[serde(default)]
    pub coherence_budget: Option<BudgetSpec>,
    #[serde(default)]
    pub quantum: Option<QuantumSpec>,
    #[serde(default)]
    pub scaling_fit: Option<ScalingSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    /// Fixed step (s); overrides the adaptive tolerances when set.
    #[serde(default)]
    pub fixed_step_s: Option<f64>,
}

fn default_atol() -> f64 {
    1e-12
}

fn default_rtol() -> f64 {
    1e-10
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { atol: default_atol(), rtol: default_rtol(), fixed_step_s: None }
    }
}

impl SolverSpec {
    pub fn control(&self) -> StepControl {
        match self.fixed_step_s {
            Some(dt) => StepControl::Fixed { dt },
            None => StepControl::Adaptive { atol: self.atol, rtol: self.rtol },
        }
    }
}

/// Exact single-arm trajectories in one trap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub mass_kg: f64,
    #[serde(default = "default_chi")]
    pub chi_m: f64,
    #[serde(default = "default_b0")]
    pub b0_tesla: f64,
    pub eta_tesla_per_m2: f64,
    pub z0_um: f64,
    #[serde(default)]
    pub v0_um_per_s: f64,
    pub duration_s: f64,
    #[serde(default = "both_spins")]
    pub spins: Vec<i8>,
    /// Also fit the harmonic surrogate and report its deviation.
    #[serde(default)]
    pub fit_correction: bool,
}

fn default_chi() -> f64 {
    DIAMOND_CHI_M
}

fn default_b0() -> f64 {
    DEFAULT_B0
}

fn both_spins() -> Vec<i8> {
    vec![1, -1]
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            mass_kg: 1e-17,
            chi_m: DIAMOND_CHI_M,
            b0_tesla: DEFAULT_B0,
            eta_tesla_per_m2: 1e6,
            z0_um: 100.0,
            v0_um_per_s: 0.0,
            duration_s: 4.0,
            spins: both_spins(),
            fit_correction: true,
        }
    }
}

/// Either a shipped preset by name or a full inline description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub custom: Option<ProtocolSpec>,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection { preset: Some("m1e-17".into()), custom: None }
    }
}

impl ProtocolSection {
    pub fn spec(&self) -> Result<ProtocolSpec> {
        match (&self.preset, &self.custom) {
            (Some(name), None) => Ok(presets::preset(name)?),
            (None, Some(spec)) => Ok(spec.clone()),
            _ => bail!("[protocol] needs exactly one of `preset` or `custom`"),
        }
    }

    pub fn to_config(&self, solver: &SolverSpec, b_min: Option<f64>) -> Result<ProtocolConfig> {
        let mut cfg = self.spec()?.to_config()?;
        cfg.control = solver.control();
        if let Some(b) = b_min {
            cfg.b_min = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_budget_z0")]
    pub z0_um: f64,
    #[serde(default = "reference_masses")]
    pub masses_kg: Vec<f64>,
    #[serde(default = "budget_stages")]
    pub stages: Vec<String>,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_budget_z0() -> f64 {
    100.0
}

fn reference_masses() -> Vec<f64> {
    vec![1e-17, 1e-16, 1e-15]
}

fn budget_stages() -> Vec<String> {
    vec!["II".into(), "I".into()]
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec {
            epsilon: default_epsilon(),
            z0_um: default_budget_z0(),
            masses_kg: reference_masses(),
            stages: budget_stages(),
        }
    }
}

impl BudgetSpec {
    pub fn stages(&self) -> Result<Vec<BudgetStage>> {
        Ok(self.stages.iter().map(|s| BudgetStage::parse(s)).collect::<catapult_core::Result<_>>()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumSpec {
    #[serde(default = "default_mass")]
    pub mass_kg: f64,
    #[serde(default = "default_chi")]
    pub chi_m: f64,
    #[serde(default = "default_b0")]
    pub b0_tesla: f64,
    #[serde(default = "default_soft_eta")]
    pub eta_tesla_per_m2: f64,
    #[serde(default = "spin_up")]
    pub spin: i8,
    #[serde(default = "default_center")]
    pub center_um: f64,
    #[serde(default = "default_width")]
    pub width_um: f64,
    #[serde(default = "default_quantum_duration")]
    pub duration_s: f64,
    #[serde(default = "default_outputs")]
    pub outputs: usize,
}

fn default_mass() -> f64 {
    1e-17
}

fn default_soft_eta() -> f64 {
    1e6
}

fn spin_up() -> i8 {
    1
}

fn default_center() -> f64 {
    5e-2
}

fn default_width() -> f64 {
    5e-3
}

fn default_quantum_duration() -> f64 {
    2.0
}

fn default_outputs() -> usize {
    200
}

impl Default for QuantumSpec {
    fn default() -> Self {
        toml::from_str("").expect("all quantum keys have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    #[serde(default = "reference_masses")]
    pub masses_kg: Vec<f64>,
    #[serde(default = "default_window")]
    pub window_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// sqrt(A) of the ejection trap used for amplitude predictions (1/s).
    #[serde(default = "default_sqrt_a")]
    pub sqrt_a: f64,
    #[serde(default = "default_t1")]
    pub t1_s: Vec<f64>,
    #[serde(default = "default_v_max")]
    pub v_max_m_per_s: f64,
}

fn default_window() -> f64 {
    0.5
}

fn default_rate() -> f64 {
    1000.0
}

fn default_sqrt_a() -> f64 {
    std::f64::consts::PI / 0.4
}

fn default_t1() -> Vec<f64> {
    vec![0.1, 0.2, 0.5]
}

fn default_v_max() -> f64 {
    catapult_core::analysis::DEFAULT_V_MAX
}

impl Default for ScalingSpec {
    fn default() -> Self {
        toml::from_str("").expect("all scaling keys have defaults")
    }
}

/// Grid of single-trap runs: both arms released at rest from z0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "sweep_masses")]
    pub masses_kg: Vec<f64>,
    #[serde(default = "sweep_etas")]
    pub etas_tesla_per_m2: Vec<f64>,
    #[serde(default = "sweep_z0")]
    pub z0_um: Vec<f64>,
    #[serde(default = "sweep_duration")]
    pub duration_s: f64,
    #[serde(default = "default_b0")]
    pub b0_tesla: f64,
    #[serde(default = "default_chi")]
    pub chi_m: f64,
    /// Sampling rate for the maxima (Hz), on top of the integrator nodes.
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
}

fn sweep_masses() -> Vec<f64> {
    vec![1e-17]
}

fn sweep_etas() -> Vec<f64> {
    vec![1.4e6, 2.4e6, 3.4e6]
}

fn sweep_z0() -> Vec<f64> {
    vec![60.0]
}

fn sweep_duration() -> f64 {
    1.2
}

impl Default for SweepSpec {
    fn default() -> Self {
        toml::from_str("").expect("all sweep keys have defaults")
    }
}

impl SweepSpec {
    pub fn len(&self) -> usize {
        self.masses_kg.len() * self.etas_tesla_per_m2.len() * self.z0_um.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        bail!("{what} must be positive and finite, got {x}");
    }
    Ok(())
}

fn all_positive(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        bail!("{what} list is empty");
    }
    xs.iter().try_for_each(|&x| positive(x, what))
}

fn spin_ok(s: i8) -> Result<()> {
    if s != 1 && s != -1 {
        bail!("spin must be +1 or -1, got {s}");
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn b_min(&self) -> f64 {
        self.b_min_tesla.unwrap_or(DEFAULT_B_MIN)
    }

    fn check_floor(&self, b0: f64) -> Result<()> {
        if b0 < self.b_min() {
            bail!("b0_tesla = {b0} is below the adiabaticity floor {} T", self.b_min());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Reject invalid values for the given mode before anything runs.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if let Some(m) = self.mode {
            if m != mode {
                bail!("config is for mode `{}` but `{}` was requested", m.label(), mode.label());
            }
        }
        self.solver.control().validate()?;
        match mode {
            Mode::Simulate => {
                let s = self.simulate.clone().unwrap_or_default();
                positive(s.mass_kg, "mass_kg")?;
                positive(s.eta_tesla_per_m2, "eta_tesla_per_m2")?;
                positive(s.b0_tesla, "b0_tesla")?;
                self.check_floor(s.b0_tesla)?;
                positive(s.duration_s, "duration_s")?;
                if s.spins.is_empty() {
                    bail!("spins list is empty");
                }
                s.spins.iter().try_for_each(|&x| spin_ok(x))?;
            }
            Mode::Protocol => {
                self.protocol.clone().unwrap_or_default().to_config(&self.solver, self.b_min_tesla)?;
            }
            Mode::CoherenceBudget => {
                let b = self.coherence_budget.clone().unwrap_or_default();
                if !(b.epsilon > 0.0 && b.epsilon < 1.0) {
                    bail!("epsilon must lie in (0, 1), got {}", b.epsilon);
                }
                positive(b.z0_um, "z0_um")?;
                all_positive(&b.masses_kg, "masses_kg")?;
                for s in b.stages()? {
                    catapult_core::coherence::budget_preset(s)?;
                }
            }
            Mode::Quantum => {
                let q = self.quantum.clone().unwrap_or_default();
                positive(q.mass_kg, "mass_kg")?;
                positive(q.eta_tesla_per_m2, "eta_tesla_per_m2")?;
                self.check_floor(q.b0_tesla)?;
                positive(q.width_um, "width_um")?;
                positive(q.duration_s, "duration_s")?;
                spin_ok(q.spin)?;
                if q.outputs == 0 {
                    bail!("outputs must be at least 1");
                }
            }
            Mode::ScalingFit => {
                let s = self.scaling_fit.clone().unwrap_or_default();
                all_positive(&s.masses_kg, "masses_kg")?;
                positive(s.window_s, "window_s")?;
                positive(s.sample_rate_hz, "sample_rate_hz")?;
                positive(s.sqrt_a, "sqrt_a")?;
                positive(s.v_max_m_per_s, "v_max_m_per_s")?;
                all_positive(&s.t1_s, "t1_s")?;
            }
            Mode::Sweep => {
                let s = self.sweep.clone().unwrap_or_default();
                all_positive(&s.masses_kg, "masses_kg")?;
                all_positive(&s.etas_tesla_per_m2, "etas_tesla_per_m2")?;
                if s.z0_um.is_empty() || s.z0_um.iter().any(|z| !z.is_finite()) {
                    bail!("z0_um must be a non-empty list of finite values");
                }
                positive(s.duration_s, "duration_s")?;
                positive(s.sample_rate_hz, "sample_rate_hz")?;
                self.check_floor(s.b0_tesla)?;
                if s.len() > MAX_SWEEP_POINTS {
                    bail!("sweep has {} points, limit is {MAX_SWEEP_POINTS}", s.len());
                }
            }
        }
        Ok(())
    }
}

/// `--out`, then the config, then the environment, then the default.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid_for_every_mode() {
        let cfg = RunConfig::from_toml("").unwrap();
        for m in [Mode::Simulate, Mode::Protocol, Mode::CoherenceBudget, Mode::Quantum, Mode::ScalingFit, Mode::Sweep] {
            cfg.validate(m).unwrap();
        }
    }

    #[test]
    fn bias_below_floor_rejected() {
        let low = RunConfig::from_toml("[sweep]\nb0_tesla = 1e-4\n").unwrap();
        assert!(low.validate(Mode::Sweep).unwrap_err().to_string().contains("floor"));
        let lowered = RunConfig::from_toml("b_min_tesla = 5e-5\n[sweep]\nb0_tesla = 1e-4\n").unwrap();
        lowered.validate(Mode::Sweep).unwrap();
        let strict = RunConfig::from_toml("b_min_tesla = 1e-3\n").unwrap();
        assert!(strict.validate(Mode::Protocol).is_err());
        assert!(strict.validate(Mode::Simulate).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[sweep]\netas = [1e6]").is_err());
        assert!(RunConfig::from_toml("[solver]\natol = 1e-12\nstep = 1").is_err());
    }

    #[test]
    fn empty_stage_list_rejected() {
        let cfg = RunConfig::from_toml(
            "mode = \"protocol\"\n[protocol.custom]\nmass_kg = 1e-17\nstages = []\n",
        )
        .unwrap();
        assert!(cfg.validate(Mode::Protocol).is_err());
    }

    #[test]
    fn mode_mismatch_rejected() {
        let cfg = RunConfig::from_toml("mode = \"sweep\"").unwrap();
        assert!(cfg.validate(Mode::Protocol).is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let bad = [
            ("[sweep]\netas_tesla_per_m2 = [-1.0]", Mode::Sweep),
            ("[quantum]\nspin = 0", Mode::Quantum),
            ("[coherence_budget]\nepsilon = 1.5", Mode::CoherenceBudget),
            ("[coherence_budget]\nstages = [\"III\"]", Mode::CoherenceBudget),
            ("[solver]\nfixed_step_s = 0.0", Mode::Simulate),
            ("[protocol]\npreset = \"m1e-17\"\n[protocol.custom]\nmass_kg = 1e-17\nstages = []", Mode::Protocol),
        ];
        for (text, mode) in bad {
            let cfg = RunConfig::from_toml(text).unwrap();
            assert!(cfg.validate(mode).is_err(), "{text}");
        }
    }

    #[test]
    fn out_dir_precedence() {
        let cfg = RunConfig { output_dir: Some("from-config".into()), ..Default::default() };
        assert_eq!(resolve_out_dir(Some(Path::new("flag")), &cfg), PathBuf::from("flag"));
        assert_eq!(resolve_out_dir(None, &cfg), PathBuf::from("from-config"));
    }
}
