use std::path::Path;
use std::process::Command;

use catapult_cli::config::{QuantumSpec, RunConfig, SweepSpec};
use catapult_cli::sweep::{grid, SWEEP_HEADER};
use catapult_cli::{run, Mode, Options, OutputFormat};
use proptest::prelude::*;

fn opts(dir: &Path, format: OutputFormat) -> Options {
    Options { out_dir: dir.to_path_buf(), format, workers: 2, fixed_step: None }
}

fn names(files: &[std::path::PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
}

#[test]
fn every_mode_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let quick_quantum = RunConfig {
        quantum: Some(QuantumSpec { duration_s: 0.1, outputs: 20, ..Default::default() }),
        ..Default::default()
    };
    let cases: [(Mode, RunConfig, &[&str]); 6] = [
        (Mode::Simulate, RunConfig::default(), &["trajectories.csv", "trajectories.svg", "summary.toml"]),
        (Mode::Protocol, RunConfig::default(), &["dz.csv", "dv.csv", "dz.svg", "arms.svg", "summary.toml"]),
        (Mode::CoherenceBudget, RunConfig::default(), &["budget.csv", "tables.txt", "summary.toml"]),
        (Mode::Quantum, quick_quantum, &["observables.csv", "density_final.csv", "uncertainty.svg", "summary.toml"]),
        (Mode::ScalingFit, RunConfig::default(), &["envelope.csv", "amplitude.csv", "envelope.svg", "summary.toml"]),
        (Mode::Sweep, RunConfig::default(), &["sweep.csv", "sweep.svg", "summary.toml"]),
    ];
    for (mode, cfg, expected) in cases {
        let out = dir.path().join(mode.label());
        let outcome = run(mode, &cfg, &opts(&out, OutputFormat::Both)).unwrap();
        let written = names(&outcome.files);
        for e in expected {
            assert!(written.iter().any(|w| w == e), "{}: missing {e} in {written:?}", mode.label());
            assert!(out.join(e).metadata().unwrap().len() > 0);
        }
        let summary: toml::Value = toml::from_str(&outcome.summary).unwrap();
        assert_eq!(summary["mode"].as_str(), Some(mode.label()));
    }
}

#[test]
fn format_selects_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = run(Mode::Sweep, &RunConfig::default(), &opts(&dir.path().join("c"), OutputFormat::Csv)).unwrap();
    assert_eq!(names(&csv.files), ["sweep.csv", "summary.toml"]);
    let svg = run(Mode::Sweep, &RunConfig::default(), &opts(&dir.path().join("s"), OutputFormat::Svg)).unwrap();
    assert_eq!(names(&svg.files), ["sweep.svg", "summary.toml"]);
}

#[test]
fn budget_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    run(Mode::CoherenceBudget, &RunConfig::default(), &opts(dir.path(), OutputFormat::Csv)).unwrap();
    let text = std::fs::read_to_string(dir.path().join("budget.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mass_kg,spin,stage,tol_z,tol_p,A_s2,t_s,eta"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn fixed_step_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(k.to_string());
        let o = Options { fixed_step: Some(5e-5), ..opts(&out, OutputFormat::Csv) };
        run(Mode::Protocol, &RunConfig::default(), &o).unwrap();
        files.push(std::fs::read(out.join("trajectories.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

fn catapult() -> Command {
    Command::new(env!("CARGO_BIN_EXE_catapult"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mode = \"protocol\"\n[protocol.custom]\nmass_kg = 1e-17\nstages = []\n").unwrap();
    let out = catapult().args(["protocol", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage list is empty"));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[sweep]\netas = [1e6]\n").unwrap();
    let out = catapult().args(["sweep", "--config"]).arg(&unknown).output().unwrap();
    assert!(!out.status.success());

    let env_dir = dir.path().join("from-env");
    let out = catapult().arg("coherence-budget").env("CATAPULT_OUT_DIR", &env_dir).output().unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("budget.csv").exists());

    // the config file outranks the environment
    let cfg_dir = dir.path().join("from-config");
    let with_dir = dir.path().join("with_dir.toml");
    std::fs::write(&with_dir, format!("output_dir = {:?}\n", cfg_dir.to_str().unwrap())).unwrap();
    let out = catapult()
        .args(["coherence-budget", "--config"])
        .arg(&with_dir)
        .env("CATAPULT_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(cfg_dir.join("budget.csv").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Grid rows follow mass, then eta, then z0, whatever the list sizes.
    #[test]
    fn sweep_grid_order(nm in 1usize..5, ne in 1usize..5, nz in 1usize..5) {
        let spec = SweepSpec {
            masses_kg: (0..nm).map(|i| 1e-17 * (i + 1) as f64).collect(),
            etas_tesla_per_m2: (0..ne).map(|i| 1e6 * (i + 1) as f64).collect(),
            z0_um: (0..nz).map(|i| 10.0 * (i + 1) as f64).collect(),
            ..Default::default()
        };
        let g = grid(&spec);
        prop_assert_eq!(g.len(), nm * ne * nz);
        for (i, p) in g.iter().enumerate() {
            prop_assert_eq!(p.index, i);
            prop_assert_eq!(p.mass, spec.masses_kg[i / (ne * nz)]);
            prop_assert_eq!(p.eta, spec.etas_tesla_per_m2[(i / nz) % ne]);
        }
    }

    /// Any config that parses serialises back to an equivalent document.
    #[test]
    fn config_round_trip(eps in 0.01f64..0.5, z0 in 1.0f64..500.0, dur in 0.1f64..3.0) {
        let text = format!("[coherence_budget]\nepsilon = {eps}\nz0_um = {z0}\n[sweep]\nduration_s = {dur}\n");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let again = RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}

#[test]
fn sweep_header_is_stable() {
    assert!(SWEEP_HEADER.starts_with("index,mass_kg,eta_tesla_per_m2,z0_um,status,"));
}
