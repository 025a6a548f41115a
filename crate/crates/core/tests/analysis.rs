use catapult_core::analysis::*;
use catapult_core::protocol::{presets, run_protocol};

#[test]
fn velocity_law_fit_across_masses() {
    let fit = fit_velocity_slope(&[1e-17, 1e-16, 1e-15], &StageOneConfig::default()).unwrap();
    println!("{fit:?}");
    assert!(fit.r_squared >= 0.99);
    assert!((fit.coefficient / VELOCITY_COEFFICIENT - 1.0).abs() < 0.1);
    let s: Vec<f64> = fit.per_mass_slopes.iter().map(|m| m.slope).collect();
    assert!((s[0] / s[1] / 10.0 - 1.0).abs() < 0.05);
    assert!((s[1] / s[2] / 10.0 - 1.0).abs() < 0.05);
    for m in &fit.per_mass_slopes {
        let c = m.mass * m.slope / VELOCITY_UNIT;
        assert!((c / fit.coefficient - 1.0).abs() < 0.1, "{m:?}");
    }
}

/// Predicted ejection amplitude against the stage-II maximum separation of
/// the shipped presets, with sqrt(A) taken from the simulated half period.
#[test]
fn amplitude_prediction_matches_simulation() {
    for name in presets::PRESET_NAMES {
        let cfg = presets::preset(name).unwrap().to_config().unwrap();
        let run = run_protocol(&cfg).unwrap();
        let (t1, t2) = (run.t1.unwrap(), run.t2.unwrap());
        let sqrt_a = std::f64::consts::PI / (t2 - t1);
        let predicted = predict_amplitude(cfg.particle.mass, sqrt_a, t1).unwrap();
        let simulated = run.stage_max_superposition[1];
        println!("{name}: predicted {predicted:e} simulated {simulated:e}");
        assert!((predicted / simulated - 1.0).abs() < 0.2, "{name}");
    }
}
