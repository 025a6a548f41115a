use catapult_core::protocol::{presets, run_protocol, ProtocolResult};

fn runs() -> Vec<(&'static str, ProtocolResult)> {
    presets::PRESET_NAMES
        .iter()
        .map(|name| {
            let cfg = presets::preset(name).unwrap().to_config().unwrap();
            (*name, run_protocol(&cfg).unwrap())
        })
        .collect()
}

#[test]
fn preset_invariants() {
    for (name, run) in runs() {
        // Lab-frame continuity across every stage boundary.
        for arm in [&run.arm_up, &run.arm_down] {
            for w in arm.windows(2) {
                let (a, b) = (w[0].last(), w[1].first());
                assert_eq!(a.t, b.t, "{name}");
                let za = w[0].lab_z_at(a.t).unwrap();
                let zb = w[1].lab_z_at(b.t).unwrap();
                assert!((za - zb).abs() <= 1e-12, "{name}: position jump {}", za - zb);
                assert!((a.v - b.v).abs() <= 1e-12, "{name}: velocity jump {}", a.v - b.v);
            }
        }

        // Exchanging the spin labels flips the separation.
        for (i, (up, down)) in run.arm_up.iter().zip(&run.arm_down).enumerate() {
            for s in up.samples.iter().step_by(7) {
                let forward = up.lab_z_at(s.t).unwrap() - down.lab_z_at(s.t).unwrap();
                let swapped = down.lab_z_at(s.t).unwrap() - up.lab_z_at(s.t).unwrap();
                assert_eq!(forward, -swapped, "{name} stage {i}");
            }
        }

        let margin = run.adiabaticity_margin().unwrap();
        assert!(margin < 0.01, "{name}: adiabaticity margin {margin}");
    }
}
