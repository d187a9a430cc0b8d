use std::path::PathBuf;

use hamsde_cli::repro::{golden, parse_golden, Status};

fn golden_file() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/golden.csv")
}

#[test]
fn frozen_values_match_their_oracles() {
    let checks = golden(&golden_file(), false).unwrap();
    assert!(!checks.is_empty());
    for c in &checks {
        assert_eq!(c.status, Status::Pass, "{} drifted by {}", c.name, c.value);
    }
}

/// Hand-derived values, independent of the code that wrote the file.
#[test]
fn frozen_values_agree_with_closed_forms() {
    let recs = parse_golden(&std::fs::read_to_string(golden_file()).unwrap()).unwrap();
    let get = |k: &str| recs.iter().find(|r| r.key == k).unwrap().value;
    // v = 2 + σ_x²/σ_θ² = 6; mean (4 - 3.2)/6, variance 2/6.
    assert!((get("toy.posterior_mean") - 0.8 / 6.0).abs() < 1e-15);
    assert!((get("toy.posterior_var") - 1.0 / 3.0).abs() < 1e-15);
    assert!((get("geom.leapfrog_det_eta0.1_c2_d2") - 0.64).abs() < 1e-15);
    assert!((get("geom.lie_trotter_det_eta0.1_c2") - (-0.2f64).exp()).abs() < 1e-15);
    assert!((get("mt3.w2_weight") - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-15);
    assert!((get("ou.noise_sd_c1_eta0.5") - (1.0 - (-1.0f64).exp()).sqrt()).abs() < 1e-15);
    for r in &recs {
        assert!(!r.provenance.is_empty() && r.tolerance > 0.0, "{}", r.key);
    }
}

#[test]
fn regeneration_reproduces_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = tmp.path().join("golden.csv");
    golden(&fresh, true).unwrap();
    assert_eq!(std::fs::read(&fresh).unwrap(), std::fs::read(golden_file()).unwrap());
}
