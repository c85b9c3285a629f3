//! Scenario files: round trips, error reporting and the induced family.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use raresim::expfam::{self, log_density, Block};
use raresim::scenario::{self, base_family, params_io, parse_str, ScenarioError};

fn shipped_text() -> String {
    fs::read_to_string(scenario::shipped_dir().join("i80.scn")).unwrap()
}

/// Two-vehicle, four-weight scenario written into `dir`.
fn small_scenario(dir: &Path) -> String {
    params_io::write_vector(&dir.join("mu.bin"), &[0.1, -0.2, 0.3, 0.0]).unwrap();
    let chol = DMatrix::from_row_slice(4, 4, &[
        0.5, 0.0, 0.0, 0.0, //
        0.1, 0.4, 0.0, 0.0, //
        0.0, 0.2, 0.3, 0.0, //
        0.0, 0.0, 0.1, 0.2,
    ]);
    params_io::write_cholesky(&dir.join("chol.bin"), &chol).unwrap();
    shipped_text()
        .lines()
        .filter(|l| !l.starts_with("env.") || l.starts_with("env.1."))
        .map(|l| match l {
            "vehicle_count = 6" => "vehicle_count = 2".to_string(),
            "policy.dim = 32" => "policy.dim = 4".to_string(),
            l if l.starts_with("policy.mu0_path") => "policy.mu0_path = mu.bin".to_string(),
            l if l.starts_with("policy.sigma0_path") => "policy.sigma0_path = chol.bin".to_string(),
            l => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn replace_line(text: &str, key: &str, new: &str) -> String {
    text.lines()
        .map(|l| if l.starts_with(key) { new } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn shipped_scenario_round_trips_through_its_canonical_form() {
    let dir = scenario::shipped_dir();
    let spec = scenario::parse(dir.join("i80.scn")).unwrap();
    let again = parse_str(&spec.serialize(), &dir).unwrap();
    assert_eq!(again, spec);
    assert_eq!(again.fingerprint(), spec.fingerprint());
    assert_eq!(again.serialize(), spec.serialize());
}

#[test]
fn shipped_scenario_has_the_documented_shape() {
    let spec = scenario::parse(scenario::shipped_dir().join("i80.scn")).unwrap();
    assert_eq!(spec.vehicle_count, 6);
    assert_eq!(spec.sample_dim(), 4 * 5 + 32);
    let (family, theta0) = base_family(&spec);
    assert_eq!(family.blocks().len(), 21);
    assert_eq!(family.dim(), 52);
    family.check_params(&theta0).unwrap();
}

#[test]
fn small_scenario_gives_four_beta_blocks_and_one_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_str(&small_scenario(dir.path()), dir.path()).unwrap();
    let (family, theta0) = base_family(&spec);
    let kinds: Vec<&str> = family
        .blocks()
        .iter()
        .map(|b| match b {
            Block::Beta(_) => "beta",
            Block::Gaussian(_) => "gaussian",
        })
        .collect();
    assert_eq!(kinds, ["beta", "beta", "beta", "beta", "gaussian"]);
    assert_eq!(family.dim(), 8);
    for seed in 0..1000 {
        let x = expfam::sample(&family, &theta0, seed).unwrap();
        assert!(log_density(&family, &theta0, &x).unwrap().is_finite(), "seed {seed}");
    }
}

#[test]
fn changing_any_input_changes_the_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_scenario(dir.path());
    let base = parse_str(&text, dir.path()).unwrap().fingerprint();
    let speed = replace_line(&text, "ego.speed_mps", "ego.speed_mps = 15.5");
    assert_ne!(parse_str(&speed, dir.path()).unwrap().fingerprint(), base);
    // comments and key order do not matter
    let mut lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    lines.reverse();
    assert_eq!(parse_str(&lines.join("\n"), dir.path()).unwrap().fingerprint(), base);
    // the policy file contents do
    params_io::write_vector(&dir.path().join("mu.bin"), &[0.1, -0.2, 0.3, 1e-9]).unwrap();
    assert_ne!(parse_str(&text, dir.path()).unwrap().fingerprint(), base);
}

#[test]
fn errors_name_the_offending_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_scenario(dir.path());
    let err = |t: &str| parse_str(t, dir.path()).unwrap_err();

    assert!(matches!(err(&format!("{text}\nego.colour = red")), ScenarioError::UnknownKey { key, .. } if key == "ego.colour"));
    assert!(matches!(err(&format!("{text}\nego.x_m = 61")), ScenarioError::DuplicateKey { key, .. } if key == "ego.x_m"));
    assert!(matches!(err(&format!("{text}\njust words")), ScenarioError::Malformed { .. }));
    let missing = text.lines().filter(|l| !l.starts_with("road.lane_count")).collect::<Vec<_>>().join("\n");
    assert!(matches!(err(&missing), ScenarioError::MissingKey(k) if k == "road.lane_count"));
    let version = replace_line(&text, "format_version", "format_version = 2");
    assert!(matches!(err(&version), ScenarioError::InvalidValue { key, .. } if key == "format_version"));
    let dim = replace_line(&text, "policy.dim", "policy.dim = 6");
    match err(&dim) {
        ScenarioError::DimensionMismatch { expected, got, .. } => assert_eq!((expected, got), (6, 4)),
        other => panic!("unexpected {other}"),
    }
    let bad_beta = replace_line(&text, "init.v_mps", "init.v_mps = 2 2 20 10");
    let e = err(&bad_beta);
    assert!(matches!(&e, ScenarioError::InvalidValue { key, .. } if key == "init.v_mps"), "{e}");
    assert!(e.to_string().starts_with("line "), "{e}");
    let absent = replace_line(&text, "policy.mu0_path", "policy.mu0_path = nowhere.bin");
    assert!(matches!(err(&absent), ScenarioError::PolicyFile { key, .. } if key == "policy.mu0_path"));
}
