use std::path::PathBuf;

use splatstream_core::PipelineConfig;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

#[test]
fn shipped_default_matches_the_built_in_one() {
    assert_eq!(
        PipelineConfig::load(&config_dir().join("default.toml")).unwrap(),
        PipelineConfig::default()
    );
}

#[test]
fn shipped_desk_profile_matches_the_built_in_one() {
    assert_eq!(
        PipelineConfig::load(&config_dir().join("desk.toml")).unwrap(),
        PipelineConfig::desk()
    );
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(PipelineConfig::from_toml_str("stage3_iterations = 4").is_err());
    let err = PipelineConfig::default()
        .with_overrides(&["addition.tau = 1"])
        .unwrap_err();
    assert!(err.to_string().contains("addition.tau_grad"));
}
