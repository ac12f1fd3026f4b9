use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facies-gtm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) {
    let config = serde_json::json!({
        "input": "data/volume",
        "output_dir": "out",
        "ground_truth": "data/truth.csv",
        "glcm": {"window_half": 2},
        "gtm": {"grid": [8, 8], "basis": [4, 4], "max_iterations": 20},
        "synth": {"dims": [16, 16, 4], "seed": 2}
    });
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();
}

#[test]
fn synth_then_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let out = run(dir.path(), &["synth", "--config", "config.json"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(dir.path(), &["pipeline", "--config", "config.json"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("classify: ARI"), "{stdout}");
    for f in [
        "attributes.csv",
        "attributes_filled.csv",
        "model.json",
        "facies.csv",
        "facies.ppm",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let out = run(
        dir.path(),
        &[
            "classify",
            "--config",
            "config.json",
            "--override",
            "classify.facies=2",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ARI "));
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    for args in [
        &[
            "train",
            "--config",
            "config.json",
            "--override",
            "gtm.typo=1",
        ][..],
        &[
            "train",
            "--config",
            "config.json",
            "--override",
            "gtm.max_iterations=0",
        ],
        &[
            "train",
            "--config",
            "config.json",
            "--override",
            "missing-equals",
        ],
        &["train", "--config", "nowhere.json"],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let out = run(dir.path(), &["attributes", "--config", "config.json"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("attributes stage failed") && stderr.contains("volume.json"),
        "{stderr}"
    );

    let out = run(dir.path(), &["pipeline", "--config", "config.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attributes stage failed"));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["explode", "--config", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}
