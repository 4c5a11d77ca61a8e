mod common;

use std::fs;

use common::{cli_scenario, mutations, oodkit};

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    let subcommands: &[&[&str]] = &[
        &[],
        &["validate"],
        &["score"],
        &["metrics"],
        &["insights"],
        &["synth"],
        &["perturb"],
        &["sweep"],
        &["prompts"],
        &["prompts", "render"],
        &["prompts", "complexity"],
    ];
    for sub in subcommands {
        let mut args = sub.to_vec();
        args.push("--help");
        let (code, stdout, _) = oodkit(dir.path(), &args);
        assert_eq!(code, 0, "{args:?}");
        assert!(String::from_utf8(stdout).unwrap().contains("Usage:"), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["score"],
        &["score", "--bundle", "x", "--rule", "softmax"],
        &["metrics", "--bundle", "x", "--scores", "y"],
        &["--jobs", "0", "validate", "--bundle", "x"],
        &["perturb", "--bundle", "x", "--target", "labels", "--scale", "1", "--out", "y"],
    ] {
        assert_eq!(oodkit(dir.path(), args).0, 2, "{args:?}");
    }
}

#[test]
fn bad_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(oodkit(d, &["validate", "--bundle", "missing"]).0, 1);
    assert_eq!(oodkit(d, &["score", "--bundle", "missing"]).0, 1);
    assert_eq!(oodkit(d, &["synth", "--k", "0", "--out", "b"]).0, 1);
    assert_eq!(oodkit(d, &["synth", "--seed", "1", "--dim", "8", "--k", "2", "--m", "2", "--out", "b"]).0, 0);
    let (code, _, err) = oodkit(d, &["score", "--bundle", "b", "--tau", "0"]);
    assert_eq!(code, 1, "{err}");
    // rules that need logits on a bundle without them
    assert_eq!(oodkit(d, &["score", "--bundle", "b", "--rule", "msp"]).0, 1);
    fs::write(d.join("bad.json"), r#"{"kind": "temperature", "points": [], "surprise": 1}"#).unwrap();
    assert_eq!(oodkit(d, &["sweep", "--config", "bad.json", "--out", "o"]).0, 1);
    fs::write(d.join("empty.txt"), "# nothing\n").unwrap();
    assert_eq!(oodkit(d, &["prompts", "complexity", "--file", "empty.txt"]).0, 1);
}

#[test]
fn validate_reports_every_mutation() {
    let dir = tempfile::tempdir().unwrap();
    for case in mutations() {
        let sub = dir.path().join(case.name);
        (case.build)(&sub);
        let (code, stdout, stderr) = oodkit(dir.path(), &["validate", "--bundle", case.name]);
        assert_eq!(code, 1, "{}", case.name);
        assert!(stdout.is_empty() && stderr.starts_with("invalid:"), "{}: {stderr}", case.name);
    }
    let (code, stdout, _) = oodkit(dir.path(), &["synth", "--seed", "1", "--out", "ok"]);
    assert_eq!((code, stdout.is_empty()), (0, true));
    let (code, stdout, _) = oodkit(dir.path(), &["validate", "--bundle", "ok"]);
    assert_eq!(code, 0);
    assert!(String::from_utf8(stdout).unwrap().starts_with("ok: d=64 K=10 M=10 "));
}

#[test]
fn outputs_are_identical_across_runs_and_job_counts() {
    let runs: Vec<_> = ["1", "8", "1"]
        .iter()
        .map(|jobs| {
            let dir = tempfile::tempdir().unwrap();
            cli_scenario(dir.path(), jobs)
        })
        .collect();
    assert!(runs[0].len() > 40);
    for other in &runs[1..] {
        assert_eq!(runs[0].keys().collect::<Vec<_>>(), other.keys().collect::<Vec<_>>());
        for (name, bytes) in &runs[0] {
            assert!(bytes == &other[name], "{name} differs");
        }
    }
}

#[test]
fn env_var_sets_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let status = std::process::Command::new(common::BIN)
        .args(["synth", "--seed", "4", "--dim", "8", "--k", "2", "--m", "1"])
        .current_dir(dir.path())
        .env("OODKIT_OUT_DIR", "from_env")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("from_env/manifest.json").exists());
}
