use std::path::Path;
use std::process::{Command, Output};

use radreg_cli::run::RunManifest;
use radreg_core::eval::{ensemble_predict, PredictionSet};
use rand::Rng;
use radreg_core::eval::Prediction;
use radreg_core::rng::stream;
use radreg_core::{AnatomicalRegion, NUM_REGIONS};
use serde_json::Value;

fn radreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RADREG_DATA_ROOT")
        .env_remove("RADREG_PORT")
        .output()
        .unwrap()
}

fn error_body(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {stderr}"));
    serde_json::from_str(line).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn random_member(name: &str, seed: u64, labels: &[AnatomicalRegion]) -> PredictionSet {
    let mut rng = stream(seed, &[]);
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let raw: Vec<f64> = (0..NUM_REGIONS).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let mut p = [0.0; NUM_REGIONS];
            for (slot, v) in p.iter_mut().zip(&raw) {
                *slot = v / sum;
            }
            Prediction::from_probabilities(format!("rec-{i:03}"), label, p)
        })
        .collect();
    PredictionSet::new(name, records)
}

#[test]
fn help_succeeds_and_bad_flags_are_user_errors() {
    let out = radreg(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("audit"));

    let out = radreg(&["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_body(&out)["error"]["code"].as_str().unwrap().starts_with("usage"));

    let out = radreg(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_inputs_fail_with_a_machine_readable_error_and_an_incomplete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("eval");
    let missing = dir.path().join("missing.ckpt");
    let out = radreg(&[
        "linear-eval",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--data",
        dir.path().join("index.jsonl").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let body = error_body(&out);
    assert_eq!(body["error"]["code"], "missing_file");
    assert!(body["error"]["message"].is_string());
    let manifest = RunManifest::load(&out_dir).unwrap();
    assert!(!manifest.complete);
    assert_eq!(manifest.error.unwrap()["error"]["code"], "missing_file");
}

#[test]
fn diverging_training_is_an_internal_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = radreg(&["synth", "--out", data.to_str().unwrap(), "--per-class", "10", "--image-size", "32"]);
    assert_eq!(out.status.code(), Some(0));
    let run = dir.path().join("pretrain");
    let out = radreg(&[
        "pretrain",
        "--method",
        "simclr",
        "--data",
        data.join("index.jsonl").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "3",
        "--batch-size",
        "4",
        "--base-width",
        "4",
        "--learning-rate",
        "1e30",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let code = error_body(&out)["error"]["code"].as_str().unwrap().to_string();
    assert!(["nan_loss", "degenerate_projection"].contains(&code.as_str()), "{code}");
    assert!(!RunManifest::load(&run).unwrap().complete);
}

#[test]
fn synth_writes_every_image_and_a_verifiable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = radreg(&["synth", "--per-class", "200", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["images"], 2800);
    assert_eq!(summary["train"].as_u64().unwrap() + summary["val"].as_u64().unwrap() + summary["test"].as_u64().unwrap(), 2800);
    let pngs = std::fs::read_dir(dir.path().join("images"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 2800);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 2801);

    let run = RunManifest::load(dir.path()).unwrap();
    assert!(run.complete);
    assert_eq!(run.command, "synth");
    assert_eq!(run.config["images_per_class"], 200);
    run.verify(dir.path()).unwrap();
    std::fs::write(dir.path().join("boxes.csv"), "tampered").unwrap();
    assert!(run.verify(dir.path()).is_err());
}

#[test]
fn ensemble_output_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<AnatomicalRegion> = (0..60).map(|i| AnatomicalRegion::from_code(i % NUM_REGIONS).unwrap()).collect();
    let members: Vec<PredictionSet> = ["a", "b", "c"].iter().enumerate().map(|(s, name)| random_member(name, s as u64, &labels)).collect();
    let paths: Vec<String> = members
        .iter()
        .map(|m| {
            let p = dir.path().join(format!("{}.csv", m.model));
            m.write_csv(&p).unwrap();
            p.to_str().unwrap().to_string()
        })
        .collect();
    let out_dir = dir.path().join("ens");
    let out = radreg(&["ensemble", "--members", &paths[0], &paths[1], &paths[2], "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let reread: Vec<PredictionSet> = ["a", "b", "c"].iter().zip(&paths).map(|(n, p)| PredictionSet::read_csv(Path::new(p), *n).unwrap()).collect();
    let expected = dir.path().join("expected.csv");
    ensemble_predict(&reread).unwrap().write_csv(&expected).unwrap();
    assert_eq!(std::fs::read(out_dir.join("predictions.csv")).unwrap(), std::fs::read(expected).unwrap());

    let out = radreg(&["ensemble", "--members", &paths[0], "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn audit_apply_on_the_fixture_reports_the_corrected_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = radreg(&["audit", "apply", "--fixture", "paper", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("96.6% -> corrected accuracy 98.0%"), "{stderr}");
    let summary = stdout_json(&out);
    assert_eq!(summary["original"], "96.6%");
    assert_eq!(summary["corrected"], "98.0%");
    for name in ["corrected.json", "confusion-before.png", "confusion-after.png", "confusion-delta.png"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let run = RunManifest::load(dir.path()).unwrap();
    assert!(run.complete);
    run.verify(dir.path()).unwrap();
}

#[test]
fn audit_record_replays_fixture_verdicts_once() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    for expected in [154, 0] {
        let out = radreg(&["audit", "record", "--fixture", "paper", "--ledger", ledger.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout_json(&out)["appended"], expected);
    }
    assert_eq!(std::fs::read_to_string(&ledger).unwrap().lines().count(), 154);
}
