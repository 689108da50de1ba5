use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloud-layers"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", name];
    args.extend_from_slice(extra);
    let out = run(dir, &args);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn detect_writes_one_line_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "seq", &["--seed", "1"]);
    let out = run(
        dir,
        &[
            "detect", "--manifest", "seq/manifest.json", "--model", "beta_T+vm_phi", "--alpha0", "1", "--alpha1", "10",
            "--beta", "650", "--out", "run.jsonl", "--dump-dir", "dump",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("processed 30 frames"));
    let text = fs::read_to_string(dir.join("run.jsonl")).unwrap();
    assert!(text.ends_with('\n'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 30);
    for (k, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["t"], k + 1);
        assert_eq!(v["scores"].as_array().unwrap().len(), 2);
    }
    assert!(dir.join("dump/flow_0001_L1.csv").exists());
    assert!(dir.join("dump/posterior_0030_L2.csv").exists());

    let out = run(dir, &["score", "--records", "run.jsonl", "--truth", "seq/truth.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() >= 90.0);
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = run(dir, &["detect", "--manifest", "missing/manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing/manifest.json"));

    synth(dir, "seq", &["--frames", "3"]);
    let out = run(dir, &["detect", "--manifest", "seq/manifest.json", "--model", "nosuch"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("beta_T+vm_phi") && stderr(&out).contains("gauss_T_uv"));

    let out = run(dir, &["detect", "--manifest", "seq/manifest.json", "--alpha1", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir, &["detect"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir, &["synth", "--out", "bad", "--layers", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("1 or 2 layers"));
}

#[test]
fn synth_writes_sequence_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "two", &["--frames", "2"]);
    let names: Vec<String> = fs::read_dir(dir.join("two"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    for expected in [
        "manifest.json", "truth.json", "spec.json", "frame_0000.csv", "frame_0001.csv", "mask_0001.csv", "labels_0001.csv",
    ] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
    }
    assert!(!names.iter().any(|n| n == "frame_0002.csv"));

    // A spec file round-trips through the generator.
    let spec = fs::read_to_string(dir.join("two/spec.json")).unwrap();
    fs::write(dir.join("spec.json"), spec).unwrap();
    synth(dir, "again", &["--spec", "spec.json"]);
    assert_eq!(
        fs::read(dir.join("two/frame_0001.csv")).unwrap(),
        fs::read(dir.join("again/frame_0001.csv")).unwrap()
    );
}

fn write_records(dir: &Path, chosen: &[usize]) {
    let text: String = chosen
        .iter()
        .enumerate()
        .map(|(k, l)| format!("{{\"t\":{},\"chosen\":{l}}}\n", k + 1))
        .collect();
    fs::write(dir.join("records.jsonl"), text).unwrap();
}

fn score(dir: &Path) -> Output {
    run(dir, &["score", "--records", "records.jsonl", "--truth", "seq/truth.json"])
}

#[test]
fn score_reports_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "seq", &["--frames", "31", "--layers", "2"]);
    let accuracy = |out: &Output| {
        assert_eq!(out.status.code(), Some(0), "{}", stderr(out));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["accuracy"].as_f64().unwrap()
    };
    write_records(dir, &[2; 30]);
    assert_eq!(accuracy(&score(dir)), 100.0);
    write_records(dir, &[1; 30]);
    assert_eq!(accuracy(&score(dir)), 0.0);
    let mut mixed = vec![2; 30];
    mixed[..3].fill(1);
    write_records(dir, &mixed);
    assert_eq!(accuracy(&score(dir)), 90.0);
    write_records(dir, &[2; 12]);
    assert_eq!(score(dir).status.code(), Some(1));
}

#[test]
fn fit_dumps_every_group() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "seq", &["--frames", "4", "--seed", "2"]);
    let out = run(dir, &["fit", "--manifest", "seq/manifest.json", "--frame", "2", "--layers", "2", "--out", "fit.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    let groups = v["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0]["group"], "beta_T");
    assert_eq!(groups[1]["fit"]["families"][0], "von_mises");
    assert_eq!(groups[1]["fit"]["weights"].as_array().unwrap().len(), 2);
    assert!(!groups[0]["fit"]["trace"].as_array().unwrap().is_empty());

    let out = run(dir, &["fit", "--manifest", "seq/manifest.json", "--frame", "0"]);
    assert_eq!(out.status.code(), Some(1));
}
