use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn marine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = marine(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path) -> String {
    ok(&["synth", "--out", dir.to_str().unwrap(), "--n-videos", "10", "--seed", "3"]);
    dir.join("run.json").to_str().unwrap().to_string()
}

fn without_timestamp(path: &Path) -> Value {
    let mut v = json(path);
    v.as_object_mut().unwrap().remove("generated_at");
    v
}

#[test]
fn staged_commands_match_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let full = tmp.path().join("full");
    let staged = tmp.path().join("staged");

    let summary = ok(&["run", "-c", &config, "--output-dir", full.to_str().unwrap()]);
    assert!(summary.contains("accuracy"));
    assert!(summary.contains("oracle at 0.25"));

    let s = staged.to_str().unwrap();
    for cmd in ["extract", "cv", "train", "predict", "eval-ar", "eval-ad"] {
        ok(&[cmd, "-c", &config, "--output-dir", s]);
    }
    let report = json(&full.join("report.json"));
    let head: Value = json(&staged.join("head.json"));
    assert_eq!(head["threshold"], report["threshold"]);
    assert_eq!(
        fs::read_to_string(staged.join("predictions.jsonl")).unwrap(),
        fs::read_to_string(full.join("predictions.jsonl")).unwrap()
    );
    let ar = json(&staged.join("ar_report.json"));
    assert_eq!(ar["body"]["metrics"], report["recognition"]["metrics"]);
    let ad = json(&staged.join("detections.json"));
    assert_eq!(ad["body"]["per_threshold"], report["detection"]["per_threshold"]);
    assert_eq!(ad["config_hash"], report["config_hash"]);
}

#[test]
fn rerun_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let out = tmp.path().join("out");
    ok(&["run", "-c", &config]);
    let first = without_timestamp(&out.join("report.json"));
    // Second run reuses the feature cache.
    fs::remove_file(out.join("report.json")).unwrap();
    ok(&["run", "-c", &config]);
    assert_eq!(first, without_timestamp(&out.join("report.json")));
}

#[test]
fn select_frames_writes_one_file_per_clip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let sel = tmp.path().join("sel");
    ok(&["select-frames", "-c", &config, "--out", sel.to_str().unwrap(), "--k", "4"]);
    assert_eq!(fs::read_dir(&sel).unwrap().count(), 50);
    let v = json(&sel.join("syn0000_clip2.json"));
    assert_eq!(v["video_id"], "syn0000_clip2");
    assert_eq!(v["method"], "motion_based");
    assert_eq!(v["k"], 4);
    assert_eq!(v["indices"].as_array().unwrap().len(), 4);
    assert!(v["scores"].is_array());
}

#[test]
fn dataset_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut sources = String::new();
    for i in 0..5 {
        sources.push_str(&format!(
            "{{\"video_id\": \"v{i}\", \"path\": \"v{i}.mp4\", \"n_frames\": 1200, \"fps\": 120.0}}\n"
        ));
    }
    fs::write(d.join("sources.jsonl"), sources).unwrap();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    let out = ok(&[
        "slice",
        "--sources",
        &p("sources.jsonl"),
        "--out",
        &p("clips.jsonl"),
        "--truth",
        &p("truth.jsonl"),
    ]);
    assert!(out.starts_with("25 records"), "{out}");
    assert_eq!(fs::read_to_string(p("truth.jsonl")).unwrap().lines().count(), 5);

    let out = ok(&["split", "--manifest", &p("clips.jsonl"), "--out", &p("split.jsonl")]);
    assert!(out.contains("20 train, 5 test"), "{out}");

    fs::write(
        d.join("ak.csv"),
        "video_id,split,species_group,actions\n\
         a,train,Fish,Attacking;Swimming\n\
         b,train,Fish,Swimming\n\
         c,test,Bird,Flying\n\
         d,test,Fish,Eating\n",
    )
    .unwrap();
    let out = ok(&["filter-ak", "--annotations", &p("ak.csv"), "--out", &p("fish.jsonl")]);
    assert!(out.contains("3 records (2 train, 1 test"), "{out}");
    let out = ok(&["filter-ak", "--annotations", &p("ak.csv"), "--multilabel", "--out", &p("all.jsonl")]);
    assert!(out.contains("4 records"), "{out}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(marine(&["run", "-c", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(marine(&["frobnicate"]).status.code(), Some(2));

    let config = synth(tmp.path());
    // Training before cross-validation.
    let out = marine(&["train", "-c", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `cv` first"));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"manifest": "manifest.jsonl", "embedder": {"backend": "feature_store", "path": "nowhere"}}"#)
        .unwrap();
    assert_eq!(marine(&["extract", "-c", bad.to_str().unwrap()]).status.code(), Some(2));

    // A manifest line that is not JSON is a data error.
    fs::write(tmp.path().join("broken.jsonl"), "{not json\n").unwrap();
    let broken = tmp.path().join("broken.json");
    fs::write(&broken, r#"{"manifest": "broken.jsonl"}"#).unwrap();
    assert_eq!(marine(&["extract", "-c", broken.to_str().unwrap()]).status.code(), Some(3));
}
