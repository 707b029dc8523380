use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST: [&str; 4] = ["--steps", "20", "--mapping-steps", "16"];

fn framewise(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framewise"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn direct_with_mock_prints_prompt_set() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(framewise(
        dir.path(),
        &["direct", "A corgi runs on the beach", "--mock"],
    ));
    let set: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(set["prompts"].as_array().unwrap().len(), 8);
    assert_eq!(set["fps"], 4);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["direct", "x", "--mock", "--frames", "0"][..],
        &["generate", "x", "--mock", "--mode", "sideways"],
        &["compare-attention", "x", "--mock", "--modes", "rvm,bogus"],
        &[
            "generate",
            "x",
            "--mock",
            "--steps",
            "10",
            "--mapping-steps",
            "11",
        ],
        &["generate", "--mock"],
        &["frobnicate"],
    ] {
        let out = framewise(dir.path(), args);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn help_exits_cleanly_and_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(framewise(dir.path(), &["generate", "--help"]));
    for shown in [
        "[default: 100]",
        "[default: 96]",
        "[default: 12]",
        "[default: 0.4]",
        "[default: rvm_dsf]",
    ] {
        assert!(help.contains(shown), "{shown}");
    }
}

#[test]
fn unreachable_endpoint_is_a_network_failure() {
    let dir = tempfile::tempdir().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let out = framewise(
        dir.path(),
        &[
            "direct",
            "x",
            "--endpoint",
            &endpoint,
            "--max-retries",
            "1",
            "--backoff-ms",
            "1",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn piped_prompts_reproduce_the_one_shot_video() {
    let dir = tempfile::tempdir().unwrap();
    let prompt = "A lantern floats over a dark lake";
    ok(framewise(
        dir.path(),
        &[
            "direct", prompt, "--mock", "--frames", "4", "--out", "p.json",
        ],
    ));
    let mut piped = vec![
        "generate",
        "--prompts-file",
        "p.json",
        "--output-dir",
        "piped",
    ];
    piped.extend(FAST);
    ok(framewise(dir.path(), &piped));
    let mut direct = vec![
        "generate",
        prompt,
        "--mock",
        "--frames",
        "4",
        "--output-dir",
        "oneshot",
    ];
    direct.extend(FAST);
    ok(framewise(dir.path(), &direct));

    let (a, b) = (dir.path().join("piped"), dir.path().join("oneshot"));
    for name in ["frame_0001.png", "frame_0004.png", "video.gif"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let (mut ma, mut mb) = (
        json(&a.join("manifest.json")),
        json(&b.join("manifest.json")),
    );
    ma["config"]["output_dir"] = Value::Null;
    mb["config"]["output_dir"] = Value::Null;
    assert_eq!(ma, mb);
}

#[test]
fn replaying_a_manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "generate",
        "A kite over a hill",
        "--mock",
        "--frames",
        "3",
        "--seed",
        "5",
        "--output-dir",
        "first",
    ];
    args.extend(FAST);
    ok(framewise(dir.path(), &args));
    let printed = ok(framewise(
        dir.path(),
        &[
            "generate",
            "--replay",
            "first/manifest.json",
            "--output-dir",
            "again",
        ],
    ));
    assert_eq!(
        printed.trim(),
        Path::new("again").join("manifest.json").to_str().unwrap()
    );
    for name in ["frame_0001.png", "frame_0003.png", "video.gif"] {
        assert_eq!(
            std::fs::read(dir.path().join("first").join(name)).unwrap(),
            std::fs::read(dir.path().join("again").join(name)).unwrap()
        );
    }
    assert_eq!(
        json(&dir.path().join("again/manifest.json"))["config"]["seed"],
        5
    );
}

#[test]
fn rvm_is_steadier_than_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut scores = Vec::new();
    for mode in ["rvm", "per_frame"] {
        let mut args = vec![
            "generate",
            "A corgi is running on the beach",
            "--mock",
            "--mode",
            mode,
            "--output-dir",
            mode,
        ];
        args.extend(FAST);
        ok(framewise(dir.path(), &args));
        scores.push(
            json(&dir.path().join(mode).join("manifest.json"))["temporal_consistency"]
                .as_f64()
                .unwrap(),
        );
    }
    assert_ne!(
        std::fs::read(dir.path().join("rvm/frame_0005.png")).unwrap(),
        std::fs::read(dir.path().join("per_frame/frame_0005.png")).unwrap()
    );
    assert!(scores[0] < scores[1], "{scores:?}");
}

#[test]
fn long_videos_go_through_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "generate",
        "Clouds drift over a valley",
        "--mock",
        "--frames",
        "12",
        "--batch",
        "8",
        "--output-dir",
        "long",
    ];
    args.extend(FAST);
    ok(framewise(dir.path(), &args));
    let manifest = json(&dir.path().join("long/manifest.json"));
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 12);
    assert_eq!(manifest["sections"].as_array().unwrap().len(), 3);
    assert!(manifest["cache"]["hits"].as_u64().unwrap() > 0);
    assert_eq!(manifest["cache"]["misses"], 0);
    assert!(dir.path().join("long/frame_0012.png").exists());
}

#[test]
fn compare_attention_writes_one_column_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    ok(framewise(
        dir.path(),
        &[
            "direct",
            "A red balloon rises",
            "--mock",
            "--frames",
            "3",
            "--out",
            "p.json",
        ],
    ));
    let mut args = vec![
        "compare-attention",
        "--prompts-file",
        "p.json",
        "--modes",
        "first_frame,rvm,rvm_dsf",
        "--summary",
        "summary.json",
    ];
    args.extend(FAST);
    let csv = ok(framewise(dir.path(), &args));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "frame,first_frame,rvm,rvm_dsf");
    assert_eq!(lines.len(), 1 + 3 + 2);
    assert!(lines[4].starts_with("Avg.,") && lines[5].starts_with("Avg. Dist.,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 4));
    assert_eq!(
        json(&dir.path().join("summary.json"))
            .as_array()
            .unwrap()
            .len(),
        3
    );

    let mut single = vec![
        "compare-attention",
        "--prompts-file",
        "p.json",
        "--modes",
        "rvm",
    ];
    single.extend(FAST);
    let csv = ok(framewise(dir.path(), &single));
    assert!(csv.starts_with("frame,rvm\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn eval_scores_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "generate",
        "A red balloon rises",
        "--mock",
        "--frames",
        "3",
        "--output-dir",
        "run",
    ];
    args.extend(FAST);
    ok(framewise(dir.path(), &args));
    let report: Value = serde_json::from_str(&ok(framewise(
        dir.path(),
        &["eval", "--run", "run", "--csv", "scores.csv"],
    )))
    .unwrap();
    assert_eq!(report["frames"], 3);
    assert_eq!(report["methods"][0]["label"], "rvm_dsf");
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert!(csv.starts_with("frame,rvm_dsf\n"));

    let out = framewise(dir.path(), &["eval", "--run", "missing"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lift_fps_doubles_frames_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    ok(framewise(
        dir.path(),
        &[
            "direct",
            "Waves hit a rock",
            "--mock",
            "--frames",
            "3",
            "--fps",
            "2",
            "--out",
            "p.json",
        ],
    ));
    let lifted: Value = serde_json::from_str(&ok(framewise(
        dir.path(),
        &[
            "lift-fps",
            "--prompts-file",
            "p.json",
            "--iterations",
            "2",
            "--mock",
        ],
    )))
    .unwrap();
    assert_eq!(lifted["prompts"].as_array().unwrap().len(), 12);
    assert_eq!(lifted["fps"], 8);
}
