use std::path::Path;
use std::process::Command;

fn navworld(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_navworld")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "navworld {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    navworld(&["gen-data", "--out", s(&data), "--count", "3", "--model", "micro"]);
    let cfg = d.join("train.json");
    std::fs::write(&cfg, r#"{"batch_size": 2, "warmup": 0}"#).unwrap();
    let a = d.join("1a");
    navworld(&[
        "train",
        "--stage",
        "1a",
        "--variant",
        "diffusion",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&a),
        "--model",
        "micro",
        "--steps",
        "2",
    ]);
    let log = std::fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let b = d.join("1b");
    navworld(&[
        "train",
        "--stage",
        "1b",
        "--variant",
        "diffusion",
        "--data",
        s(&data),
        "--out",
        s(&b),
        "--init",
        s(&a),
        "--steps",
        "2",
    ]);
    let c = d.join("2");
    navworld(&[
        "train",
        "--stage",
        "2",
        "--variant",
        "diffusion",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&c),
        "--init",
        s(&b),
        "--steps",
        "2",
    ]);
    assert!(c.join("last.ckpt").exists());

    let report = d.join("report.json");
    let text = navworld(&[
        "eval",
        "--checkpoint",
        s(&c),
        "--data",
        s(&data),
        "--sfs-k",
        "2",
        "--out",
        s(&report),
    ]);
    assert!(text.contains("SR"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["metrics"]["episodes"], 3);

    let dump = d.join("dump");
    navworld(&[
        "rollout",
        "--checkpoint",
        s(&c),
        "--episode",
        "9",
        "--dump",
        s(&dump),
        "--sfs-k",
        "2",
    ]);
    assert!(dump.join("trajectory.csv").exists());
    let plotted = navworld(&["plot", "--dump", s(&dump)]);
    assert!(plotted.contains("trajectory.png"));

    let speed = d.join("speed.json");
    navworld(&[
        "speed",
        "--checkpoint",
        s(&c),
        "--data",
        s(&data),
        "--ks",
        "1,2",
        "--out",
        s(&speed),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&speed).unwrap()).unwrap();
    assert_eq!(v["report"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_navworld"))
        .args(["gen-data", "--out", "/nonexistent/x", "--model", "huge"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model preset"));
}
