use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spn"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_flags_exit_with_usage_code() {
    assert_eq!(spn(&["synth", "--nope"]).status.code(), Some(1));
    assert_eq!(spn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(spn(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = spn(&[
        "identify",
        "--probe",
        "/nonexistent.png",
        "--fp",
        "/nonexistent.spnf",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn command_line_flags_override_config_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.cfg");
    fs::write(&cfg, "# small run\nn=3\nwidth=32\nheight=32\n").unwrap();
    let out = dir.path().join("imgs");
    let o = spn(&["synth", "--config", s(&cfg), "--out", s(&out), "--n", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m["parameters"]["synth"]["n"], 2);
    assert_eq!(m["parameters"]["synth"]["width"], 32);
    assert!(out.join("img_0001.png").is_file());
    assert!(!out.join("img_0002.png").exists());
    let inputs = m["inputs"].as_array().unwrap();
    assert!(inputs.iter().any(|i| i["path"] == s(&cfg)));
    assert!(m["seeds"]["camera"].is_u64());
}

#[test]
fn replay_refuses_changed_inputs_and_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    let fp = dir.path().join("fp.spnf");
    let common = ["--width", "64", "--height", "64", "--n", "3", "--seed", "9"];
    let mut args = vec!["synth", "--out", s(&imgs)];
    args.extend(common);
    assert!(spn(&args).status.success());
    assert!(spn(&[
        "fingerprint",
        "--images",
        s(&imgs),
        "--out",
        s(&fp),
        "--threads",
        "3"
    ])
    .status
    .success());
    let m = dir.path().join("fp.spnf.manifest.json");
    let original = fs::read(&fp).unwrap();
    fs::write(&fp, b"garbage").unwrap();
    let r = spn(&["replay", s(&m)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read(&fp).unwrap(), original);

    fs::write(imgs.join("img_0000.png"), b"not an image").unwrap();
    let r = spn(&["replay", s(&m)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("changed"));
}

#[test]
fn thread_count_does_not_change_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    assert!(spn(&[
        "synth",
        "--out",
        s(&imgs),
        "--n",
        "10",
        "--width",
        "64",
        "--height",
        "64"
    ])
    .status
    .success());
    let a = dir.path().join("a.spnf");
    let b = dir.path().join("b.spnf");
    assert!(spn(&[
        "fingerprint",
        "--images",
        s(&imgs),
        "--out",
        s(&a),
        "--threads",
        "1"
    ])
    .status
    .success());
    assert!(spn(&[
        "fingerprint",
        "--images",
        s(&imgs),
        "--out",
        s(&b),
        "--threads",
        "4"
    ])
    .status
    .success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn gradcheck_report_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    assert!(spn(&["gradcheck", "--out", s(&out), "--samples", "40"])
        .status
        .success());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(r["full"]["pass"], true);
    assert_eq!(r["linear"]["pass"], true);
}
