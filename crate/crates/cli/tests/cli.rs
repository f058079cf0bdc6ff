use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use board_core::{Project, ProjectId};
use board_store::{import, Store};

fn board(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_board"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn replay_matches_goldens() {
    let script = scenarios().join("park.json");
    let out = board(&["replay", "--script", script.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("goldens match"));
}

#[test]
fn one_extra_note_breaks_the_goldens() {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        std::fs::copy(&path, dir.path().join(path.file_name().unwrap())).unwrap();
    }
    let script_path = dir.path().join("park.json");
    let mut script: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&script_path).unwrap()).unwrap();
    let steps = script["steps"].as_array_mut().unwrap();
    let mut extra = steps.iter().find(|s| s["op"]["type"] == "create_note").unwrap().clone();
    extra.as_object_mut().unwrap().remove("bind");
    extra["op"]["text"] = "one more".into();
    steps.push(extra);
    std::fs::write(&script_path, serde_json::to_string_pretty(&script).unwrap()).unwrap();

    let out = board(&["replay", "--script", script_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("park.export.json"), "{stderr}");
    assert!(stderr.contains("first difference at line"), "{stderr}");
}

#[test]
fn simulate_prints_a_converged_report() {
    let out = board(&["simulate", "--clients", "3", "--ops", "50", "--seed", "7", "--delay", "adversarial"]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["ops_total"], 150);
    assert_eq!(report["delay"], "adversarial");
}

#[test]
fn unknown_delay_model_is_a_usage_error() {
    let out = board(&["simulate", "--delay", "sometimes"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_on_a_busy_port_exits_2() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let out = board(&[
        "serve",
        "--host",
        "127.0.0.1",
        "--port",
        &port,
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn export_writes_an_importable_file() {
    let dir = tempfile::tempdir().unwrap();
    let id = ProjectId::new("CliExportProject000001");
    let doc = Project::new(id.clone(), "Lakeside", "fi");
    Store::open(dir.path()).unwrap().create(&doc).unwrap();
    let out_file = dir.path().join("export.json");
    let out = board(&[
        "export",
        "--project",
        id.as_str(),
        "--out",
        out_file.to_str().unwrap(),
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let imported = import(&std::fs::read_to_string(&out_file).unwrap()).unwrap();
    assert_eq!(imported, doc);

    let missing = board(&[
        "export",
        "--project",
        "NoSuchProject000000001",
        "--out",
        out_file.to_str().unwrap(),
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!missing.status.success());
}
