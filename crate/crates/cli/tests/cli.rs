use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pidalign"));
    cmd.env_remove("PIDALIGN_LOG");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/occluded_filter").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Builds both fixture graphs into `dir`; returns (scene graph, functional graph).
fn build_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let sg = dir.join("S.json");
    let fg = dir.join("F.json");
    let out = run(&["build-scene", s(&fixture("scene.json")), "-o", s(&sg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&["build-functional", s(&fixture("pid.json")), "--vocab", s(&fixture("vocab.txt")), "-o", s(&fg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (sg, fg)
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["build-scene", "build-functional", "match", "check", "serve"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["build-scene"])), 1);
}

#[test]
fn malformed_json_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("scene.json");
    std::fs::write(&bad, "{\n  \"pipes\": [\n    oops\n  ]\n}\n").unwrap();
    let out = run(&["build-scene", s(&bad), "-o", s(&dir.path().join("g.json"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("scene.json:3:5"), "{}", stderr(&out));
    assert!(!dir.path().join("g.json").exists());
}

#[test]
fn missing_input_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["build-scene", s(&dir.path().join("nope.json")), "-o", s(&dir.path().join("g.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn print_config_shows_defaults_and_overrides() {
    let out = run(&["--print-config", "build-scene", "x.json", "-o", "y.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scene"]["link_threshold"], 0.04);
    assert_eq!(v["matcher"]["epsilon"], 0.05);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"matcher": {"epsilon": 0.2, "outer_iters": 7}}"#).unwrap();
    let out = run(&["--config", s(&cfg), "--print-config", "match", "a", "b", "--out-dir", "d", "--outer-iters", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["matcher"]["epsilon"], 0.2);
    assert_eq!(v["matcher"]["outer_iters"], 9);

    std::fs::write(&cfg, r#"{"matcher": {"epsilonn": 0.2}}"#).unwrap();
    assert_eq!(code(&run(&["--config", s(&cfg), "--print-config", "check", "a", "b", "c", "-o", "d"])), 1);
    let out = run(&["--print-config", "build-scene", "x.json", "-o", "y.json", "--link-threshold=-1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn build_functional_removes_equipment() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("F.json");
    let out = run(&["build-functional", s(&fixture("pid.json")), "--remove-equipment", "FLT", "-o", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let g = read_json(&out_path);
    let ids: Vec<&str> = g["nodes"].as_array().unwrap().iter().map(|n| n["id"].as_str().unwrap()).collect();
    assert!(!ids.contains(&"FLT"));
    assert!(ids.contains(&"HX1"));

    let out = run(&["build-functional", s(&fixture("pid.json")), "--remove-equipment", "NOPE", "-o", s(&out_path)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("NOPE"));
}

#[test]
fn match_reports_the_hidden_filter() {
    let dir = tempfile::tempdir().unwrap();
    let (sg, fg) = build_pair(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["match", s(&sg), s(&fg), "--vocab", s(&fixture("vocab.txt")), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let report = read_json(&out_dir.join("report.json"));
    let unmatched: Vec<&Value> =
        report["items"].as_array().unwrap().iter().filter(|i| i["kind"] == "unmatched_target").collect();
    assert_eq!(unmatched.len(), 1);
    assert_eq!(unmatched[0]["payload"]["target"], "FLT");

    let sidecar = read_json(&out_dir.join("coupling.json"));
    let (rows, cols) = (sidecar["rows"].as_u64().unwrap(), sidecar["cols"].as_u64().unwrap());
    assert_eq!(std::fs::metadata(out_dir.join("coupling.bin")).unwrap().len(), rows * cols * 8);
    let mapping = read_json(&out_dir.join("mapping.json"));
    assert_eq!(mapping["pairs"].as_array().unwrap().len() as u64, rows);

    // accepting the filter leaves nothing open
    let out = run(&[
        "match",
        s(&sg),
        s(&fg),
        "--vocab",
        s(&fixture("vocab.txt")),
        "--accept",
        "unmatched_target:FLT",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0);
    let report = read_json(&out_dir.join("report.json"));
    assert!(report["items"].as_array().unwrap().iter().all(|i| i["status"] == "accepted"), "{report}");
}

#[test]
fn identical_graphs_give_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let (sg, _) = build_pair(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["match", s(&sg), s(&sg), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["items"].as_array().unwrap().len(), 0, "{report}");
}

#[test]
fn match_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let (sg, fg) = build_pair(dir.path());
    let out = run(&["match", s(&sg), s(&fg), "--epsilon", "0", "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn check_flags_planted_collision_and_edge() {
    let dir = tempfile::tempdir().unwrap();
    let sg = dir.path().join("S.json");
    let fg = dir.path().join("F.json");
    std::fs::write(
        &sg,
        r#"{"provenance": "scene",
            "nodes": [{"id": "a", "kind": "equipment", "label": "valve"},
                      {"id": "b", "kind": "equipment", "label": "valve"},
                      {"id": "c", "kind": "equipment", "label": "pump"}],
            "edges": [["a", "b"], ["b", "c"]]}"#,
    )
    .unwrap();
    std::fs::write(
        &fg,
        r#"{"provenance": "functional",
            "nodes": [{"id": "x", "kind": "equipment", "label": "valve"},
                      {"id": "y", "kind": "equipment", "label": "valve"},
                      {"id": "z", "kind": "equipment", "label": "pump"}],
            "edges": [["x", "y"], ["y", "z"]]}"#,
    )
    .unwrap();
    let mapping = dir.path().join("m.json");
    let report = dir.path().join("r.json");
    let write_mapping = |pairs: &[(&str, &str)], unmatched: &[&str]| {
        let pairs: Vec<Value> =
            pairs.iter().map(|(a, b)| serde_json::json!({"source": a, "target": b, "confidence": 1.0})).collect();
        std::fs::write(&mapping, serde_json::json!({"pairs": pairs, "unmatched_target": unmatched}).to_string())
            .unwrap();
    };

    // a and c both on x, b on z: collision at x, y unmatched, a-b and b-c map to x-z
    write_mapping(&[("a", "x"), ("b", "z"), ("c", "x")], &["y"]);
    let out = run(&["check", s(&sg), s(&fg), s(&mapping), "-o", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ids: Vec<String> =
        read_json(&report)["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap().to_owned()).collect();
    assert_eq!(ids, ["collision:x", "unmatched_target:y", "edge_violation:a|b", "edge_violation:b|c"]);

    write_mapping(&[("a", "x"), ("b", "y"), ("c", "z")], &[]);
    assert_eq!(code(&run(&["check", s(&sg), s(&fg), s(&mapping), "-o", s(&report)])), 0);
    assert!(read_json(&report)["items"].as_array().unwrap().is_empty());

    // not total on the source
    write_mapping(&[("a", "x"), ("b", "y")], &["z"]);
    assert_eq!(code(&run(&["check", s(&sg), s(&fg), s(&mapping), "-o", s(&report)])), 1);
    // unknown target id
    write_mapping(&[("a", "x"), ("b", "y"), ("c", "w")], &[]);
    assert_eq!(code(&run(&["check", s(&sg), s(&fg), s(&mapping), "-o", s(&report)])), 1);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    stream.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_health_probe() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let child = bin()
        .args(["serve", s(dir.path()), "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _server = Server(child);
    let start = Instant::now();
    let response = loop {
        if let Some(r) = http_get(port, "/healthz") {
            break r;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""), "{response}");
    assert!(response.contains(&format!("\"version\":\"{}\"", env!("CARGO_PKG_VERSION"))), "{response}");
    let missing = http_get(port, "/projects/does-not-exist").unwrap();
    assert!(missing.starts_with("HTTP/1.1 404"), "{missing}");
}

#[test]
fn serve_rejects_file_as_project_dir() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(code(&run(&["serve", s(&file), "--port", "0"])), 1);
}

#[test]
fn serve_on_busy_port_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    assert_eq!(code(&run(&["serve", s(dir.path()), "--port", &port])), 2);
}
