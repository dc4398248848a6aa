use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_storyreel");

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("INFSTORY_CONFIG").output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn validate_exit_codes() {
    let ok = run(&["validate", &fixture("minimal_plan.json")]);
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok.stderr));
    assert!(!text(&ok.stdout).contains("error"));

    let bad = run(&["validate", &fixture("adj_location_plan.json")]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stdout).contains("E_ADJ_LOCATION"));

    let strict = run(&["validate", "--strict", "--json", &fixture("minimal_plan.json")]);
    assert_eq!(strict.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&strict.stdout).unwrap();
    assert_eq!(report["errors"][0]["code"], "E_CHAPTER_RANGE");

    assert_eq!(run(&["validate"]).status.code(), Some(64));
    assert_eq!(run(&["render", "x.json", "--backend", "cloud"]).status.code(), Some(64));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "frames_per_shot = 0\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "validate", &fixture("minimal_plan.json")]);
    assert_eq!(out.status.code(), Some(64));
    let env = Command::new(BIN)
        .args(["validate", &fixture("minimal_plan.json")])
        .env("INFSTORY_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(64));
}

fn stitched_hash(stdout: &[u8]) -> String {
    text(stdout).lines().find_map(|l| l.strip_prefix("stitched ").map(String::from)).unwrap()
}

#[test]
fn plan_render_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let plan = dir.path().join("plan.json");
    let traces = dir.path().join("traces");
    let p = run(&["plan", &fixture("story_spec.json"), "-o", plan.to_str().unwrap(), "--traces", traces.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(p.status.code(), Some(0), "{}", text(&p.stderr));
    assert!(std::fs::read_dir(&traces).unwrap().count() >= 4);
    assert_eq!(run(&["validate", "--strict", plan.to_str().unwrap()]).status.code(), Some(0));

    let small = fixture("minimal_plan.json");
    let a = run(&["render", &small, "--backend", "mock", "--seed", "7", "--out", out, "--run-id", "a"]);
    assert_eq!(a.status.code(), Some(0), "{}", text(&a.stderr));
    let b = run(&["render", &small, "--backend", "mock", "--seed", "7", "--out", out, "--run-id", "b"]);
    assert_eq!(stitched_hash(&a.stdout), stitched_hash(&b.stdout));
    let again = run(&["render", &small, "--seed", "7", "--out", out, "--run-id", "a"]);
    assert!(text(&again.stdout).contains("reused 3"), "{}", text(&again.stdout));

    let m = run(&["metrics", &dir.path().join("a").display().to_string()]);
    assert_eq!(m.status.code(), Some(0), "{}", text(&m.stderr));
    assert!(dir.path().join("a/report.json").is_file());
    assert_eq!(run(&["metrics", "--encoder", "clip", out]).status.code(), Some(64));
}

#[test]
fn infeasible_mock_geometry_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "frames_per_shot = 8\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "render", &fixture("minimal_plan.json"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stderr).contains("warning: mock transitions need 73 px"));
}

#[test]
fn unreachable_remote_is_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "retries = 1\nbackoff_ms = 0\ntimeout_ms = 2000\n").unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "render",
        &fixture("minimal_plan.json"),
        "--backend",
        "remote",
        "--endpoint",
        "http://127.0.0.1:1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn mock_serve_drives_remote_render() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(BIN)
        .args(["mock-serve", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    let out = dir.path().to_str().unwrap();
    let remote = run(&["render", &fixture("minimal_plan.json"), "--backend", "remote", "--endpoint", &url, "--out", out, "--run-id", "r"]);
    let local = run(&["render", &fixture("minimal_plan.json"), "--out", out, "--run-id", "l"]);
    child.kill().unwrap();
    let _ = child.wait();
    assert_eq!(remote.status.code(), Some(0), "{}", text(&remote.stderr));
    assert_eq!(stitched_hash(&remote.stdout), stitched_hash(&local.stdout));
}

#[test]
fn dataset_stages_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let filter_first = run(&["dataset", "filter", "--scale", "0.1", "--out", out]);
    assert_eq!(filter_first.status.code(), Some(1));
    for stage in ["gen", "filter", "manifest"] {
        let r = run(&["dataset", stage, "--scale", "0.1", "--out", out, "--rows", "100"]);
        assert_eq!(r.status.code(), Some(0), "{stage}: {}", text(&r.stderr));
    }
    let stats = run(&["dataset", "stats", "--scale", "0.1", "--out", out, "--rows", "100"]);
    let body = text(&stats.stdout);
    let json: serde_json::Value = serde_json::from_str(&body[..body.rfind('}').unwrap() + 1]).unwrap();
    assert_eq!(json["prompts"], 1000);
    assert_eq!(json["manifest_rows"], 100);
    assert!(dir.path().join("dataset/seed0-b01/stats.json").is_file());
}
