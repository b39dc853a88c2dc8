use std::path::Path;
use std::process::{Command, Output};

fn coordsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coordsim")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn fourway_run_writes_trace_summary_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("out.jsonl");
    let summary = dir.path().join("out.json");
    let snaps = dir.path().join("snaps");
    let out = coordsim(&[
        "run", "--scenario", "fourway", "--seed", "7", "--trace", p(&trace), "--summary", p(&summary),
        "--snapshot-at", "0", "--snapshot-at", "15000", "--snapshot-dir", p(&snaps),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["all_done"], true);
    assert_eq!(s["seed"], 7);
    assert_eq!(s["final_locs"].as_object().unwrap().len(), 4);
    assert!(s["violations"].as_array().unwrap().is_empty());
    assert_eq!(s["progress"]["vehicles"].as_array().unwrap().len(), 4);

    let text = std::fs::read_to_string(&trace).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["kind"], "header");
    assert_eq!(header["seed"], 7);
    assert!(snaps.join("snapshot_0.svg").exists() && snaps.join("snapshot_15000.svg").exists());

    let check = coordsim(&["check", p(&trace)]);
    assert_eq!(check.status.code(), Some(0));
}

#[test]
fn same_seed_same_trace_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for t in [&a, &b] {
        let out = coordsim(&["run", "--scenario", "lossy", "--seed", "3", "--trace", p(t)]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn loss_is_masked_by_retransmission() {
    let out = coordsim(&["run", "--scenario", "fourway", "--set", "net.loss_rate=0.2", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn scenario_file_on_disk_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("mine.json");
    std::fs::write(
        &f,
        r#"{"name": "mine", "vehicles": [{"pid": 4, "arrival": "B0", "departure": "B1"}]}"#,
    )
    .unwrap();
    let out = coordsim(&["run", "--scenario", p(&f)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("1/1 vehicles done"));
}

#[test]
fn config_errors_exit_2() {
    let bad_loss = coordsim(&["run", "--scenario", "fourway", "--set", "net.loss_rate=1.5"]);
    assert_eq!(bad_loss.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_loss.stderr).contains("loss_rate"));

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("uturn.json");
    std::fs::write(&f, r#"{"name": "u", "vehicles": [{"pid": 0, "arrival": "A0", "departure": "B1"}]}"#).unwrap();
    let uturn = coordsim(&["run", "--scenario", p(&f)]);
    assert_eq!(uturn.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&uturn.stderr).contains("vehicles[0]"));

    assert_eq!(coordsim(&["run", "--scenario", "/no/such/file.json"]).status.code(), Some(2));
    assert_eq!(coordsim(&["run", "--scenario", "solo", "--snapshot-at", "99999999"]).status.code(), Some(2));
    assert_eq!(coordsim(&["run"]).status.code(), Some(2));
}

#[test]
fn stuck_vehicles_exit_1() {
    let out = coordsim(&["run", "--scenario", "crash"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("stuck"));
}

#[test]
fn violations_exit_1_and_can_halt() {
    let out = coordsim(&[
        "run", "--scenario", "contention", "--set", "faults.mutex=\"unconditional_ok\"", "--halt-on-violation", "true",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("halted") && stdout.contains("mutex_safety"), "{stdout}");
}

#[test]
fn max_time_cuts_the_run_short() {
    let out = coordsim(&["run", "--scenario", "fourway", "--max-time", "5000"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("horizon"));
}

#[test]
fn render_subcommand_and_range_check() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    assert_eq!(coordsim(&["run", "--scenario", "solo", "--trace", p(&trace)]).status.code(), Some(0));
    let svg = dir.path().join("s.svg");
    assert_eq!(coordsim(&["render", p(&trace), "--at", "3000", "--out", p(&svg)]).status.code(), Some(0));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<circle"));
    let late = coordsim(&["render", p(&trace), "--at", "99999999", "--out", p(&svg)]);
    assert_eq!(late.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&late.stderr).contains("outside the trace"));
}

#[test]
fn list_shows_bundled_scenarios() {
    let out = coordsim(&["list"]);
    let s = String::from_utf8_lossy(&out.stdout);
    for n in ["fourway", "solo", "contention", "lossy", "crash"] {
        assert!(s.lines().any(|l| l == n));
    }
}
