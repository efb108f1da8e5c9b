use std::path::PathBuf;
use std::process::{Command, Output};

use pilotsim_core::engine::read_trace;
use pilotsim_core::replay::replay;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pilotsim"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report_without_meta(stdout: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(stdout).expect("json report");
    v.as_object_mut().expect("object").remove("meta");
    v
}

#[test]
fn validate_shipped_scenarios() {
    for name in [
        "pilot-light-canonical",
        "active-active-70-30",
        "db-master-failover",
        "autoscale-november",
        "warm-standby-link-flap",
    ] {
        let p = scenario(name);
        let o = run(&["validate", "--scenario", p.to_str().unwrap()]);
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: "));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let canonical = std::fs::read_to_string(scenario("pilot-light-canonical")).unwrap();

    let invalid = dir.path().join("invalid.json");
    let mut v: Value = serde_json::from_str(&canonical).unwrap();
    v["dr"]["weights"] = serde_json::json!([70, 20, 10]);
    std::fs::write(&invalid, v.to_string()).unwrap();
    let o = run(&["validate", "--scenario", invalid.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("dr"));
    let o = run(&["run", "--scenario", invalid.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let malformed = dir.path().join("malformed.json");
    std::fs::write(&malformed, "{ \"schema_version\": ").unwrap();
    assert_eq!(
        code(&run(&[
            "validate",
            "--scenario",
            malformed.to_str().unwrap()
        ])),
        3
    );
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, canonical.replace("\"sla\"", "\"slaa\"")).unwrap();
    assert_eq!(
        code(&run(&["run", "--scenario", unknown.to_str().unwrap()])),
        3
    );

    let missing = dir.path().join("nope.json");
    assert_eq!(
        code(&run(&["validate", "--scenario", missing.to_str().unwrap()])),
        5
    );
}

#[test]
fn canonical_matches_golden() {
    let p = scenario("pilot-light-canonical");
    let o = run(&["run", "--scenario", p.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0);
    let golden: Value =
        serde_json::from_str(include_str!("golden/pilot-light-canonical.json")).unwrap();
    assert_eq!(report_without_meta(&o.stdout), golden);
}

#[test]
fn runs_are_deterministic_and_seed_overrides() {
    let p = scenario("active-active-70-30");
    let args = ["run", "--scenario", p.to_str().unwrap(), "--format", "json"];
    let a = report_without_meta(&run(&args).stdout);
    let b = report_without_meta(&run(&args).stdout);
    assert_eq!(a, b);
    let o = run(&[&args[..], &["--seed", "99"]].concat());
    let c = report_without_meta(&o.stdout);
    assert_eq!(c["seed"], 99);
    assert_ne!(c["requests"], a["requests"]);
}

#[test]
fn trace_and_out_files() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.ndjson");
    let out = dir.path().join("r.json");
    let p = scenario("warm-standby-link-flap");
    let o = run(&[
        "run",
        "--scenario",
        p.to_str().unwrap(),
        "--format",
        "json",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let report = report_without_meta(&std::fs::read(&out).unwrap());
    let records = read_trace(std::io::BufReader::new(
        std::fs::File::open(&trace).unwrap(),
    ))
    .unwrap();
    assert_eq!(records[0].kind, "Init");
    assert_eq!((records[0].time, records[0].seq), (0, 0));
    let r = replay(&records, report["duration_ms"].as_u64().unwrap()).unwrap();
    assert_eq!(
        r.downtime_ms,
        report["availability"]["downtime_ms"].as_u64().unwrap()
    );
    assert_eq!(r.requests, report["requests"]["total"].as_u64().unwrap());
}

#[test]
fn text_report() {
    let p = scenario("db-master-failover");
    let o = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.contains("availability"));
    assert!(s.contains("invariants    ok"));
}

#[test]
fn sweep_orders_modes() {
    let p = scenario("pilot-light-canonical");
    let o = run(&["sweep", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    for mode in [
        "backup_and_restore",
        "pilot_light",
        "warm_standby",
        "active_active",
    ] {
        assert!(s.contains(mode), "{s}");
    }
    assert!(s.contains("ordering check PASS"), "{s}");

    let o = run(&[
        "sweep",
        "--scenario",
        p.to_str().unwrap(),
        "--format",
        "json",
    ]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 4);
    assert_eq!(v["ordering_violations"].as_array().unwrap().len(), 0);
}
