use std::process::Command;

fn leo_route() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leo-route"))
}

fn json_line(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("one JSON line")
}

#[test]
fn green_report_prints_energy_and_co2() {
    let out = leo_route()
        .args(["green-report", "--time-ms", "2.70"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v = json_line(&out.stdout);
    assert!((v["energy_kwh"].as_f64().unwrap() - 2.25e-4).abs() < 1e-9);
    assert!((v["co2_g"].as_f64().unwrap() - 0.111375).abs() < 1e-9);
}

#[test]
fn invalid_config_exits_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "[constellation]\nnum_satellites = 10\nnum_planes = 3\nsats_per_plane = 3\n[run]\nseed = 1\n",
    )
    .unwrap();
    let out = leo_route()
        .args(["evaluate", "--policy", "dijkstra", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v = json_line(&out.stderr);
    assert_eq!(v["error"], "invalid_config");
    assert!(v["message"].as_str().unwrap().contains("num_satellites"));
}

#[test]
fn evaluate_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.toml");
    std::fs::write(
        &cfg,
        "[constellation]\nnum_satellites = 4\nnum_planes = 2\nsats_per_plane = 2\nstatic_topology = true\n\
         [traffic]\nbase_rate_lambda0 = 0.3\n[run]\nseed = 3\neval_slots = 100\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = leo_route()
        .args(["evaluate", "--policy", "random", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_line(&out.stdout);
    assert_eq!(v["policy"], "random");
    assert_eq!(v["conservation_holds"], true);
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("policy,load_mbps,seed,"));
}

#[test]
fn dump_topology_writes_edges() {
    let dir = tempfile::tempdir().unwrap();
    let out = leo_route()
        .args(["dump-topology", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let v = json_line(&out.stdout);
    assert_eq!(v["satellites"], 45);
    assert!(dir.path().join("edges.csv").exists());
    assert!(dir.path().join("positions.csv").exists());
}

#[test]
fn missing_seed_is_rejected() {
    let out = leo_route().args(["evaluate", "--policy", "dijkstra"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_line(&out.stderr)["error"], "invalid_config");
}
