use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proxstep::output::read_csv;

fn proxstep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxstep"))
        .args(args)
        .env("PROXSTEP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_bouncing_ball_writes_all_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ball");
    let res = proxstep(&[
        "run",
        "--scenario",
        "builtin:bouncing-ball",
        "--h",
        "1e-3",
        "--out",
        arg(&out),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let (header, rows) = read_csv(fs::File::open(out.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(
        header,
        ["t", "q0", "u0", "lambda0", "active_count", "kkt_residual"]
    );
    assert_eq!(rows.len(), 2001);
    assert_eq!(rows.last().unwrap()[0], 2.0);
    let report: serde_json::Value =
        serde_json::from_reader(fs::File::open(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(report["completed"], true);
    assert_eq!(
        report["diagnostics"]["impact_law_defects"]
            .as_array()
            .unwrap()
            .len(),
        1
    );
}

#[test]
fn csv_values_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rot");
    let res = proxstep(&[
        "run",
        "--scenario",
        "builtin:rotating-wall",
        "--h",
        "0.01",
        "--out",
        arg(&out),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let loaded = proxstep::config::ScenarioFile::load("builtin:rotating-wall")
        .unwrap()
        .build()
        .unwrap();
    let traj = proxstep_core::scheme::simulate(&loaded.scenario, 0.01).unwrap();
    let (_, rows) = read_csv(fs::File::open(out.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), traj.records.len());
    for (row, rec) in rows.iter().zip(&traj.records) {
        let expected: Vec<f64> = std::iter::once(rec.t)
            .chain(rec.q.iter().copied())
            .chain(rec.u.iter().copied())
            .chain(rec.lambda.iter().copied())
            .chain([rec.active.len() as f64, rec.kkt_residual])
            .collect();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(row), bits(&expected));
    }
}

#[test]
fn malformed_config_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"q0": [1.0], "horizon": 1.0, "walls": [], "unknown_key": 3}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = proxstep(&[
        "run",
        "--scenario",
        arg(&cfg),
        "--h",
        "0.1",
        "--out",
        arg(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
    assert!(!res.stderr.is_empty());
}

#[test]
fn infeasible_step_exits_2_and_keeps_partial_output() {
    // a wall q >= t chasing the point into the fixed wall q <= 1.5
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("squeeze.json");
    fs::write(
        &cfg,
        r#"{"q0": [1.0], "horizon": 3.0, "h": 0.01,
            "walls": [{"normal": [1.0], "rate": -1.0}, {"normal": [-1.0], "offset": 1.5}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = proxstep(&["run", "--scenario", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(
        res.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let (_, rows) = read_csv(fs::File::open(out.join("trajectory.csv")).unwrap()).unwrap();
    assert!(rows.len() > 100 && rows.len() < 301, "{}", rows.len());
    let report: serde_json::Value =
        serde_json::from_reader(fs::File::open(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(report["completed"], false);
}

#[test]
fn converge_writes_table_with_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv");
    let res = proxstep(&[
        "converge",
        "--scenario",
        "builtin:bouncing-ball",
        "--h-list",
        "1e-2,5e-3,2.5e-3",
        "--out",
        arg(&out),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "h,dq_inf,du_l1,rate");
    assert_eq!(lines.len(), 3);
    let rate: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!((rate - 1.0).abs() < 0.3);
}

#[test]
fn converge_needs_two_step_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv");
    let res = proxstep(&[
        "converge",
        "--scenario",
        "builtin:bouncing-ball",
        "--h-list",
        "1e-2",
        "--out",
        arg(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn check_reports_finite_constants() {
    for name in ["bouncing-ball", "two-ball", "rotating-wall"] {
        let res = proxstep(&["check", "--scenario", &format!("builtin:{name}")]);
        assert_eq!(res.status.code(), Some(0));
        let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
        for key in ["alpha", "beta"] {
            assert!(report[key].as_f64().unwrap().is_finite(), "{name} {key}");
        }
        assert!(
            report["gamma"].as_f64().unwrap().is_finite(),
            "{name}: {report}"
        );
    }
}

#[test]
fn list_builtins_names_the_catalog() {
    let res = proxstep(&["list-builtins"]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8(res.stdout).unwrap();
    for name in [
        "bouncing-ball",
        "two-ball",
        "resting-sphere",
        "box-n-spheres",
        "moving-wall",
        "rotating-wall",
    ] {
        assert!(text.contains(name));
    }
}
