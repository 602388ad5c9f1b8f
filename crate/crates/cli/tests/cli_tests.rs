//! End-to-end tests of the `flowbal` binary: output contents, file
//! artifacts, determinism, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowbal"))
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_scenario(dir: &Path, name: &str, body: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn triangle_scenario(name: &str) -> serde_json::Value {
    serde_json::json!({
        "name": name,
        "graph": {"nodes": 3, "edges": [[2, 1], [3, 2], [1, 3]]},
        "signals": {"specs": [{"offset": 2.0}, {"offset": 2.0}], "share_constant_mode": true},
        "p": [[1.0, 0.0], [0.0, -1.0], [0.0, 0.0]],
        "balanced": true,
        "controller": {"kind": "internal_model"},
        "x0": [3.0, 0.0, 0.0],
        "sim": {"step": 1e-3, "horizon": 50.0, "record_stride": 10},
        "certificates": {"z_tail_tol": 1e-6}
    })
}

// ---------------------------------------------------------------------------
// synthesize

#[test]
fn synthesize_prints_worked_example_rows_and_note() {
    let out = run(&[
        "synthesize",
        scenario_path("triangle_harmonic.json").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("edge 1: [    1.0000    0.6667    0.0000 ]"),
        "{text}"
    );
    assert!(
        text.contains("edge 2: [    0.0000    0.3333    0.0000 ]"),
        "{text}"
    );
    assert!(
        text.contains("edge 3: [    0.0000    0.0000    0.0000 ]"),
        "{text}"
    );
    // Both coordinate systems and the caution that they differ.
    assert!(text.contains("demand coordinates"), "{text}");
    assert!(text.contains("not valid output rows"), "{text}");
    assert!(text.contains("edge 3 (1→3): static"), "{text}");
}

#[test]
fn synthesize_json_matches_expected_maps() {
    let out = run(&[
        "synthesize",
        scenario_path("triangle_harmonic.json").to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let m_w = v["m_w"].as_array().unwrap();
    let expected_w = [
        [1.0, 2.0 / 3.0, 0.0],
        [0.0, 1.0 / 3.0, 0.0],
        [0.0, 0.0, 0.0],
    ];
    for (row, expect) in m_w.iter().zip(expected_w) {
        for (val, e) in row.as_array().unwrap().iter().zip(expect) {
            assert!((val.as_f64().unwrap() - e).abs() <= 1e-12);
        }
    }
    let m_d = v["m_d"].as_array().unwrap();
    let expected_d = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, -1.0 / 3.0], [0.0, 0.0]];
    for (row, expect) in m_d.iter().zip(expected_d) {
        for (val, e) in row.as_array().unwrap().iter().zip(expect) {
            assert!((val.as_f64().unwrap() - e).abs() <= 1e-12);
        }
    }
    assert_eq!(v["tree_edges"], serde_json::json!([1, 2]));
    assert_eq!(v["cycle_edges"], serde_json::json!([3]));
    assert!(v["residual"].as_f64().unwrap() <= 1e-10);
    let controllers = v["controllers"].as_array().unwrap();
    assert_eq!(controllers.len(), 3);
    assert_eq!(controllers[0]["dynamic"], serde_json::json!(true));
    assert_eq!(controllers[2]["dynamic"], serde_json::json!(false));
    assert_eq!(controllers[2]["edge"], serde_json::json!(3));
}

#[test]
fn synthesize_zero_drive_gives_all_static_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = triangle_scenario("zero_drive");
    sc["p"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
    let path = write_scenario(dir.path(), "zero.json", sc);
    let out = run(&["synthesize", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for ctrl in v["controllers"].as_array().unwrap() {
        assert_eq!(ctrl["dynamic"], serde_json::json!(false));
    }
}

#[test]
fn synthesize_tree_has_no_static_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sc = serde_json::json!({
        "name": "path_graph",
        "graph": {"nodes": 3, "edges": [[2, 1], [3, 2]]},
        "signals": {"specs": [{"offset": 1.0}]},
        "p": [[1.0], [0.0], [-1.0]],
        "balanced": true
    });
    let path = write_scenario(dir.path(), "tree.json", sc);
    let out = run(&["synthesize", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["cycle_edges"], serde_json::json!([]));
    for ctrl in v["controllers"].as_array().unwrap() {
        assert_eq!(ctrl["dynamic"], serde_json::json!(true));
    }
}

// ---------------------------------------------------------------------------
// simulate

#[test]
fn simulate_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        scenario_path("triangle_balanced.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("result: PASS"));

    let csv = std::fs::read_to_string(dir.path().join("triangle_balanced.csv")).unwrap();
    assert!(
        csv.starts_with("t,x_1,x_2,x_3,z_1,z_2,z_3,lambda_1,lambda_2,lambda_3,V,mass,imbalance")
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("triangle_balanced.report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["passed"], serde_json::json!(true));
    assert!(report["certificate"]["z_tail_sup"].as_f64().unwrap() <= 1e-6);
    assert!(report["checks"].as_array().unwrap().len() >= 3);
}

#[test]
fn simulate_is_byte_deterministic() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = run(&[
            "simulate",
            scenario_path("triangle_saturated.json").to_str().unwrap(),
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    for file in ["triangle_saturated.csv", "triangle_saturated.report.json"] {
        let a = std::fs::read(d1.path().join(file)).unwrap();
        let b = std::fs::read(d2.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn simulate_zero_disturbance_consensus_start_gives_zero_z_column() {
    let dir = tempfile::tempdir().unwrap();
    let sc = serde_json::json!({
        "name": "quiet",
        "graph": {"nodes": 3, "edges": [[2, 1], [3, 2], [1, 3]]},
        "signals": {"specs": [{"offset": 0.0, "harmonics": [{"amp": 0.0, "omega": 1.0, "phase": 0.0}]}]},
        "p": [[1.0], [-1.0], [0.0]],
        "balanced": true,
        "controller": {"kind": "internal_model"},
        "x0": [1.0, 1.0, 1.0],
        "sim": {"step": 1e-3, "horizon": 5.0, "record_stride": 100},
        "certificates": {"z_tail_tol": 0.0}
    });
    let path = write_scenario(dir.path(), "quiet.json", sc);
    let out = run(&[
        "simulate",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("quiet.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        for z in &fields[4..7] {
            assert_eq!(z.parse::<f64>().unwrap(), 0.0, "nonzero z in {line}");
        }
    }
}

#[test]
fn simulate_honors_step_and_horizon_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        scenario_path("triangle_balanced.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--horizon",
        "50",
        "--step",
        "2e-3",
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["horizon"], serde_json::json!(50.0));
    assert_eq!(report["step"], serde_json::json!(2e-3));
    // 50 s at step 2e-3 and stride 10: 2500 strided samples, plus t = 0.
    assert_eq!(report["samples"], serde_json::json!(2501));
}

#[test]
fn simulate_fails_certificate_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = triangle_scenario("tight_tol");
    // Demand an unattainably small residual on a short run.
    sc["sim"]["horizon"] = serde_json::json!(5.0);
    sc["certificates"]["z_tail_tol"] = serde_json::json!(1e-15);
    let path = write_scenario(dir.path(), "tight.json", sc);
    let out = run(&[
        "simulate",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "stdout: {}", stdout(&out));
    assert!(stdout(&out).contains("result: FAIL"));
}

// ---------------------------------------------------------------------------
// exit-code contract

#[test]
fn invalid_json_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"name\": \n oops").unwrap();
    let out = run(&["synthesize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));
}

#[test]
fn unknown_field_exits_2_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = triangle_scenario("typo");
    sc["grpah"] = sc["graph"].clone();
    let path = write_scenario(dir.path(), "typo.json", sc);
    let out = run(&["synthesize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("grpah"), "{}", stderr(&out));
}

#[test]
fn disconnected_graph_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = triangle_scenario("disconnected");
    sc["graph"]["edges"] = serde_json::json!([[2, 1]]);
    let path = write_scenario(dir.path(), "disc.json", sc);
    let out = run(&["synthesize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("connected"), "{}", stderr(&out));
}

#[test]
fn declared_balance_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = triangle_scenario("misdeclared");
    sc["balanced"] = serde_json::json!(false);
    let path = write_scenario(dir.path(), "mis.json", sc);
    let out = run(&["synthesize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("balanced"), "{}", stderr(&out));
}

#[test]
fn infeasible_saturation_exits_3_before_integrating() {
    let dir = tempfile::tempdir().unwrap();
    let sc = serde_json::json!({
        "name": "infeasible",
        "graph": {"nodes": 3, "edges": [[2, 1], [3, 2], [1, 3]]},
        "signals": {"specs": [{"offset": 3.0, "harmonics": [{"amp": 1.0, "omega": 1.0, "phase": 0.0}]}]},
        "p": [[1.0], [-1.0], [0.0]],
        "constraint": {"type": "edge_saturation", "c": 1.0},
        "balanced": true,
        "controller": {"kind": "saturation", "gamma": 8.0, "e0": [0.0, 0.0, 0.0], "rho": 2.0},
        "x0": [0.0, 0.0, 0.0],
        "sim": {"step": 1e-3, "horizon": 20.0}
    });
    let path = write_scenario(dir.path(), "infeasible.json", sc);
    let out = run(&[
        "simulate",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(
        !dir.path().join("infeasible.csv").exists(),
        "rejected before integration"
    );
}

#[test]
fn overflow_exits_4_with_escape_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = triangle_scenario("guarded");
    sc["sim"]["overflow_guard"] = serde_json::json!(0.5);
    let path = write_scenario(dir.path(), "guarded.json", sc);
    let out = run(&[
        "simulate",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("at t ="), "{}", stderr(&out));
}

// ---------------------------------------------------------------------------
// verify

#[test]
fn verify_convergence_suite_passes_with_seed_7() {
    let out = run(&["verify", "theorem1", "--seed", "7"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("20/20"), "{}", stdout(&out));
}

#[test]
fn verify_feedforward_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify",
        "lemma1",
        "--seed",
        "7",
        "--format",
        "json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["passed"], serde_json::json!(true));
    assert_eq!(v["seed"], serde_json::json!(7));
    let on_disk: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("lemma1.report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v, on_disk);
}

#[test]
fn verify_unknown_suite_exits_2() {
    let out = run(&["verify", "nosuch"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown suite"), "{}", stderr(&out));
}

#[test]
fn verify_replication_suite_passes_with_seed_1() {
    let out = run(&["verify", "lemma3", "--seed", "1"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
}
