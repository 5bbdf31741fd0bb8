//! End-to-end runs of the binary against the bundled scenarios.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codesign")).args(args).output().expect("binary runs")
}

fn run_path(args: &[&str], path: &Path) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--scenario", path.to_str().unwrap()]);
    run(&all)
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_temp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn basis_design_is_uniform_with_certificate_equal_to_dimension() {
    let r = json(&run_path(&["design", "solve"], &scenario("basis3")));
    for p in floats(&r["pi"]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-9);
    }
    assert!((r["certificate"].as_f64().unwrap() - 3.0).abs() < 1e-9);
}

#[test]
fn planar_design_certificate_is_two() {
    let r = json(&run_path(&["design", "solve"], &scenario("angle_fed")));
    assert!((r["certificate"].as_f64().unwrap() - 2.0).abs() < 1e-6);
}

#[test]
fn rank_deficient_space_is_a_validation_error() {
    let out = run_path(&["design", "solve"], &scenario("rank_deficient"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("span"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn infomax_publishes_w_max_with_tight_participation() {
    let r = json(&run_path(&["game", "solve"], &scenario("angle_infomax")));
    let published = floats(&r["scenario"]["mechanism"]["w_max"]);
    assert_eq!(r["scenario"]["mechanism"]["name"], "infomax");
    for s in floats(&r["max_information"]["ir_slack"]) {
        assert!(s.abs() <= 1e-5, "slack {s}");
    }
    let w = floats(&r["equilibrium"]["w"]);
    for (a, b) in w.iter().zip(&published) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn costly_redundant_agent_free_rides() {
    let r = json(&run_path(&["game", "solve"], &scenario("free_riding")));
    let w = floats(&r["equilibrium"]["w"]);
    assert!(w[3] < 1e-6, "{w:?}");
    let riders = r["free_riders"].as_array().unwrap();
    assert_eq!(riders.len(), 1);
    assert_eq!(riders[0], 3);
}

#[test]
fn reports_reload_to_identical_equilibria() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    for (from, to) in [(scenario("angle_infomax"), &first), (first.clone(), &second)] {
        let out = run(&["game", "solve", "--scenario", from.to_str().unwrap(), "--out", to.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a: Value = serde_json::from_str(&std::fs::read_to_string(&first).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&std::fs::read_to_string(&second).unwrap()).unwrap();
    assert_eq!(a["equilibrium"], b["equilibrium"]);
    assert_eq!(a["scenario"], b["scenario"]);
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let r = json(&run(&["game", "solve", "--seed", "42", "--scenario", scenario("basis3").to_str().unwrap()]));
    assert_eq!(r["scenario"]["seed"], 42);
}

#[test]
fn verify_accepts_reports_and_rejects_perturbed_designs() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "game",
        "solve",
        "--scenario",
        scenario("angle_fed").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let r = json(&run_path(&["game", "verify"], &report));
    assert_eq!(r["design_source"], "report");
    assert_eq!(r["is_equilibrium"], true);

    let text = std::fs::read_to_string(scenario("angle_fed")).unwrap();
    let off = text.replacen('{', r#"{"design": [1.0, 1.0, 1.0],"#, 1);
    let r = json(&run_path(&["game", "verify"], &write_temp(&dir, "off.json", &off)));
    assert_eq!(r["design_source"], "scenario");
    assert_eq!(r["is_equilibrium"], false);
}

fn csv_rows(out: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn sweep(path: &Path, param: &str, range: &str, mechanisms: Option<&str>) -> Output {
    let mut args = vec!["sweep", "--scenario", path.to_str().unwrap(), "--param", param, "--range", range];
    if let Some(m) = mechanisms {
        args.extend(["--mechanisms", m]);
    }
    run(&args)
}

#[test]
fn angle_sweep_infomax_never_trails_fed() {
    let out = sweep(&scenario("angle_fed"), "angle[0]", "0.1:1.47:20", Some("fed,infomax"));
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 40);
    let info = header.iter().position(|h| h == "total_information").unwrap();
    let total = header.iter().position(|h| h == "total_contribution").unwrap();
    for pair in rows.chunks(2) {
        assert_eq!((pair[0][1].as_str(), pair[1][1].as_str()), ("fed", "infomax"));
        assert_eq!(pair[0][0], pair[1][0]);
        let get = |r: &Vec<String>, c: usize| r[c].parse::<f64>().unwrap();
        assert!(get(&pair[1], info) >= get(&pair[0], info) - 1e-9);
        assert!(get(&pair[1], total) >= get(&pair[0], total) - 1e-9);
        assert!(pair.iter().all(|r| r.last().unwrap() == "true"));
    }
}

#[test]
fn cost_sweep_follows_the_interior_closed_form() {
    // with the angled point at 45 degrees and c1 = 2 the interior equilibrium
    // is w1 = 2(c2 - c1)/den, w2 = w3 = c1/den, den = c1(2 c2 - c1)
    let out = sweep(&scenario("angle_fed"), "costs[1]", "2:6:9", None);
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 9);
    let c1 = 2.0;
    for r in &rows {
        let c2: f64 = r[0].parse().unwrap();
        let den = c1 * (2.0 * c2 - c1);
        let expected = [2.0 * (c2 - c1) / den, c1 / den, c1 / den];
        for (j, e) in expected.iter().enumerate() {
            let got: f64 = r[2 + j].parse().unwrap();
            assert!((got - e).abs() < 1e-6, "w_{} = {got}, expected {e} at c2 = {c2}", j + 1);
        }
    }
}

#[test]
fn csv_columns_depend_only_on_problem_size() {
    let a = csv_rows(&sweep(&scenario("angle_fed"), "costs[0]", "1:2:2", Some("fed"))).0;
    let b = csv_rows(&sweep(&scenario("angle_infomax"), "points[1][1]", "0.1:0.2:3", Some("infomax,eff"))).0;
    assert_eq!(a, b);
    let expected = "param_value,mechanism,w_1,w_2,w_3,total_contribution,total_information,u_1,u_2,converged";
    assert_eq!(a.join(","), expected);
}

#[test]
fn narrow_sweep_still_has_both_ends() {
    let out = sweep(&scenario("angle_fed"), "angle[0]", "0.785:0.7850001:2", Some("fed,infomax,eff"));
    assert_eq!(csv_rows(&out).1.len(), 6);
}

#[test]
fn failing_grid_points_are_reported_not_dropped() {
    let out = sweep(&scenario("angle_fed"), "costs[0]", "-1:1:3", Some("fed"));
    assert_eq!(out.status.code(), Some(3));
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 3);
    let flags: Vec<&str> = rows.iter().map(|r| r.last().unwrap().as_str()).collect();
    assert_eq!(flags, ["false", "false", "true"]);
    assert_eq!(rows[0][2], "NaN");
}

#[test]
fn bad_sweep_arguments_are_validation_errors() {
    for (param, range) in [("costs[9]", "1:2:3"), ("cost[0]", "1:2:3"), ("costs[0]", "2:1:3"), ("costs[0]", "1:2:1")] {
        let out = sweep(&scenario("angle_fed"), param, range, None);
        assert_eq!(out.status.code(), Some(2), "{param} {range}");
    }
    let out = sweep(&scenario("angle_fed"), "costs[0]", "1:2:3", Some("fed,bogus"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fairness_needs_identical_points() {
    let out = run_path(&["analyze", "fairness"], &scenario("angle_fed"));
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn infomax_is_fair_where_federated_play_is_not() {
    let r = json(&run_path(&["analyze", "fairness"], &scenario("exchangeable")));
    assert!(r["violations"].as_array().unwrap().is_empty(), "{}", r["violations"]);

    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("exchangeable")).unwrap().replace("auto-infomax", "fed");
    let r = json(&run_path(&["analyze", "fairness"], &write_temp(&dir, "fed.json", &text)));
    assert!(!r["violations"].as_array().unwrap().is_empty());
}

#[test]
fn a_single_agent_has_no_price_of_anarchy() {
    let r = json(&run_path(&["analyze", "poa"], &scenario("single_agent")));
    assert!((r["price_of_anarchy"]["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn equal_cost_federated_play_is_efficient() {
    let r = json(&run_path(&["analyze", "efficiency"], &scenario("basis3")));
    assert_eq!(r["efficiency"]["is_proportional_to_pi_star"], true);
}

#[test]
fn twin_space_rider_holds_no_mass() {
    let r = json(&run_path(&["analyze", "freeride"], &scenario("twin")));
    let riders = r["free_riders"].as_array().unwrap();
    assert_eq!(riders.len(), 1);
    assert_eq!(riders[0]["agent"], 1);
    assert!(riders[0]["mass"].as_f64().unwrap() < 1e-7);
}

#[test]
fn unknown_fields_and_bad_files_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("basis3")).unwrap();
    let cases = [
        text.replacen('{', r#"{"colour": "red","#, 1),
        text.replacen('{', r#"{"solver": {"tolerance": 1},"#, 1),
        text.replacen('{', r#"{"mechanism": {"name": "fed", "w_max": [1, 1, 1]},"#, 1),
        text.replacen('{', r#"{"mechanism": "bogus","#, 1),
        text.replace("[1, 1, 1]}", "[1, 1]}"),
        "{not json".to_string(),
    ];
    for (i, case) in cases.iter().enumerate() {
        let out = run_path(&["game", "solve"], &write_temp(&dir, &format!("case{i}.json"), case));
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", stderr(&out));
    }
    let out = run(&["game", "solve", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_dynamics_exit_three_after_writing_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("angle_fed")).unwrap();
    let capped = text.replacen('{', r#"{"solver": {"max_rounds": 1},"#, 1);
    let out = run_path(&["game", "solve"], &write_temp(&dir, "capped.json", &capped));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["equilibrium"]["converged"], false);
}
