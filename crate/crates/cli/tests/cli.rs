use std::path::Path;
use std::process::{Command, Output};

fn greensplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greensplit"))
        .args(args)
        .env_remove("GREENSPLIT_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), stderr(out));
}

fn assert_validation_error(out: &Output) {
    assert_eq!(out.status.code(), Some(2), "{}", stderr(out));
    assert!(stderr(out).contains("error class=ValidationError"), "{}", stderr(out));
}

/// Data rows of a CSV artifact, skipping the provenance comment and column header.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# tool=greensplit "));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn build_validates_builtin_scenarios() {
    for name in ["four_intersections", "single_road"] {
        let out = greensplit(&["build", name, "--validate"]);
        assert_ok(&out);
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
    }
}

#[test]
fn malformed_and_unknown_key_scenarios_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.toml");
    std::fs::write(&garbage, "this is = = not toml").unwrap();
    assert_validation_error(&greensplit(&["build", path_str(&garbage), "--validate"]));

    let exported = dir.path().join("road.toml");
    assert_ok(&greensplit(&["build", "single_road", "--export", path_str(&exported)]));
    let extra = dir.path().join("extra.toml");
    let text = std::fs::read_to_string(&exported).unwrap();
    std::fs::write(&extra, format!("bogus_key = 1\n{text}")).unwrap();
    assert_validation_error(&greensplit(&["build", path_str(&extra), "--validate"]));
}

#[test]
fn exported_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.toml");
    let second = dir.path().join("b.toml");
    assert_ok(&greensplit(&["build", "four_intersections", "--export", path_str(&first)]));
    assert_ok(&greensplit(&["build", path_str(&first), "--export", path_str(&second)]));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn modes_json_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("modes.json");
    assert_ok(&greensplit(&["modes", "single_road", "--out", path_str(&out)]));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["header"]["tool"], "greensplit");
    assert!(doc["body"].is_object());
}

#[test]
fn optimize_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = ["optimize", "single_road", "--starts", "2", "--seed", "7", "--out", path_str(&out)];
        assert_ok(&greensplit(&args));
        std::fs::read(&out).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    assert_eq!(a, b);
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["header"]["seed"], 7);
}

#[test]
fn averaging_error_grows_with_cycle_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("error.csv");
    assert_ok(&greensplit(&["compare-averaging", "single_road", "--cycles", "30,60,120", "--out", path_str(&out)]));
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    let errors: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(errors.len(), 3);
    assert!(errors.windows(2).all(|w| w[0] < w[1]), "{errors:?}");
}

#[test]
fn distributed_trace_schema_and_size_limit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    assert_ok(&greensplit(&["distributed", "single_road", "--agents", "path:3", "--out", path_str(&out)]));
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    // Initial round plus two exchange rounds for three agents.
    assert_eq!(rows.len(), 9);
    let last: Vec<f64> = rows[6..].iter().map(|r| r[2].parse().unwrap()).collect();
    let first: f64 = rows[0][2].parse().unwrap();
    assert!(last.iter().all(|e| *e <= 1e-6 * first.max(1.0)), "{last:?}");

    let big = dir.path().join("big.csv");
    assert_validation_error(&greensplit(&["distributed", "four_intersections", "--out", path_str(&big)]));
}

#[test]
fn simulate_accepts_a_state_file() {
    let dir = tempfile::tempdir().unwrap();
    let exported = dir.path().join("road.toml");
    assert_ok(&greensplit(&["build", "single_road", "--export", path_str(&exported)]));
    let text = std::fs::read_to_string(&exported).unwrap();
    let road = text
        .lines()
        .find_map(|l| l.strip_prefix("id = \""))
        .and_then(|l| l.strip_suffix('"'))
        .expect("road id in export")
        .to_string();
    let state = dir.path().join("x0.toml");
    std::fs::write(&state, format!("[densities]\n{road} = [4.0, 2.0, 1.0]\n")).unwrap();
    let out = dir.path().join("traj.csv");
    let args = ["simulate", "single_road", "--x0", path_str(&state), "--horizon", "50", "--dt", "5", "--out", path_str(&out)];
    let res = greensplit(&args);
    assert_ok(&res);
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn invalid_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_greensplit"))
        .args(["build", "single_road", "--validate"])
        .env("GREENSPLIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_validation_error(&out);
}
