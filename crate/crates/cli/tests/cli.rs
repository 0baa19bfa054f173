use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfeq_cli::{EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};

fn reference_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/s4.json")
}

fn mfeq(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfeq"))
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn edited(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(reference_file()).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn solve_and_simulate_write_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let a = mfeq(&["solve", "--ode-steps", "200"], &reference_file(), &out);
    assert_eq!(a.status.code(), Some(EXIT_OK));
    let b = mfeq(&["simulate", "--agents", "50", "--sim-steps", "100"], &reference_file(), &out);
    assert_eq!(b.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&b.stderr));

    assert_eq!(header(&out.join("riccati.csv")), "t,a00_0_0,a11_0_0,a10_0_0,b0_0,b1_0,c");
    assert_eq!(header(&out.join("paths.csv")), "t,theta_0,theta_hat_0,s_0,x0_0");
    assert_eq!(header(&out.join("clearing.csv")), "t,mean_pi_0");
    assert_eq!(
        header(&out.join("wealth.csv")),
        "agent_id,xi,terminal_wealth,liability,terminal_net,utility,certainty_equivalent"
    );
    assert_eq!(std::fs::read_to_string(out.join("riccati.csv")).unwrap().lines().count(), 202);
    assert_eq!(std::fs::read_to_string(out.join("wealth.csv")).unwrap().lines().count(), 51);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["model"]["gamma"], 1.5);
    assert!(summary["clearing"].is_object());
}

#[test]
fn seed_changes_paths_and_repeat_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = mfeq(&["simulate", "--agents", "20", "--sim-steps", "50", "--seed", seed], &reference_file(), &out);
        assert_eq!(o.status.code(), Some(EXIT_OK));
        std::fs::read(out.join("paths.csv")).unwrap()
    };
    let first = run("a", "3");
    assert_eq!(first, run("b", "3"));
    assert_ne!(first, run("c", "4"));
}

#[test]
fn invalid_input_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = mfeq(&["solve"], &dir.path().join("nope.json"), &out);
    assert_eq!(missing.status.code(), Some(EXIT_INPUT));

    let bad = edited(dir.path(), |v| v["population"]["xi_var"] = (-1.0).into());
    assert_eq!(mfeq(&["solve"], &bad, &out).status.code(), Some(EXIT_INPUT));

    let steps = mfeq(&["solve", "--ode-steps", "1"], &reference_file(), &out);
    assert_eq!(steps.status.code(), Some(EXIT_INPUT));
}

#[test]
fn blow_up_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), |v| v["run"]["blowup_bound"] = 0.5.into());
    let o = mfeq(&["solve", "--ode-steps", "100"], &path, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(EXIT_NUMERICAL), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_exits_cleanly() {
    let o = Command::new(env!("CARGO_BIN_EXE_mfeq")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["solve", "simulate", "verify", "clearing-scaling"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn verify_reports_every_check_passing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mfeq(&["verify"], &reference_file(), &out);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stdout));
    let report = std::fs::read_to_string(out.join("verify.tsv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("name\tvalue\tthreshold\tresult"));
    let rows: Vec<_> = lines.collect();
    assert!(rows.len() >= 15);
    assert!(rows.iter().all(|r| r.ends_with("PASS")), "{report}");
}

#[test]
fn stiff_economy_on_coarse_grid_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), |v| v["model"]["gamma"] = 8.0.into());
    let o = mfeq(&["verify", "--ode-steps", "2000", "--sim-steps", "400"], &path, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(mfeq_cli::EXIT_VERIFY));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
