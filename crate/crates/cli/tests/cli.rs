use std::path::Path;
use std::process::{Command, Output};

use tactile_ra::scenario::{ScenarioConfig, TeleoperatorPlacement};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile-ra"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Two cells, one user each, one subcarrier per direction.
fn tiny_config(dir: &Path) -> String {
    let mut c = ScenarioConfig {
        num_sbs: 1,
        users_per_bs_per_service: 1,
        num_ul_subcarriers: 1,
        num_dl_subcarriers: 1,
        teleoperator_placement: TeleoperatorPlacement::Home,
        ..ScenarioConfig::default()
    };
    c.services[0].chain.truncate(1);
    let path = dir.join("tiny.toml");
    std::fs::write(&path, c.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_defaults_and_rejects_bad_config() {
    let ok = cli(&["validate"]);
    assert!(ok.status.success());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = ScenarioConfig::default().to_toml().unwrap().replace("num_sbs = 4", "num_sbs = 0");
    std::fs::write(&bad, text).unwrap();
    let out = cli(&["validate", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_sbs"));
}

#[test]
fn printed_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    let p = path.to_str().unwrap();
    assert!(cli(&["generate", "--print-config", "--out", p]).status.success());
    assert!(cli(&["validate", "--config", p]).status.success());
}

#[test]
fn generated_frame_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let frame = dir.path().join("frame.toml");
    let f = frame.to_str().unwrap();
    let gen = cli(&["generate", "--config", &cfg, "--seed", "5", "--format", "structured", "--out", f]);
    assert!(gen.status.success());
    assert!(cli(&["validate", "--scenario", f]).status.success());

    let solved = cli(&["solve", "--scenario", f, "--mode", "both", "--format", "structured"]);
    assert!(solved.status.success(), "{}", String::from_utf8_lossy(&solved.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&solved)).unwrap();
    let runs = v.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["mode"]["kind"], "joint");
    assert_eq!(runs[1]["mode"]["kind"], "separate");
}

#[test]
fn sweep_table_has_header_and_one_line_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = cli(&[
        "sweep", "--config", &cfg, "--axis", "e2e_delay", "--values", "5,2", "--seeds", "0..=2", "--mode", "both",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,mode,seed,cost,power_cost,exec_cost,feasible,iters,wall_ms");
    assert_eq!(lines.len(), 1 + 2 * 2 * 3);
    assert!(lines[1].starts_with("2.0,ja,0,"));
    assert!(lines[12].starts_with("5.0,sa,2,"));

    let again = cli(&[
        "sweep", "--config", &cfg, "--axis", "e2e_delay", "--values", "2,5", "--seeds", "0..3", "--mode", "both",
        "--workers", "1",
    ]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn oracle_reports_both_costs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = cli(&["oracle", "--config", &cfg, "--format", "structured"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["oracle_feasible"], true);
    assert_eq!(v["oracle_audit_passed"], true);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!cli(&["sweep", "--axis", "bogus", "--values", "1"]).status.success());
    assert!(!cli(&["sweep", "--axis", "num_bs", "--values", "1", "--seeds", "3..3"]).status.success());
    assert!(!cli(&["sweep", "--axis", "num_bs", "--values", "0", "--seeds", "0"]).status.success());
    assert!(!cli(&["oracle"]).status.success());
}
