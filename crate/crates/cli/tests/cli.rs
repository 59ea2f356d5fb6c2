use std::path::Path;
use std::process::{Command, Output};

fn dlsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsched"))
        .args(args)
        .env_remove("DLSCHED_PRESET_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn presets_are_listed() {
    let o = dlsched(&["presets"]);
    assert!(o.status.success());
    let names = stdout(&o);
    for n in [
        "table1",
        "table2-geometric",
        "table2-uniform",
        "table2-poisson",
        "appendix-a",
        "single-user",
    ] {
        assert!(names.lines().any(|l| l == n), "{n} missing");
    }
}

#[test]
fn single_user_summary_respects_budget() {
    let o = dlsched(&[
        "single",
        "--preset",
        "single-user",
        "--horizon",
        "50000",
        "--trials",
        "2",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    let col = |name: &str| {
        row[header.iter().position(|h| *h == name).unwrap()]
            .parse::<f64>()
            .unwrap()
    };
    assert_eq!(col("v"), 10.0);
    assert!(col("power_mean") <= 2.0 + 0.05);
    assert!(col("throughput_mean") > 4.0);
}

#[test]
fn same_flags_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let series = dir.path().join(format!("{name}.series"));
        let o = dlsched(&[
            "sweep-v",
            "--preset",
            "table1",
            "--v-grid",
            "1,70",
            "--horizon",
            "20000",
            "--trials",
            "3",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
            "--series",
            series.to_str().unwrap(),
            "--thin",
            "100",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(out).unwrap(), std::fs::read(series).unwrap())
    };
    let (a, sa) = run("a.csv");
    let (b, sb) = run("b.csv");
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);
}

#[test]
fn oracle_reports_table1_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let lp = dir.path().join("t1.lp");
    let o = dlsched(&[
        "oracle",
        "--preset",
        "table1",
        "--export-lp",
        lp.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(field(&text, "constraints"), 258.0);
    assert_eq!(field(&text, "variables"), 5984.0);
    assert!((field(&text, "opt_value") - 4.9302683234004965).abs() < 1e-9);
    let exported = std::fs::read_to_string(lp).unwrap();
    assert!(exported.starts_with("\\"));
    assert!(exported.contains("normalization:"));
}

#[test]
fn oracle_json_for_two_queues() {
    let o = dlsched(&["oracle", "--preset", "appendix-a", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["opt_value"].as_f64().unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn appendix_a_prints_exact_values() {
    let o = dlsched(&["appendix-a", "--horizon", "100000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let exact: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!((exact[0] - 0.7).abs() < 1e-10);
    assert!((exact[1] - 0.6786).abs() < 5e-5);
    for r in &rows {
        let sim: f64 = r[5].parse().unwrap();
        assert!((sim - r[4].parse::<f64>().unwrap()).abs() < 0.01);
    }
}

#[test]
fn coupling_check_holds() {
    let o = dlsched(&[
        "coupling-check",
        "--lambdas",
        "0.2,0.4,0.7",
        "--servers",
        "2",
        "--seeds",
        "5",
        "--horizon",
        "20000",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("verdict HOLDS"));
    let p = dlsched(&[
        "coupling-check",
        "--lambdas",
        "0.2,0.4,0.7",
        "--policy",
        "priority:3,1,2",
        "--seeds",
        "2",
    ]);
    assert!(p.status.success());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(
        dlsched(&["coupling-check", "--lambdas", "0.7,0.2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(dlsched(&["multi"]).status.code(), Some(1));
    assert_eq!(dlsched(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        dlsched(&["multi", "--preset", "table1", "--mode", "bogus"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn domain_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"users":[{"lambda":2.0,"mean_packets":4,"weight":1,
            "actions":[{"id":0,"power":0,"success_prob":0},{"id":1,"power":1,"success_prob":0.2}]}],
            "servers":1,"power_budget":1,"tradeoff_v":1}"#,
    )
    .unwrap();
    assert_eq!(
        dlsched(&["multi", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        dlsched(&["multi", "--config", "/definitely/missing.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        dlsched(&["single", "--preset", "table1", "--horizon", "10"])
            .status
            .code(),
        Some(1)
    );
}

fn write_preset(dir: &Path) {
    let text = r#"{"name":"tiny","policy":"lyapunov-index","horizon":1000,"trials":1,
        "config":{"users":[
            {"lambda":0.5,"mean_packets":2,"weight":1,"actions":[{"id":0,"power":0,"success_prob":0},{"id":1,"power":1,"success_prob":0.4}]},
            {"lambda":0.3,"mean_packets":3,"weight":2,"actions":[{"id":0,"power":0,"success_prob":0},{"id":1,"power":2,"success_prob":0.2}]}],
            "servers":1,"power_budget":1,"tradeoff_v":5}}"#;
    std::fs::write(dir.join("tiny.json"), text).unwrap();
}

#[test]
fn preset_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_preset(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_dlsched"))
        .args(["multi", "--preset", "tiny"])
        .env("DLSCHED_PRESET_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("5,1,1000,"));
    assert_eq!(
        dlsched(&["multi", "--preset", "tiny"]).status.code(),
        Some(1)
    );
}
