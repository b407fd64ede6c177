use std::path::PathBuf;
use std::process::{Command, Output};

fn sfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfp")).args(args).output().expect("binary runs")
}

fn write(name: &str, json: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn record(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn gw_on_one_pair_is_the_pair_distance() {
    let p = write("one_pair.json", r#"{"points": [[0, 0], [3, 4], [10, 10]], "pairs": [[0, 1]]}"#);
    let r = record(&sfp(&["solve", p.to_str().unwrap(), "--solver", "gw"]));
    assert_eq!(r["cost"], 5_000_000);
    assert_eq!(r["cost_units"], 5.0);
    assert_eq!(r["feasible"], true);
}

#[test]
fn compare_reports_gw_within_twice() {
    let mut paths = Vec::new();
    for seed in 0..3 {
        let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("cmp{seed}.json"));
        let out = sfp(&["gen", "--pairs", "2", "--extra", "2", "--seed", &seed.to_string(), "--out", p.to_str().unwrap()]);
        assert!(out.status.success());
        paths.push(p);
    }
    let mut args = vec!["compare", "--trials", "2"];
    args.extend(paths.iter().map(|p| p.to_str().unwrap()));
    let out = sfp(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_reader(&out.stdout[..]);
    let head = rd.headers().unwrap().clone();
    let col = head.iter().position(|h| h == "gw_ratio").unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let r: f64 = row[col].parse().unwrap();
        assert!((1.0..=2.0).contains(&r));
    }
}

#[test]
fn nets_suite_passes() {
    let out = sfp(&["validate", "--suite", "nets", "--instances", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn same_seed_same_output() {
    let p = write("det.json", r#"{"points": [[0, 0], [4, 0], [0, 3], [9, 9], [8, 1]], "pairs": [[0, 3], [1, 2]]}"#);
    let run = || sfp(&["solve", p.to_str().unwrap(), "--seed", "7", "--trials", "2"]);
    let (a, b) = (run(), run());
    record(&a);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bad_instance_fails() {
    let p = write("bad.json", r#"{"points": [[0, 0]], "pairs": [[0, 5]]}"#);
    assert!(!sfp(&["solve", p.to_str().unwrap()]).status.success());
}
