use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csflow::config::DEFAULT_CONFIG;
use serde_json::Value;
use tempfile::TempDir;

fn csflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csflow"))
        .args(args)
        .env_remove("CSFLOW_SEED")
        .output()
        .expect("spawn csflow")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// Writes the default config with `key = value` lines replaced. A key may
/// be qualified as `section.key` when the bare name is ambiguous.
fn config(dir: &TempDir, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = DEFAULT_CONFIG.to_string();
    for (key, value) in edits {
        let (section, bare) = match key.split_once('.') {
            Some((sec, k)) => (Some(sec), k),
            None => (None, *key),
        };
        let mut current = String::new();
        let mut hits = 0;
        let lines: Vec<String> = text
            .lines()
            .map(|l| {
                let t = l.trim();
                if t.starts_with('[') && t.ends_with(']') {
                    current = t[1..t.len() - 1].to_string();
                }
                let k = l.split('=').next().unwrap_or("").trim();
                if k == bare && l.contains('=') && section.is_none_or(|sec| sec == current) {
                    hits += 1;
                    format!("{bare} = {value}")
                } else {
                    l.to_string()
                }
            })
            .collect();
        assert_eq!(hits, 1, "key {key} must match exactly one line");
        text = lines.join("\n");
    }
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn first_line(p: &Path) -> String {
    fs::read_to_string(p).unwrap().lines().next().unwrap_or("").to_string()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn tabulate_writes_pinned_header_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = csflow(&["tabulate", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("pass"));
    assert_eq!(code(&csflow(&["tabulate", s(&cfg), "--out", s(&b)])), 0);
    assert_eq!(first_line(&a.join("flow_table.csv")), "m2,G,sigma,A2");
    let rows = fs::read_to_string(a.join("flow_table.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 101);
    assert_eq!(rows, fs::read_to_string(b.join("flow_table.csv")).unwrap());
    let log = fs::read_to_string(a.join("run_log.jsonl")).unwrap();
    let entry: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(entry["command"], "tabulate");
    assert_eq!(entry["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn tabulate_fills_the_kernel_cache_when_enabled() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[("kernel_cache", "true")]);
    let out = tmp.path().join("o");
    assert_eq!(code(&csflow(&["tabulate", s(&cfg), "--out", s(&out)])), 0);
    let n = fs::read_dir(out.join("kernels")).unwrap().count();
    assert_eq!(n, 5 * 3);
}

#[test]
fn missing_config_exits_2() {
    assert_eq!(code(&csflow(&["tabulate", "/nonexistent/csflow.ini"])), 2);
    assert_eq!(code(&csflow(&["solve", "/nonexistent/csflow.ini"])), 2);
    assert_eq!(code(&csflow(&["verify", "/nonexistent/csflow.ini"])), 2);
}

#[test]
fn malformed_config_and_bad_flags_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[("n_phi", "lots")]);
    assert_eq!(code(&csflow(&["tabulate", s(&cfg)])), 2);
    assert_eq!(code(&csflow(&["solve", s(&cfg), "--method", "bisection"])), 2);
    assert_eq!(code(&csflow(&["frobnicate"])), 2);
}

#[test]
fn zero_flow_converges_immediately_for_every_method() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        &tmp,
        "zero.ini",
        &[("alpha", "0.0"), ("psi_ripple", "0.0"), ("beta", "constant")],
    );
    for method in ["nash-moser", "newton", "march"] {
        let out = tmp.path().join(method);
        let o = csflow(&["solve", s(&cfg), "--method", method, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let res = fs::read_to_string(out.join("residuals.csv")).unwrap();
        let lines: Vec<&str> = res.lines().collect();
        assert_eq!(lines[0], "t,res0,res2");
        assert_eq!(lines.len(), 2, "{method}: exactly one residual row");
        assert_eq!(json(&out.join("report.json"))["report"]["iterations"], 0);
    }
}

#[test]
fn failing_sigma_window_exits_4_with_remedy() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "neg.ini", &[("alpha", "-0.25")]);
    let o = csflow(&["solve", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 4);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("remedy"), "{err}");
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn easy_instance_solves_and_reports_final_residual() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[("snapshot_times", "0.5, 2.0")]);
    let out = tmp.path().join("o");
    assert_eq!(code(&csflow(&["solve", s(&cfg), "--out", s(&out)])), 0);
    assert_eq!(first_line(&out.join("solution.csv")), "phi,k,value");
    assert_eq!(first_line(&out.join("residuals.csv")), "t,res0,res2");
    assert!(out.join("snapshot_t0.5000.csv").is_file());
    assert!(out.join("snapshot_t2.0000.csv").is_file());
    let doc = json(&out.join("report.json"));
    assert_eq!(doc["schema"], "v1");
    for key in ["command", "config_hash", "grid", "window", "report"] {
        assert!(doc.get(key).is_some(), "report.json lacks {key}");
    }
    let r = &doc["report"];
    assert_eq!(r["method"], "nash-moser");
    assert_eq!(r["converged"], true);
    assert!(r["res0_final"].as_f64().unwrap() <= r["tolerance"].as_f64().unwrap());
    assert_eq!(doc["window"]["pass"], true);
    let rows = fs::read_to_string(out.join("solution.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 129 * 129);
}

#[test]
fn unconverged_at_t_max_exits_5() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "short.ini", &[("solver.t_max", "0.3")]);
    let o = csflow(&["solve", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 5);
}

#[test]
fn verify_propagators_passes_and_sabotage_exits_6() {
    let tmp = TempDir::new().unwrap();
    let good = config(&tmp, "good.ini", &[]);
    let out = tmp.path().join("good");
    assert_eq!(code(&csflow(&["verify", s(&good), "--suite", "propagators", "--out", s(&out)])), 0);
    let doc = json(&out.join("verify.json"));
    assert_eq!(doc["schema"], "v1");
    assert_eq!(doc["pass"], true);
    assert_eq!(doc["seed"], 20_240_917);
    assert_eq!(doc["suites"][0]["suite"], "propagators");
    assert!(doc["suites"][0]["constants"]["gronwall C"].is_number());

    let bad = config(&tmp, "bad.ini", &[("inject_negative_sigma", "true")]);
    let out = tmp.path().join("bad");
    assert_eq!(code(&csflow(&["verify", s(&bad), "--suite", "linsolve", "--out", s(&out)])), 6);
    assert_eq!(json(&out.join("verify.json"))["pass"], false);
}

#[test]
fn verify_all_aggregates_every_suite() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[]);
    let out = tmp.path().join("o");
    assert_eq!(code(&csflow(&["verify", s(&cfg), "--suite", "all", "--out", s(&out)])), 0);
    let doc = json(&out.join("verify.json"));
    let names: Vec<&str> = doc["suites"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["suite"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["propagators", "flowfn", "graded", "linsolve"]);
    assert_eq!(doc["pass"], true);
}

#[test]
fn seed_override_changes_the_config_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[]);
    let run = |seed: Option<&str>, dir: &str| {
        let out = tmp.path().join(dir);
        let mut c = Command::new(env!("CARGO_BIN_EXE_csflow"));
        c.args(["verify", s(&cfg), "--suite", "flowfn", "--out", s(&out)]);
        match seed {
            Some(v) => c.env("CSFLOW_SEED", v),
            None => c.env_remove("CSFLOW_SEED"),
        };
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        json(&out.join("verify.json"))
    };
    let a = run(None, "a");
    let b = run(Some("7"), "b");
    assert_eq!(b["seed"], 7);
    assert_ne!(a["config_hash"], b["config_hash"]);
}

#[test]
fn report_on_empty_dir_exits_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&csflow(&["report", s(tmp.path())])), 2);
    assert_eq!(code(&csflow(&["report", "/nonexistent/csflow-out"])), 2);
}

#[test]
fn report_summarises_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "c.ini", &[]);
    let out = tmp.path().join("o");
    assert_eq!(code(&csflow(&["tabulate", s(&cfg), "--out", s(&out)])), 0);
    assert_eq!(code(&csflow(&["solve", s(&cfg), "--out", s(&out)])), 0);

    let first = csflow(&["report", s(&out)]);
    assert_eq!(code(&first), 0);
    let read = |name: &str| fs::read(out.join(name)).unwrap();
    let files = [
        "summary.txt",
        "plots/flow.dat",
        "plots/residuals.dat",
        "plots/solution_slices.dat",
        "plots/solution_surface.dat",
    ];
    let snapshot: Vec<Vec<u8>> = files.iter().map(|f| read(f)).collect();
    let second = csflow(&["report", s(&out)]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(snapshot, files.iter().map(|f| read(f)).collect::<Vec<_>>());

    let summary = String::from_utf8(read("summary.txt")).unwrap();
    assert!(summary.contains("iterations = "), "{summary}");
    assert!(summary.contains("final seminorms"), "{summary}");
}
