use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn jam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jam")).args(args).env("JAM_COLOR", "0").output().unwrap()
}

fn write(dir: &TempDir, name: &str, src: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, src).unwrap();
    p
}

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(format!("{name}.sexp"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_prints_value() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "p.sexp", "(op + 1 2)");
    let o = jam(&["run", s(&p)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "value 3\n");
}

#[test]
fn run_prints_effects_then_value() {
    let o = jam(&["run", s(&corpus("finally_break"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "this runs\nvalue 10\n");
}

#[test]
fn run_exit_codes() {
    let o = jam(&["run", "--fuel", "10", s(&corpus("divergent/while_true"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).starts_with("timeout"));
    assert_eq!(jam(&["run", s(&corpus("throw_top"))]).status.code(), Some(1));
    assert_eq!(jam(&["run", s(&corpus("break_top_level"))]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.sexp", "(op + 1");
    let o = jam(&["run", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.sexp"));
    let open = write(&dir, "open.sexp", "(app f 1)");
    assert_eq!(jam(&["run", s(&open)]).status.code(), Some(3));
    assert_eq!(jam(&["run", "--fuel", "0", s(&bad)]).status.code(), Some(3));
    assert_eq!(jam(&["run", "/nonexistent.sexp"]).status.code(), Some(3));
    assert_eq!(jam(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(jam(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_trace_lists_states() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "p.sexp", "(op + 1 2)");
    let out = stdout(&jam(&["run", "--trace", s(&p)]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.first(), Some(&"ev (op + 1 2) 0"));
    assert_eq!(lines[lines.len() - 2], "co 3 0");
    assert_eq!(lines.last(), Some(&"value 3"));
}

#[test]
fn analyze_reports_call_targets() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "p.sexp", "(let (f (fun (y) y)) (app f 1))");
    let o = jam(&["analyze", "--policy", "0cfa", s(&p)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // Preorder sites: let 0, fun 1, body y 2, app 3.
    assert_eq!(v["call_targets"], serde_json::json!({"3": [1]}));
    assert_eq!(v["throw_to"], serde_json::json!({}));
    assert_eq!(v["answers"], serde_json::json!(["value num"]));
}

#[test]
fn analyze_with_contexts_keeps_schema() {
    let o0 = jam(&["analyze", "--policy", "0cfa", s(&corpus("k_sensitivity"))]);
    let o1 = jam(&["analyze", "--policy", "kcfa:1", s(&corpus("k_sensitivity"))]);
    let v0: serde_json::Value = serde_json::from_slice(&o0.stdout).unwrap();
    let v1: serde_json::Value = serde_json::from_slice(&o1.stdout).unwrap();
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&v0), keys(&v1));
    assert_eq!(v0["answers"], serde_json::json!(["value \"s\"", "value num"]));
    assert_eq!(v1["answers"], serde_json::json!(["value \"s\""]));
}

#[test]
fn analyze_rejects_unknown_policy() {
    let o = jam(&["analyze", "--policy", "5cfa", s(&corpus("add"))]);
    assert_eq!(o.status.code(), Some(3));
    let o = jam(&["analyze", "--policy", "kcfa:-1", s(&corpus("add"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn analyze_signals_truncation() {
    let o = jam(&["analyze", "--node-budget", "3", s(&corpus("sum_loop"))]);
    assert_eq!(o.status.code(), Some(4));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["truncated"], true);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn analyze_text_to_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("report.txt");
    let o = jam(&["analyze", "--format", "text", "-o", s(&out), s(&corpus("try_catch"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("policy 0cfa\n"));
    assert!(text.contains("throw 1 -> 0\n"));
    assert!(text.contains("answer value num\n"));
}

#[test]
fn graph_dot_marks_root() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "p.sexp", "1");
    let o = jam(&["graph", s(&p)]);
    assert_eq!(o.status.code(), Some(0));
    let dot = stdout(&o);
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("n0 [label=\"#0 ev 1\", peripheries=2, xlabel=\"root\"]"));
}

#[test]
fn graph_json_and_cycles() {
    let o = jam(&["graph", "--format", "json", s(&corpus("divergent/while_true"))]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["answers"], serde_json::json!([]));
    // Some node reaches itself.
    let edges: Vec<(u64, u64)> =
        v["edges"].as_array().unwrap().iter().map(|e| (e["from"].as_u64().unwrap(), e["to"].as_u64().unwrap())).collect();
    let n = v["nodes"].as_array().unwrap().len() as u64;
    let reaches = |from: u64| {
        let mut seen = vec![false; n as usize];
        let mut stack = vec![from];
        while let Some(x) = stack.pop() {
            for &(a, b) in &edges {
                if a == x && !seen[b as usize] {
                    seen[b as usize] = true;
                    stack.push(b);
                }
            }
        }
        seen
    };
    assert!((0..n).any(|i| reaches(i)[i as usize]));
    let dot = stdout(&jam(&["graph", s(&corpus("divergent/while_true"))]));
    assert!(dot.contains("->"));
}

#[test]
fn diff_agrees() {
    let o = jam(&["diff", s(&corpus("finally_break"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "agree: value 10\n");
    assert_eq!(stdout(&jam(&["diff", s(&corpus("add"))])), "agree: value 3\n");
}

#[test]
fn diff_flags_timeouts_as_incomparable() {
    let o = jam(&["diff", "--fuel", "100", s(&corpus("divergent/self_application"))]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).starts_with("incomparable"));
    // Enough fuel for the substitution engine but not the machine.
    let o = jam(&["diff", "--fuel", "450", s(&corpus("sum_loop"))]);
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(stdout(&o), "incomparable: jam timeout after 450 steps\n");
}
