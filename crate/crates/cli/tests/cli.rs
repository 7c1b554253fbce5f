use std::path::Path;
use std::process::{Command, Output};

fn ace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ace")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_problem_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["solve", "--problem", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn unknown_subcommand_and_bad_generator_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ace(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(ace(&["solve", "--gen", "N=4,n=9"], dir.path()).status.code(), Some(2));
    assert_eq!(ace(&["counterexample", "4x4"], dir.path()).status.code(), Some(2));
}

#[test]
fn counterexample_3x3_lands_on_the_wrong_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["counterexample", "3x3", "--out", "ce"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("trajectory: span{e3} -> span{e2} -> span{e2}"), "{text}");
    let summary = read_json(&dir.path().join("ce/summary.json"));
    assert_eq!(summary["status"], "converged_to_other_fixed_point");
}

#[test]
fn counterexample_2x2_is_already_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["counterexample", "2x2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("trajectory: span{e2} -> span{e2}"));
}

#[test]
fn solve_writes_artifacts_and_rate_respects_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["solve", "--gen", "N=32,n=4,gap=0.5,bnorm=1,seed=7", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let s = read_json(&run.join("summary.json"));
    assert_eq!(s["status"], "converged_to_truth");
    let rate = s["estimated_rate"].as_f64().unwrap();
    assert!(rate <= s["gamma_bound"].as_f64().unwrap());
    assert!(s["final_distance"].as_f64().unwrap() < 1e-10);

    let csv = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    let iters = s["iters"].as_u64().unwrap() as usize;
    assert_eq!(csv.lines().count(), iters + 2);
    assert!(run.join("manifest.json").exists());
}

#[test]
fn max_iter_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["solve", "--gen", "N=16,n=3,gap=0.2,bnorm=1,seed=1", "--max-iter", "2", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(read_json(&dir.path().join("o/summary.json"))["status"], "max_iter");
}

#[test]
fn replay_reproduces_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["solve", "--gen", "N=16,n=3,gap=1,bnorm=1,seed=3,field=complex", "--init", "random:5", "--out", "a"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = ace(&["replay", "a/manifest.json", "--out", "b"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for f in ["trace.csv", "summary.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn sweep_is_identical_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["sweep", "--N", "12", "-n", "2", "--gaps", "0.5,2", "--seeds", "0..3"];
    let par = ace(&[&base[..], &["--out", "p"]].concat(), dir.path());
    let seq = ace(&[&base[..], &["--out", "s", "--sequential"]].concat(), dir.path());
    assert_eq!(par.status.code(), Some(0));
    assert_eq!(seq.status.code(), Some(0));
    let p = std::fs::read_to_string(dir.path().join("p/rates.csv")).unwrap();
    let s = std::fs::read_to_string(dir.path().join("s/rates.csv")).unwrap();
    assert_eq!(p, s);
    assert_eq!(p.lines().count(), 1 + 2 * 3);
}

#[test]
fn analyze_reports_unique_stable_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["analyze", "--gen", "N=8,n=2,gap=0.1,bnorm=3,seed=2", "--out", "an"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fps = read_json(&dir.path().join("an/fixed_points.json"));
    let text = fps.to_string();
    assert_eq!(text.matches("\"stable\"").count(), 1, "{text}");
    let g = read_json(&dir.path().join("an/gamma_bounds.json"));
    assert!(g["gamma_exact"].as_f64().unwrap() <= g["bound_schur"].as_f64().unwrap() + 1e-10);
}

#[test]
fn verify_exit_code_tracks_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = ace(&["verify", "--quick", "--json", "v.json"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    let any_fail = text.lines().any(|l| l.starts_with("FAIL"));
    assert_eq!(out.status.code(), Some(if any_fail { 1 } else { 0 }));
    let checks = read_json(&dir.path().join("v.json"));
    assert!(checks.as_array().is_some_and(|a| !a.is_empty()));
}
