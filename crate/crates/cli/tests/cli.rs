use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pubc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pubc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = pubc(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn gen_data_writes_count_per_source() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gen-data", "E+W", "5", "--out", "d.jsonl"], dir.path());
    assert!(stdout.contains("trajectories=10"), "{stdout}");
    assert!(stdout.contains("label=ExpertA count=5") && stdout.contains("label=Weak count=5"));
    let text = read(dir.path().join("d.jsonl"));
    assert_eq!(text.lines().count(), 11);
    assert!(dir.path().join("d.jsonl.config.txt").exists());
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+N", "3", "--out", "a.jsonl", "--seed", "4"], dir.path());
    ok(&["gen-data", "E+N", "3", "--out", "b.jsonl", "--seed", "4"], dir.path());
    ok(&["gen-data", "E+N", "3", "--out", "c.jsonl", "--seed", "5"], dir.path());
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_ne!(a, fs::read(dir.path().join("c.jsonl")).unwrap());
}

#[test]
fn invalid_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pubc(&["gen-data", "X+Y", "5", "--out", "d.jsonl"], dir.path());
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage: pubc gen-data"), "{err}");
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "k=3\nensemble=5\n").unwrap();
    let out = pubc(&["gen-data", "E", "2", "--out", "d.jsonl", "--config", "c.txt"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ensemble"));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pubc(&["filter", "nope.jsonl", "--out", "f"], dir.path())), 3);
    assert_eq!(code(&pubc(&["eval", "nope.json", "--out", "e"], dir.path())), 3);
    fs::write(dir.path().join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(&pubc(&["train-bc", "bad.jsonl", "--out", "b"], dir.path())), 3);
    assert_eq!(code(&pubc(&["report", "missing_dir"], dir.path())), 3);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "# run\nk=5\ntolerance=0.05\nseed=8\n").unwrap();
    ok(&["gen-data", "E+N", "10", "--out", "d.jsonl"], dir.path());
    ok(
        &["filter", "d.jsonl", "--out", "f", "--config", "c.txt", "--k", "1", "--max-iters", "1"],
        dir.path(),
    );
    let echoed = read(dir.path().join("f/config.txt"));
    assert!(echoed.lines().any(|l| l == "k=1"), "{echoed}");
    assert!(echoed.lines().any(|l| l == "tolerance=0.05"));
    assert!(echoed.lines().any(|l| l == "seed=8"));
    assert!(echoed.lines().any(|l| l == "max_iters=1"));
    assert!(echoed.lines().any(|l| l == "poly_order=10"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+W", "10", "--out", "d.jsonl", "--seed", "2"], dir.path());
    ok(&["filter", "d.jsonl", "--out", "a", "--seed", "6", "--epochs", "5"], dir.path());
    ok(&["filter", "d.jsonl", "--out", "b", "--config", "a/config.txt"], dir.path());
    for f in ["positives.txt", "convergence.csv", "config.txt"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn filter_outputs_and_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+N", "20", "--out", "d.jsonl", "--seed", "1"], dir.path());
    let stdout = ok(&["filter", "d.jsonl", "--out", "f", "--seed", "1"], dir.path());
    let f = dir.path().join("f");
    let conv = read(f.join("convergence.csv"));
    assert!(conv.starts_with("iteration,TP,FP,FN,TN,threshold,positives\n"));
    let iterations = conv.lines().count() - 1;
    assert!(iterations >= 1);
    for i in 1..=iterations {
        let h = read(f.join(format!("histogram_iter{i}.csv")));
        assert!(h.starts_with("bin_center,count,fitted_value\n"));
        assert_eq!(h.lines().count(), 51);
    }
    let metrics = read(f.join("metrics.csv"));
    assert!(metrics.starts_with("dataset,TP,FP,FN,TN,accuracy\nd,"), "{metrics}");
    let accuracy: f64 = metrics.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(accuracy >= 0.95, "{metrics}");
    assert!(stdout.contains("accuracy="));
    let positives = read(f.join("positives.txt"));
    assert_eq!(positives.lines().count(), metrics.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<usize>().unwrap()
        + metrics.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse::<usize>().unwrap());
}

#[test]
fn naive_filter_keeps_top_returns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+N", "10", "--out", "d.jsonl"], dir.path());
    ok(&["filter", "d.jsonl", "--out", "n", "--naive", "--top-fraction", "0.10"], dir.path());
    assert_eq!(read(dir.path().join("n/positives.txt")).lines().count(), 2);
    assert!(!dir.path().join("n/convergence.csv").exists());
    ok(&["filter", "d.jsonl", "--out", "m", "--method", "naive", "--top-fraction", "0.5"], dir.path());
    let metrics = read(dir.path().join("m/metrics.csv"));
    assert!(metrics.ends_with(",10,0,0,10,1.000000\n"), "{metrics}");
}

#[test]
fn baseline_methods_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+N", "10", "--out", "d.jsonl"], dir.path());
    for method in ["unbiased", "nonneg"] {
        let out = pubc(&["filter", "d.jsonl", "--out", method, "--method", method, "--max-iters", "2"], dir.path());
        // a collapsed baseline run is a pipeline failure, never a crash
        assert!(matches!(code(&out), 0 | 4), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(read(dir.path().join(method).join("config.txt")).contains(&format!("method={method}")));
        if code(&out) == 4 {
            assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
        }
    }
    let bad = pubc(&["filter", "d.jsonl", "--out", "x", "--method", "svm"], dir.path());
    assert_eq!(code(&bad), 2);
}

#[test]
fn full_membership_matches_no_membership() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+W", "4", "--out", "d.jsonl"], dir.path());
    let ids: String = (0..8).map(|i| format!("{i}\n")).collect();
    fs::write(dir.path().join("all.txt"), ids).unwrap();
    ok(&["train-bc", "d.jsonl", "--out", "a", "--epochs", "3", "--seed", "5"], dir.path());
    ok(
        &["train-bc", "d.jsonl", "--membership", "all.txt", "--out", "b", "--epochs", "3", "--seed", "5"],
        dir.path(),
    );
    assert_eq!(read(dir.path().join("a/policy.json")), read(dir.path().join("b/policy.json")));
    let loss = read(dir.path().join("a/loss_history.csv"));
    assert!(loss.starts_with("epoch,loss\n1,"));
    assert_eq!(loss.lines().count(), 4);
}

#[test]
fn membership_errors_are_pipeline_failures() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+W", "2", "--out", "d.jsonl"], dir.path());
    fs::write(dir.path().join("bad.txt"), "0\n77\n").unwrap();
    let out = pubc(&["train-bc", "d.jsonl", "--membership", "bad.txt", "--out", "b"], dir.path());
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("77"));
    fs::write(dir.path().join("empty.txt"), "# nothing\n").unwrap();
    let out = pubc(&["train-bc", "d.jsonl", "--membership", "empty.txt", "--out", "e"], dir.path());
    assert_eq!(code(&out), 4);
}

#[test]
fn eval_normalizes_against_configured_bounds() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E", "2", "--out", "d.jsonl"], dir.path());
    ok(&["train-bc", "d.jsonl", "--out", "b", "--epochs", "2"], dir.path());
    let first = ok(&["eval", "b/policy.json", "--out", "e", "--episodes", "5"], dir.path());
    let csv = read(dir.path().join("e/eval.csv"));
    assert!(csv.starts_with("episode,return\n0,"));
    assert_eq!(csv.lines().count(), 6);
    let mean = first
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("mean_return="))
        .unwrap()
        .to_string();
    let lo = format!("{}", mean.parse::<f64>().unwrap() - 10.0);
    let top = ok(
        &["eval", "b/policy.json", "--out", "t", "--episodes", "5", "--score-min", &lo, "--score-max", &mean],
        dir.path(),
    );
    assert!(top.contains("normalized_score=1 "), "{top}");
    let summary = read(dir.path().join("t/summary.txt"));
    assert!(summary.contains(&format!("mean_return={mean}")));
}

#[test]
fn eval_defaults_to_one_hundred_episodes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E", "2", "--out", "d.jsonl"], dir.path());
    ok(&["train-bc", "d.jsonl", "--out", "b", "--epochs", "1"], dir.path());
    ok(&["eval", "b/policy.json", "--out", "e"], dir.path());
    assert_eq!(read(dir.path().join("e/eval.csv")).lines().count(), 101);
    assert!(read(dir.path().join("e/config.txt")).contains("episodes=100"));
}

#[test]
fn report_collects_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "E+N", "5", "--out", "d.jsonl"], dir.path());
    ok(&["filter", "d.jsonl", "--out", "f", "--naive"], dir.path());
    ok(&["train-bc", "d.jsonl", "--membership", "f/positives.txt", "--out", "b", "--epochs", "1"], dir.path());
    ok(&["eval", "b/policy.json", "--out", "e", "--episodes", "3"], dir.path());
    ok(&["report", "f", "e", "--out", "report.csv"], dir.path());
    let report = read(dir.path().join("report.csv"));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "run,iterations,accuracy,mean_return,normalized_score");
    assert!(lines[1].starts_with("f,,"));
    assert!(lines[2].starts_with("e,,,-"));
    assert_eq!(ok(&["report", "f", "e"], dir.path()), report);
}
