use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-itr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TEN_ROWS: &str = "\
x1,x2,arm,time,event
0.1,0.5,1,2.3,1
0.4,0.2,-1,1.1,1
0.9,0.7,1,0.7,0
0.3,0.8,-1,3.2,1
0.6,0.1,1,1.9,1
0.2,0.4,-1,0.5,1
0.8,0.9,1,2.7,0
0.5,0.6,-1,1.4,1
0.7,0.3,1,3.9,1
0.0,1.0,-1,2.2,1
";

#[test]
fn train_on_ten_rows_writes_a_rule_with_ten_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, TEN_ROWS).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--criterion",
        "cvar",
        "--gamma",
        "0.5",
        "--out",
        s(&out),
    ]);
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["beta"].as_array().unwrap().len(), 10);
    for f in ["fit.json", "trace.csv", "censoring.csv", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,sample_size,value_before"));
}

#[test]
fn reruns_are_byte_identical_and_echo_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "train",
            "--scenario",
            "S1",
            "--n",
            "80",
            "--criterion",
            "bpoe",
            "--max-outer",
            "10",
            "--seed",
            "5",
            "--out",
            s(out),
        ]);
    }
    for f in ["model.json", "fit.json", "trace.csv", "censoring.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    // the echoed config replays the run exactly
    let echoed = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 5"), "{echoed}");
    let c = dir.path().join("c");
    ok(&[
        "train",
        "--config",
        s(&a.join("config.toml")),
        "--out",
        s(&c),
    ]);
    assert_eq!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(c.join("model.json")).unwrap()
    );
}

#[test]
fn simulate_then_evaluate_by_ipw_and_by_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let stdout = ok(&[
        "simulate",
        "--scenario",
        "S1",
        "--n",
        "120",
        "--seed",
        "3",
        "--out",
        s(&sim),
    ]);
    assert!(stdout.contains("120 subjects"));
    let data = sim.join("data.csv");
    let rows = fs::read_to_string(&data).unwrap().lines().count();
    assert_eq!(rows, 121);

    let fit = dir.path().join("fit");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--criterion",
        "mean",
        "--max-outer",
        "8",
        "--out",
        s(&fit),
    ]);
    let model = fit.join("model.json");

    let ipw = dir.path().join("ipw");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--alpha-hat",
        "1.0",
        "--c-hat",
        "0.5",
        "--out",
        s(&ipw),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ipw.join("report.json")).unwrap()).unwrap();
    assert!(report["v"].as_f64().unwrap() > 0.0);
    assert!(ipw.join("report.csv").exists());

    let mc = dir.path().join("mc");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--scenario",
        "S1",
        "--n-test",
        "500",
        "--out",
        s(&mc),
    ]);
    let csv = fs::read_to_string(mc.join("report.csv")).unwrap();
    assert!(csv.starts_with("v_mean,v1,v2,gamma,tau,n_test\n"));
}

#[test]
fn experiment_writes_summaries_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let stdout = ok(&[
        "experiment",
        "--scenario",
        "S1",
        "--n",
        "60",
        "--repeats",
        "2",
        "--n-test",
        "500",
        "--max-outer",
        "5",
        "--workers",
        "1",
        "--plot-data",
        "--out",
        s(&out),
    ]);
    for m in ["cvar", "bpoe", "mean", "all_treated", "all_control"] {
        assert!(stdout.contains(m), "{m} missing from table");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    let reps = fs::read_to_string(out.join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 2 * 5);
    let plot = fs::read_to_string(out.join("plot_data.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 5 * 3);
}

#[test]
fn cv_runs_on_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--scenario",
        "S1",
        "--n",
        "60",
        "--out",
        s(&sim),
    ]);
    let cfg = dir.path().join("cv.toml");
    fs::write(
        &cfg,
        "methods = [\"mean\", \"all_treated\"]\n[learn.solver]\nmax_outer = 5\n",
    )
    .unwrap();
    let out = dir.path().join("cv");
    ok(&[
        "cv",
        "--config",
        s(&cfg),
        "--data",
        s(&sim.join("data.csv")),
        "--folds",
        "3",
        "--repeats",
        "2",
        "--out",
        s(&out),
    ]);
    let folds = fs::read_to_string(out.join("folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 1 + 2 * 3 * 2);
    assert!(out.join("summary.csv").exists() && out.join("report.json").exists());
}

#[test]
fn exit_codes_distinguish_usage_data_and_solver_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // usage: unknown flag, missing scenario, misspelled config key
    assert_eq!(code(&["train", "--bogus"]), 1);
    assert_eq!(code(&["simulate", "--out", s(&out)]), 1);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "gama = 0.3\n").unwrap();
    let err = run(&["train", "--config", s(&bad)]);
    assert_eq!(err.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&err.stderr).contains("gama"));

    // data: malformed CSV
    let csv = dir.path().join("broken.csv");
    fs::write(&csv, "x1,arm,time,event\n0.5,1,abc,1\n").unwrap();
    let err = run(&["train", "--data", s(&csv), "--out", s(&out)]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("row"));

    // solver: an inner budget too small to converge
    let tight = dir.path().join("tight.toml");
    fs::write(
        &tight,
        "[learn.solver]\ninner_max_iter = 1\ninner_tol = 1e-14\n",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "train",
            "--config",
            s(&tight),
            "--scenario",
            "S1",
            "--n",
            "60",
            "--out",
            s(&out)
        ]),
        3
    );

    assert_eq!(code(&["--help"]), 0);
}
