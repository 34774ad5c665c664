use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pops(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pops"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small LineLander budgets so the whole pipeline runs in seconds.
const FAST: &str = "\
# quick lander run
env = linelander
seed = 0
ipp.n = 5
ipp.delta = 250
ipp.max_steps = 6000
distill.max_steps = 4000
pops.max_iterations = 2
baseline.grid = 0.5, 0.9
baseline.n = 4
baseline.delta = 250
baseline.level_steps = 2500
baseline.eval_every = 500
baseline.warmup_steps = 200
";

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&pops(&["--help"])), 0);
    assert_eq!(code(&pops(&["--version"])), 0);
    assert_eq!(code(&pops(&[])), 1);
    assert_eq!(code(&pops(&["pops", "--no-such-flag"])), 1);
}

#[test]
fn invalid_gamma_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = pops(&["train-teacher", "--out", path(dir.path()), "--set", "gamma=1.5"]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("gamma"), "{err}");
    assert!(!dir.path().join("teacher.ckpt").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = pops(&["pops", "--out", path(dir.path()), "--set", "ipp.g_fnal=0.9"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("ipp.g_fnal"));
}

#[test]
fn unsolved_teacher_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = pops(&[
        "train-teacher",
        "--env",
        "linelander",
        "--out",
        path(dir.path()),
        "--set",
        "ac.max_episodes=1",
        "--set",
        "ac.screen_every=1",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(dir.path().join("teacher.ckpt").exists());
}

#[test]
fn lander_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("fast.cfg");
    fs::write(&cfg, FAST).unwrap();
    let common = |cmd: &str| {
        vec![
            cmd.to_string(),
            "--config".into(),
            path(&cfg).into(),
            "--out".into(),
            path(&run).into(),
        ]
    };
    let call = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        pops(&refs)
    };

    let out = call(common("train-teacher"));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let echo = fs::read_to_string(run.join("teacher_config.txt")).unwrap();
    assert!(echo.contains("env = linelander"));
    assert!(echo.contains("ipp.max_steps = 6000"));
    assert!(run.join("teacher_critic.ckpt").exists());
    assert!(run.join("version.txt").exists());

    let teacher = run.join("teacher.ckpt");
    let mut args = common("pops");
    args.extend(["--teacher".into(), path(&teacher).into()]);
    let out = call(args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(run.join("pops_report.csv")).unwrap();
    assert!(report.starts_with("iteration,nonzero_params,pct_of_initial,avg_score"));
    assert!(run.join("ipp_trace_1.csv").exists());

    let mut args = common("baseline");
    args.extend([
        "--algo".into(),
        "mbgp".into(),
        "--teacher".into(),
        path(&teacher).into(),
        "--critic".into(),
        path(&run.join("teacher_critic.ckpt")).into(),
    ]);
    let out = call(args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sweep = fs::read_to_string(run.join("sweep_mbgp.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4, "{sweep}");

    // No --env and no config: the environment comes from the checkpoint.
    let eval_dir = dir.path().join("eval");
    let out = pops(&[
        "evaluate",
        "--checkpoint",
        path(&run.join("pops_model.ckpt")),
        "--out",
        path(&eval_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("on linelander"));
    assert_eq!(
        fs::read_to_string(eval_dir.join("evaluation.csv"))
            .unwrap()
            .lines()
            .count(),
        101
    );

    let out = pops(&["report", "--out", path(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["table_pops.csv", "table_baselines.csv", "summary.txt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep_kdbp.csv"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let curves: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let out = pops(&[
                "train-teacher",
                "--env",
                "linelander",
                "--seed",
                "3",
                "--out",
                path(&out_dir),
            ]);
            assert_ne!(code(&out), 1, "{}", stderr(&out));
            fs::read(out_dir.join("teacher_curve.csv")).unwrap()
        })
        .collect();
    assert_eq!(curves[0], curves[1]);
}
