//! `pops`: train teachers, compress them, run the baselines, and tabulate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use pops_core::baselines::BaselineAlgo;
use pops_core::checkpoint::CheckpointMeta;
use pops_core::config::VERSION;
use pops_core::report::{files, write_rows};
use pops_core::seed::{self, Stream};
use pops_core::trainers::evaluate_with_threads;
use pops_core::{
    kdbp_run, load_checkpoint, make_report, mbgp_run, pops_run, save_checkpoint, train_teacher, DenseNetwork, EnvKind,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "pops", version, about = "Policy pruning and shrinking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output (run) directory
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,

    /// cartpole, linelander or bandit
    #[arg(long)]
    env: Option<String>,

    /// Override one config key, e.g. `--set ipp.g_final=0.95`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher policy and save it as teacher.ckpt
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Compress a teacher with alternating pruning and shrinking
    Pops {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint; trained from scratch when omitted
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Run a pruning baseline sweep
    Baseline {
        #[command(flatten)]
        common: Common,
        /// mbgp or kdbp
        #[arg(long)]
        algo: String,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Critic checkpoint for actor-critic teachers
        #[arg(long)]
        critic: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the network spec stored in it
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Build tables and a summary from a run directory (`--out`)
    Report {
        #[command(flatten)]
        common: Common,
    },
}

/// A run that finished but did not reach its goal.
struct Flagged(String);

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(env) = &common.env {
        overrides.push(("env".into(), env.clone()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    Ok(RunConfig::load(common.config.as_deref(), &overrides)?)
}

fn write_echo(out: &Path, name: &str, command: &str, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = format!("# command = {command}\n{}", cfg.echo());
    let path = out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    fs::write(out.join("version.txt"), format!("{VERSION}\n"))?;
    Ok(())
}

fn meta(cfg: &RunConfig, eval_mean: f64) -> CheckpointMeta {
    CheckpointMeta {
        env: cfg.env.to_string(),
        eval_mean,
        seed: cfg.seed,
    }
}

/// Loads `path` or trains a fresh teacher into `out`.
fn teacher_for(
    cfg: &RunConfig,
    out: &Path,
    path: Option<&Path>,
    critic: Option<&Path>,
) -> Result<(DenseNetwork, Option<DenseNetwork>)> {
    match path {
        Some(p) => {
            let (net, m) = load_checkpoint(p).with_context(|| format!("loading teacher {}", p.display()))?;
            if m.env != cfg.env.name() {
                bail!("teacher was trained on `{}` but the run uses `{}`", m.env, cfg.env);
            }
            let critic = match critic {
                Some(c) => Some(
                    load_checkpoint(c)
                        .with_context(|| format!("loading critic {}", c.display()))?
                        .0,
                ),
                None => None,
            };
            Ok((net, critic))
        }
        None => {
            let t = run_teacher(cfg, out)?;
            match t {
                Ok(pair) => Ok(pair),
                Err(Flagged(msg)) => bail!("teacher training failed: {msg}"),
            }
        }
    }
}

fn run_teacher(
    cfg: &RunConfig,
    out: &Path,
) -> Result<std::result::Result<(DenseNetwork, Option<DenseNetwork>), Flagged>> {
    let outcome = train_teacher(cfg.env, &cfg.teacher, cfg.seed)?;
    outcome.write_curve(&out.join("teacher_curve.csv"))?;
    save_checkpoint(
        &outcome.policy,
        &meta(cfg, outcome.eval.mean_score),
        &out.join("teacher.ckpt"),
    )?;
    if let Some(c) = &outcome.critic {
        save_checkpoint(c, &meta(cfg, outcome.eval.mean_score), &out.join("teacher_critic.ckpt"))?;
    }
    info!(
        "teacher {} after {} episodes: mean {:.2}",
        if outcome.solved { "solved" } else { "did not solve" },
        outcome.episodes,
        outcome.eval.mean_score
    );
    if !outcome.solved {
        return Ok(Err(Flagged(format!(
            "best teacher scores {:.2}, below the solve threshold {}",
            outcome.eval.mean_score,
            cfg.env.rules().solve_threshold
        ))));
    }
    Ok(Ok((outcome.policy, outcome.critic)))
}

fn run(cli: Cli) -> Result<std::result::Result<(), Flagged>> {
    match cli.command {
        Command::TrainTeacher { common } => {
            let cfg = resolve(&common)?;
            write_echo(&common.out, "teacher_config.txt", "train-teacher", &cfg)?;
            Ok(run_teacher(&cfg, &common.out)?.map(|_| ()))
        }
        Command::Pops { common, teacher } => {
            let cfg = resolve(&common)?;
            write_echo(&common.out, "pops_config.txt", "pops", &cfg)?;
            let (teacher, _) = teacher_for(&cfg, &common.out, teacher.as_deref(), None)?;
            let outcome = pops_run(&teacher, cfg.env, &cfg.pops, cfg.seed)?;
            outcome.report.write_csv(&common.out.join(files::POPS_REPORT))?;
            for (i, it) in outcome.iterations.iter().enumerate() {
                it.ipp
                    .write_trace(&common.out.join(format!("ipp_trace_{}.csv", i + 1)))?;
                if let Some(r) = &it.retrain {
                    r.write_curve(&common.out.join(format!("student_curve_{}.csv", i + 1)))?;
                }
            }
            save_checkpoint(
                &outcome.model,
                &meta(&cfg, outcome.eval_mean),
                &common.out.join("pops_model.ckpt"),
            )?;
            println!(
                "final model {} with {} nonzero weights",
                outcome.model.spec().describe(),
                outcome.model.count_nonzero().weights
            );
            if !outcome.completed {
                return Ok(Err(Flagged("an iteration ended without a solving model".into())));
            }
            Ok(Ok(()))
        }
        Command::Baseline {
            common,
            algo,
            teacher,
            critic,
        } => {
            let cfg = resolve(&common)?;
            let algo: BaselineAlgo = algo.parse()?;
            write_echo(
                &common.out,
                &format!("{algo}_config.txt"),
                &format!("baseline --algo {algo}"),
                &cfg,
            )?;
            let (teacher, critic) = teacher_for(&cfg, &common.out, teacher.as_deref(), critic.as_deref())?;
            let outcome = match algo {
                BaselineAlgo::Mbgp => mbgp_run(&teacher, critic.as_ref(), cfg.env, &cfg.baseline, cfg.seed)?,
                BaselineAlgo::Kdbp => kdbp_run(&teacher, &teacher, critic.as_ref(), cfg.env, &cfg.baseline, cfg.seed)?,
            };
            let name = if algo == BaselineAlgo::Mbgp {
                files::SWEEP_MBGP
            } else {
                files::SWEEP_KDBP
            };
            outcome.report.write_csv(&common.out.join(name))?;
            save_checkpoint(
                &outcome.model,
                &meta(&cfg, f64::NAN),
                &common.out.join(format!("{algo}_model.ckpt")),
            )?;
            match outcome.report.smallest_solving_size() {
                Some(n) => println!("{algo}: smallest solving model has {n} nonzero weights"),
                None => println!("{algo}: no level solved"),
            }
            Ok(Ok(()))
        }
        Command::Evaluate { common, checkpoint } => {
            let mut cfg = resolve(&common)?;
            let (net, m) = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            if common.env.is_none() {
                if let Ok(env) = m.env.parse::<EnvKind>() {
                    cfg.env = env;
                }
            }
            write_echo(&common.out, "evaluate_config.txt", "evaluate", &cfg)?;
            let rules = cfg.env.rules();
            let episodes = if cfg.eval_episodes == 0 {
                rules.eval_episodes
            } else {
                cfg.eval_episodes
            };
            let result = evaluate_with_threads(
                &net,
                cfg.env,
                episodes,
                seed::derive(cfg.seed, Stream::Evaluation),
                cfg.threads,
            )?;
            write_rows(
                &common.out.join("evaluation.csv"),
                &["episode", "score"],
                result
                    .episode_scores
                    .iter()
                    .enumerate()
                    .map(|(i, s)| vec![i.to_string(), s.to_string()]),
            )?;
            println!(
                "{} on {}: mean {:.2} over {} episodes ({} nonzero weights)",
                net.spec().describe(),
                cfg.env,
                result.mean_score,
                result.episodes,
                net.count_nonzero().weights
            );
            if result.mean_score < rules.solve_threshold {
                return Ok(Err(Flagged(format!(
                    "mean {:.2} is below the solve threshold {}",
                    result.mean_score, rules.solve_threshold
                ))));
            }
            Ok(Ok(()))
        }
        Command::Report { common } => {
            let files = make_report(&common.out)?;
            for p in &files.written {
                println!("wrote {}", p.display());
            }
            for m in &files.missing {
                println!("skipped {m} (not found)");
            }
            Ok(Ok(()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Flagged(msg))) => {
            eprintln!("flagged: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
