//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys are namespaced per
//! stage (`dqn.*`, `ac.*`, `distill.*`, `ipp.*`, `pops.*`, `baseline.*`).
//! Unknown keys and out-of-range values are rejected with the key named.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::baselines::BaselineConfig;
use crate::distill::DistillConfig;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::shrink::PopsConfig;
use crate::trainers::{TeacherAlgorithm, TeacherConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every accepted key with a one-line description; defaults come from
/// [`RunConfig::default`].
pub const KEYS: &[(&str, &str)] = &[
    ("env", "environment: cartpole, linelander or bandit"),
    ("seed", "master seed for every random stream"),
    ("threads", "worker threads for standalone evaluation"),
    ("gamma", "discount factor for every TD or advantage target, in [0, 1]"),
    (
        "eval.episodes",
        "episodes for the evaluate command; 0 uses the environment's rule",
    ),
    ("teacher.algorithm", "auto, dqn or ac"),
    ("dqn.hidden", "hidden widths, comma separated"),
    ("dqn.activation", "relu or tanh"),
    ("dqn.learning_rate", "Adam step size"),
    ("dqn.batch_size", "minibatch size"),
    ("dqn.target_sync", "updates between target-network copies"),
    ("dqn.epsilon_start", "initial exploration rate"),
    ("dqn.epsilon_end", "final exploration rate"),
    ("dqn.epsilon_decay_steps", "environment steps of linear decay"),
    ("dqn.buffer_capacity", "replay capacity"),
    ("dqn.warmup_steps", "steps collected before the first update"),
    ("dqn.max_episodes", "training episode budget"),
    ("dqn.screen_every", "episodes between screening evaluations"),
    ("dqn.screen_episodes", "episodes per screening evaluation"),
    ("ac.hidden", "hidden widths of actor and critic"),
    ("ac.activation", "relu or tanh"),
    ("ac.actor_learning_rate", "actor Adam step size"),
    ("ac.critic_learning_rate", "critic Adam step size"),
    ("ac.reward_scale", "multiplier on rewards seen by the updates"),
    ("ac.max_episodes", "training episode budget"),
    ("ac.screen_every", "episodes between screening evaluations"),
    ("ac.screen_episodes", "episodes per screening evaluation"),
    ("distill.tau", "teacher softmax temperature"),
    ("distill.batch_size", "minibatch size"),
    ("distill.learning_rate", "Adam step size"),
    ("distill.accumulate", "teacher samples gathered per phase"),
    ("distill.steps_per_phase", "distillation steps between accumulations"),
    ("distill.epsilon", "teacher exploration rate while accumulating"),
    ("distill.buffer_capacity", "sample buffer capacity"),
    ("distill.max_steps", "step budget for retraining a shrunk model"),
    ("distill.screen_every", "steps between screening evaluations"),
    ("distill.screen_episodes", "episodes per screening evaluation"),
    ("ipp.g_initial", "sparsity at the start of the ramp"),
    ("ipp.g_final", "sparsity at the end of the ramp"),
    ("ipp.t0", "step of the first pruning event"),
    ("ipp.n", "number of pruning events"),
    ("ipp.delta", "steps between pruning events"),
    ("ipp.eval_every", "steps between evaluations"),
    (
        "ipp.low_threshold",
        "score that triggers recuperation; auto = 0.75 x solve threshold",
    ),
    ("ipp.patience", "evaluations without sparsity change before stopping"),
    ("ipp.max_steps", "step budget per pruning run"),
    ("pops.max_iterations", "maximum prune-shrink iterations"),
    ("pops.min_width", "smallest hidden width of a shrunk model"),
    (
        "pops.threshold_fraction",
        "stop when the size drop is below this fraction",
    ),
    (
        "pops.threshold_weights",
        "stop when the size drop is below this many weights",
    ),
    ("baseline.g_final", "largest sparsity swept"),
    ("baseline.n", "pruning events per level ramp"),
    ("baseline.delta", "steps between pruning events"),
    ("baseline.grid", "sparsity levels, comma separated, each in (0, 1]"),
    ("baseline.level_steps", "fine-tuning steps per level, ramp included"),
    ("baseline.batch_size", "minibatch size"),
    ("baseline.lambda", "KDBP weight of the TD term, in [0, 1]"),
    ("baseline.tau", "KDBP temperature"),
    ("baseline.epsilon", "exploration rate of the pruned model"),
    ("baseline.learning_rate", "Adam step size"),
    (
        "baseline.critic_learning_rate",
        "critic Adam step size (actor-critic policies)",
    ),
    ("baseline.target_sync", "updates between target-network copies"),
    ("baseline.buffer_capacity", "replay capacity"),
    (
        "baseline.warmup_steps",
        "interaction steps before the first update of a level",
    ),
    ("baseline.eval_every", "steps between evaluations after the ramp"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub threads: usize,
    /// 0 means the environment's own evaluation length.
    pub eval_episodes: usize,
    pub teacher: TeacherConfig,
    pub distill: DistillConfig,
    /// Its `ipp.distill` and `distill` mirror [`RunConfig::distill`].
    pub pops: PopsConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvKind::CartPole,
            seed: 0,
            threads: 1,
            eval_episodes: 0,
            teacher: TeacherConfig::default(),
            distill: DistillConfig::default(),
            pops: PopsConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::config(key, message)
}

fn real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| bad(key, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(bad(key, format!("must be finite, got `{v}`")));
    }
    Ok(x)
}

fn unit(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(bad(key, format!("must lie in [0, 1], got {x}")));
    }
    Ok(x)
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if x <= 0.0 {
        return Err(bad(key, format!("must be positive, got {x}")));
    }
    Ok(x)
}

fn step_size(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if !(x > 0.0 && x <= 1.0) {
        return Err(bad(key, format!("must lie in (0, 1], got {x}")));
    }
    Ok(x)
}

fn count(key: &str, v: &str, min: usize) -> Result<usize> {
    let n: usize = v
        .parse()
        .map_err(|_| bad(key, format!("expected a non-negative integer, got `{v}`")))?;
    if n < min {
        return Err(bad(key, format!("must be at least {min}, got {n}")));
    }
    Ok(n)
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| count(key, p.trim(), 1)).collect()
}

fn activation(key: &str, v: &str) -> Result<Activation> {
    Activation::parse(v).ok_or_else(|| bad(key, format!("expected relu or tanh, got `{v}`")))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Reads `path` (if any), then applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(line, format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.teacher;
        let d = &mut self.distill;
        let ipp = &mut self.pops.ipp;
        let b = &mut self.baseline;
        match key {
            "env" => self.env = v.parse().map_err(|e: Error| bad(key, e.to_string()))?,
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| bad(key, format!("expected an unsigned integer, got `{v}`")))?
            }
            "threads" => self.threads = count(key, v, 1)?,
            "gamma" => {
                let g = unit(key, v)?;
                t.dqn.gamma = g;
                t.actor_critic.gamma = g;
                b.gamma = g;
            }
            "eval.episodes" => self.eval_episodes = count(key, v, 0)?,
            "teacher.algorithm" => {
                t.algorithm = match v {
                    "auto" => None,
                    "dqn" => Some(TeacherAlgorithm::Dqn),
                    "ac" => Some(TeacherAlgorithm::ActorCritic),
                    _ => return Err(bad(key, format!("expected auto, dqn or ac, got `{v}`"))),
                }
            }
            "dqn.hidden" => t.dqn.hidden = widths(key, v)?,
            "dqn.activation" => t.dqn.activation = activation(key, v)?,
            "dqn.learning_rate" => t.dqn.learning_rate = step_size(key, v)?,
            "dqn.batch_size" => t.dqn.batch_size = count(key, v, 1)?,
            "dqn.target_sync" => t.dqn.target_sync = count(key, v, 1)?,
            "dqn.epsilon_start" => t.dqn.epsilon.start = unit(key, v)?,
            "dqn.epsilon_end" => t.dqn.epsilon.end = unit(key, v)?,
            "dqn.epsilon_decay_steps" => t.dqn.epsilon.decay_steps = count(key, v, 0)?,
            "dqn.buffer_capacity" => t.dqn.buffer_capacity = count(key, v, 1)?,
            "dqn.warmup_steps" => t.dqn.warmup_steps = count(key, v, 0)?,
            "dqn.max_episodes" => t.dqn.max_episodes = count(key, v, 0)?,
            "dqn.screen_every" => t.dqn.screening.every = count(key, v, 1)?,
            "dqn.screen_episodes" => t.dqn.screening.episodes = count(key, v, 1)?,
            "ac.hidden" => t.actor_critic.hidden = widths(key, v)?,
            "ac.activation" => t.actor_critic.activation = activation(key, v)?,
            "ac.actor_learning_rate" => t.actor_critic.actor_learning_rate = step_size(key, v)?,
            "ac.critic_learning_rate" => t.actor_critic.critic_learning_rate = step_size(key, v)?,
            "ac.reward_scale" => {
                let s = positive(key, v)?;
                t.actor_critic.reward_scale = s;
                b.reward_scale = s;
            }
            "ac.max_episodes" => t.actor_critic.max_episodes = count(key, v, 0)?,
            "ac.screen_every" => t.actor_critic.screening.every = count(key, v, 1)?,
            "ac.screen_episodes" => t.actor_critic.screening.episodes = count(key, v, 1)?,
            "distill.tau" => d.tau = positive(key, v)?,
            "distill.batch_size" => d.batch_size = count(key, v, 1)?,
            "distill.learning_rate" => d.learning_rate = step_size(key, v)?,
            "distill.accumulate" => d.accumulate = count(key, v, 1)?,
            "distill.steps_per_phase" => d.steps_per_phase = count(key, v, 1)?,
            "distill.epsilon" => d.epsilon = unit(key, v)?,
            "distill.buffer_capacity" => d.buffer_capacity = count(key, v, 1)?,
            "distill.max_steps" => d.max_steps = count(key, v, 0)?,
            "distill.screen_every" => d.screening.every = count(key, v, 1)?,
            "distill.screen_episodes" => d.screening.episodes = count(key, v, 1)?,
            "ipp.g_initial" => ipp.schedule.g_initial = unit(key, v)?,
            "ipp.g_final" => ipp.schedule.g_final = unit(key, v)?,
            "ipp.t0" => ipp.schedule.t0 = count(key, v, 0)?,
            "ipp.n" => ipp.schedule.n = count(key, v, 1)?,
            "ipp.delta" => ipp.schedule.delta = count(key, v, 1)?,
            "ipp.eval_every" => ipp.eval_every = count(key, v, 1)?,
            "ipp.low_threshold" => ipp.low_threshold = if v == "auto" { None } else { Some(real(key, v)?) },
            "ipp.patience" => ipp.patience = count(key, v, 1)?,
            "ipp.max_steps" => ipp.max_steps = count(key, v, 1)?,
            "pops.max_iterations" => self.pops.max_iterations = count(key, v, 1)?,
            "pops.min_width" => self.pops.min_width = count(key, v, 1)?,
            "pops.threshold_fraction" => self.pops.threshold_fraction = unit(key, v)?,
            "pops.threshold_weights" => self.pops.threshold_weights = count(key, v, 0)?,
            "baseline.g_final" => b.schedule.g_final = unit(key, v)?,
            "baseline.n" => b.schedule.n = count(key, v, 1)?,
            "baseline.delta" => b.schedule.delta = count(key, v, 1)?,
            "baseline.grid" => {
                b.grid = v
                    .split(',')
                    .map(|p| {
                        let g = real(key, p.trim())?;
                        if g > 0.0 && g <= 1.0 {
                            Ok(g)
                        } else {
                            Err(bad(key, format!("values must lie in (0, 1], got {g}")))
                        }
                    })
                    .collect::<Result<_>>()?
            }
            "baseline.level_steps" => b.level_steps = count(key, v, 1)?,
            "baseline.batch_size" => b.batch_size = count(key, v, 1)?,
            "baseline.lambda" => b.lambda = unit(key, v)?,
            "baseline.tau" => b.tau = positive(key, v)?,
            "baseline.epsilon" => b.epsilon = unit(key, v)?,
            "baseline.learning_rate" => b.learning_rate = step_size(key, v)?,
            "baseline.critic_learning_rate" => b.critic_learning_rate = step_size(key, v)?,
            "baseline.target_sync" => b.target_sync = count(key, v, 1)?,
            "baseline.buffer_capacity" => b.buffer_capacity = count(key, v, 1)?,
            "baseline.warmup_steps" => b.warmup_steps = count(key, v, 0)?,
            "baseline.eval_every" => b.eval_every = count(key, v, 1)?,
            _ => return Err(bad(key, "unknown key")),
        }
        self.sync();
        Ok(())
    }

    fn sync(&mut self) {
        self.pops.ipp.distill = self.distill.clone();
        self.pops.distill = self.distill.clone();
    }

    /// Cross-field checks after all keys are applied.
    pub fn validate(&self) -> Result<()> {
        let wrap = |ns: &str, r: Result<()>| r.map_err(|e| bad(ns, e.to_string()));
        wrap("dqn", self.teacher.dqn.validate())?;
        wrap("ac", self.teacher.actor_critic.validate())?;
        wrap("distill", self.distill.validate())?;
        wrap("ipp", self.pops.ipp.validate(self.env.rules().solve_threshold))?;
        wrap("pops", self.pops.validate())?;
        wrap("baseline", self.baseline.validate())
    }

    /// `(key, value)` for every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.teacher;
        let d = &self.distill;
        let ipp = &self.pops.ipp;
        let b = &self.baseline;
        let algorithm = match t.algorithm {
            None => "auto",
            Some(TeacherAlgorithm::Dqn) => "dqn",
            Some(TeacherAlgorithm::ActorCritic) => "ac",
        };
        vec![
            ("env", self.env.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("gamma", t.dqn.gamma.to_string()),
            ("eval.episodes", self.eval_episodes.to_string()),
            ("teacher.algorithm", algorithm.to_string()),
            ("dqn.hidden", join(&t.dqn.hidden)),
            ("dqn.activation", t.dqn.activation.name().to_string()),
            ("dqn.learning_rate", t.dqn.learning_rate.to_string()),
            ("dqn.batch_size", t.dqn.batch_size.to_string()),
            ("dqn.target_sync", t.dqn.target_sync.to_string()),
            ("dqn.epsilon_start", t.dqn.epsilon.start.to_string()),
            ("dqn.epsilon_end", t.dqn.epsilon.end.to_string()),
            ("dqn.epsilon_decay_steps", t.dqn.epsilon.decay_steps.to_string()),
            ("dqn.buffer_capacity", t.dqn.buffer_capacity.to_string()),
            ("dqn.warmup_steps", t.dqn.warmup_steps.to_string()),
            ("dqn.max_episodes", t.dqn.max_episodes.to_string()),
            ("dqn.screen_every", t.dqn.screening.every.to_string()),
            ("dqn.screen_episodes", t.dqn.screening.episodes.to_string()),
            ("ac.hidden", join(&t.actor_critic.hidden)),
            ("ac.activation", t.actor_critic.activation.name().to_string()),
            ("ac.actor_learning_rate", t.actor_critic.actor_learning_rate.to_string()),
            (
                "ac.critic_learning_rate",
                t.actor_critic.critic_learning_rate.to_string(),
            ),
            ("ac.reward_scale", t.actor_critic.reward_scale.to_string()),
            ("ac.max_episodes", t.actor_critic.max_episodes.to_string()),
            ("ac.screen_every", t.actor_critic.screening.every.to_string()),
            ("ac.screen_episodes", t.actor_critic.screening.episodes.to_string()),
            ("distill.tau", d.tau.to_string()),
            ("distill.batch_size", d.batch_size.to_string()),
            ("distill.learning_rate", d.learning_rate.to_string()),
            ("distill.accumulate", d.accumulate.to_string()),
            ("distill.steps_per_phase", d.steps_per_phase.to_string()),
            ("distill.epsilon", d.epsilon.to_string()),
            ("distill.buffer_capacity", d.buffer_capacity.to_string()),
            ("distill.max_steps", d.max_steps.to_string()),
            ("distill.screen_every", d.screening.every.to_string()),
            ("distill.screen_episodes", d.screening.episodes.to_string()),
            ("ipp.g_initial", ipp.schedule.g_initial.to_string()),
            ("ipp.g_final", ipp.schedule.g_final.to_string()),
            ("ipp.t0", ipp.schedule.t0.to_string()),
            ("ipp.n", ipp.schedule.n.to_string()),
            ("ipp.delta", ipp.schedule.delta.to_string()),
            ("ipp.eval_every", ipp.eval_every.to_string()),
            (
                "ipp.low_threshold",
                ipp.low_threshold.map_or("auto".to_string(), |v| v.to_string()),
            ),
            ("ipp.patience", ipp.patience.to_string()),
            ("ipp.max_steps", ipp.max_steps.to_string()),
            ("pops.max_iterations", self.pops.max_iterations.to_string()),
            ("pops.min_width", self.pops.min_width.to_string()),
            ("pops.threshold_fraction", self.pops.threshold_fraction.to_string()),
            ("pops.threshold_weights", self.pops.threshold_weights.to_string()),
            ("baseline.g_final", b.schedule.g_final.to_string()),
            ("baseline.n", b.schedule.n.to_string()),
            ("baseline.delta", b.schedule.delta.to_string()),
            ("baseline.grid", join(&b.grid)),
            ("baseline.level_steps", b.level_steps.to_string()),
            ("baseline.batch_size", b.batch_size.to_string()),
            ("baseline.lambda", b.lambda.to_string()),
            ("baseline.tau", b.tau.to_string()),
            ("baseline.epsilon", b.epsilon.to_string()),
            ("baseline.learning_rate", b.learning_rate.to_string()),
            ("baseline.critic_learning_rate", b.critic_learning_rate.to_string()),
            ("baseline.target_sync", b.target_sync.to_string()),
            ("baseline.buffer_capacity", b.buffer_capacity.to_string()),
            ("baseline.warmup_steps", b.warmup_steps.to_string()),
            ("baseline.eval_every", b.eval_every.to_string()),
        ]
    }

    /// Resolved config as a config file, headed by the toolkit version.
    pub fn echo(&self) -> String {
        let mut s = format!("# pops {VERSION}\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse_str("").unwrap(), RunConfig::default());
        assert_eq!(
            RunConfig::parse_str("# only a comment\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn gamma_out_of_range_names_key() {
        let err = RunConfig::parse_str("gamma = 1.5").unwrap_err().to_string();
        assert!(err.contains("gamma"), "{err}");
        assert!(err.contains("[0, 1]"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse_str("ipp.gfinal = 0.5").unwrap_err().to_string();
        assert!(err.contains("ipp.gfinal") && err.contains("unknown"), "{err}");
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = RunConfig::parse_str("dqn.batch_size = many").unwrap_err().to_string();
        assert!(err.contains("dqn.batch_size"), "{err}");
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(RunConfig::parse_str("seed 4").is_err());
    }

    #[test]
    fn override_beats_file_and_shows_in_echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "seed = 3\nipp.g_final = 0.8  # trailing comment\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &[("ipp.g_final".into(), "0.95".into())]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.pops.ipp.schedule.g_final, 0.95);
        assert!(cfg.echo().contains("ipp.g_final = 0.95\n"));
    }

    #[test]
    fn echo_covers_every_key_and_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.set("baseline.grid", "0.5,0.9").unwrap();
        cfg.set("ipp.low_threshold", "120.5").unwrap();
        cfg.set("teacher.algorithm", "ac").unwrap();
        let keys: Vec<&str> = cfg.entries().iter().map(|(k, _)| *k).collect();
        let documented: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, documented);
        assert_eq!(RunConfig::parse_str(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn distill_settings_reach_pops() {
        let cfg = RunConfig::parse_str("distill.tau = 0.5").unwrap();
        assert_eq!(cfg.pops.ipp.distill.tau, 0.5);
        assert_eq!(cfg.pops.distill.tau, 0.5);
    }

    #[test]
    fn cross_field_errors_are_reported() {
        // Ramp longer than the per-level budget.
        let err = RunConfig::parse_str("baseline.level_steps = 10")
            .unwrap_err()
            .to_string();
        assert!(err.contains("baseline"), "{err}");
    }
}
