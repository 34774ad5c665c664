//! Comparison pruners: magnitude-based gradual pruning fine-tuned on the
//! environment (MBGP) and distillation-based pruning that mixes TD targets
//! with the soft teacher distribution (KDBP).
//!
//! Every grid level is an independent run from the input model: a gradual
//! ramp to that level, then fine-tuning until the level's step budget runs
//! out. Scores are recorded best-so-far, so a larger budget never lowers a
//! recorded score.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::ipp::{prune_network_to, sparsity_at, PruneSchedule};
use crate::nn::{log_softmax, softmax_temperature, DenseNetwork, Optimizer};
use crate::replay::{Transition, TransitionBuffer};
use crate::report::write_rows;
use crate::seed::{self, Stream};
use crate::trainers::{
    actor_critic_update, epsilon_greedy, evaluate, regress_taken_actions, sample_action, td_targets,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineAlgo {
    Mbgp,
    Kdbp,
}

impl BaselineAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BaselineAlgo::Mbgp => "mbgp",
            BaselineAlgo::Kdbp => "kdbp",
        }
    }
}

impl fmt::Display for BaselineAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mbgp" => Ok(BaselineAlgo::Mbgp),
            "kdbp" => Ok(BaselineAlgo::Kdbp),
            other => Err(Error::param(format!(
                "unknown baseline '{other}', expected mbgp or kdbp"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Ramp shape; `g_final` caps the grid and each level reuses `n`/`delta`.
    pub schedule: PruneSchedule,
    pub batch_size: usize,
    /// Fine-tuning steps per grid level, ramp included.
    pub level_steps: usize,
    /// Sparsity levels to report, each in (0, 1].
    pub grid: Vec<f64>,
    /// Weight of the TD term in the KDBP loss.
    pub lambda: f64,
    pub tau: f64,
    /// Exploration rate of the pruned model while it gathers experience.
    pub epsilon: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Multiplier on rewards fed to actor-critic updates.
    pub reward_scale: f64,
    pub target_sync: usize,
    pub buffer_capacity: usize,
    /// Interaction steps gathered before the first update of each level.
    pub warmup_steps: usize,
    /// Steps between evaluations once the ramp has finished.
    pub eval_every: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            schedule: PruneSchedule {
                g_final: 0.99,
                ..PruneSchedule::default()
            },
            batch_size: 64,
            level_steps: 15_000,
            grid: vec![0.5, 0.6, 0.7, 0.72, 0.8, 0.9, 0.95, 0.98, 0.99],
            lambda: 0.5,
            tau: 0.01,
            epsilon: 0.05,
            gamma: 0.99,
            learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            reward_scale: 0.01,
            target_sync: 500,
            buffer_capacity: 100_000,
            warmup_steps: 1_000,
            eval_every: 1_000,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if let Some(g) = self.grid.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
            return Err(Error::param(format!("grid values must lie in (0, 1], got {g}")));
        }
        if !(self.tau > 0.0) || !(self.reward_scale > 0.0) {
            return Err(Error::param("tau and reward_scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::param("gamma and epsilon must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.eval_every == 0 {
            return Err(Error::param(
                "batch_size, target_sync and eval_every must be at least 1",
            ));
        }
        let ramp = self.schedule.n * self.schedule.delta;
        if self.level_steps < ramp + self.eval_every {
            return Err(Error::param(format!(
                "level_steps ({}) must cover the ramp ({ramp}) plus one evaluation period ({})",
                self.level_steps, self.eval_every
            )));
        }
        Ok(())
    }

    /// Grid levels reachable under `schedule.g_final`, ascending and deduplicated.
    pub fn levels(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = self
            .grid
            .iter()
            .copied()
            .filter(|g| *g <= self.schedule.g_final && *g > self.schedule.g_initial)
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        levels
    }

    fn level_schedule(&self, level: f64) -> PruneSchedule {
        PruneSchedule {
            g_final: level,
            t0: 0,
            ..self.schedule.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sparsity: f64,
    pub nonzero_params: usize,
    pub pct_of_initial: f64,
    /// Best full-evaluation mean seen at this level.
    pub avg_score: f64,
    pub solved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub algo: BaselineAlgo,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn score_column(&self) -> String {
        format!("avg_score_{}", self.algo)
    }

    pub fn smallest_solving_size(&self) -> Option<usize> {
        self.rows.iter().filter(|r| r.solved).map(|r| r.nonzero_params).min()
    }

    /// `nonzero_params,pct_of_initial,avg_score_<algo>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let col = self.score_column();
        write_rows(
            path,
            &["nonzero_params", "pct_of_initial", &col],
            self.rows.iter().map(|r| {
                vec![
                    r.nonzero_params.to_string(),
                    format!("{:.4}", r.pct_of_initial),
                    format!("{:.4}", r.avg_score),
                ]
            }),
        )
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    /// Sparsest model that solved, or the input model when none did.
    pub model: DenseNetwork,
    pub report: SweepReport,
}

/// Loss and student-output gradient of the KDBP objective for one sample:
/// `λ·CE(p̃, softmax(q_s)) + (1−λ)·CE(softmax(q_t/τ), softmax(q_s/τ))`, where
/// `p̃` is `softmax(q_s)` with the taken entry replaced by `target`.
pub fn kdbp_loss_grad(
    q_student: &[f64],
    q_teacher: &[f64],
    action: usize,
    target: f64,
    lambda: f64,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    if q_student.len() != q_teacher.len() || action >= q_student.len() {
        return Err(Error::param(format!(
            "student/teacher lengths {} and {} with action {action}",
            q_student.len(),
            q_teacher.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let mut td = q_student.to_vec();
    td[action] = target;
    let p_td = softmax_temperature(&td, 1.0)?;
    let p_s = softmax_temperature(q_student, 1.0)?;
    let log_s = log_softmax(q_student, 1.0);
    let p_t = softmax_temperature(q_teacher, tau)?;
    let p_s_tau = softmax_temperature(q_student, tau)?;
    let log_s_tau = log_softmax(q_student, tau);

    let ce_td: f64 = -p_td.iter().zip(&log_s).map(|(p, l)| p * l).sum::<f64>();
    let ce_soft: f64 = -p_t.iter().zip(&log_s_tau).map(|(p, l)| p * l).sum::<f64>();
    let loss = lambda * ce_td + (1.0 - lambda) * ce_soft;
    let grad = (0..q_student.len())
        .map(|i| lambda * (p_s[i] - p_td[i]) + (1.0 - lambda) * (p_s_tau[i] - p_t[i]) / tau)
        .collect();
    Ok((loss, grad))
}

/// The fine-tuning signal that distinguishes the two baselines.
enum Signal<'a> {
    Mbgp,
    Kdbp { teacher: &'a DenseNetwork },
}

/// Magnitude-based gradual pruning fine-tuned on the environment's own
/// rewards. Pass the critic for actor-critic policies.
pub fn mbgp_run(
    model: &DenseNetwork,
    critic: Option<&DenseNetwork>,
    env: EnvKind,
    cfg: &BaselineConfig,
    master_seed: u64,
) -> Result<BaselineOutcome> {
    sweep(model, critic, env, cfg, master_seed, BaselineAlgo::Mbgp, Signal::Mbgp)
}

/// Distillation-based pruning: the student starts as the teacher and is
/// fine-tuned on a mix of TD targets and the tempered teacher distribution.
pub fn kdbp_run(
    model: &DenseNetwork,
    teacher: &DenseNetwork,
    critic: Option<&DenseNetwork>,
    env: EnvKind,
    cfg: &BaselineConfig,
    master_seed: u64,
) -> Result<BaselineOutcome> {
    if teacher.spec().output_dim != model.spec().output_dim || teacher.input_dim() != model.input_dim() {
        return Err(Error::shape("teacher and student dimensions differ"));
    }
    sweep(
        model,
        critic,
        env,
        cfg,
        master_seed,
        BaselineAlgo::Kdbp,
        Signal::Kdbp { teacher },
    )
}

fn sweep(
    model: &DenseNetwork,
    critic: Option<&DenseNetwork>,
    env: EnvKind,
    cfg: &BaselineConfig,
    master_seed: u64,
    algo: BaselineAlgo,
    signal: Signal<'_>,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let rules = env.rules();
    if let Some(c) = critic {
        if c.output_dim() != 1 || c.input_dim() != model.input_dim() {
            return Err(Error::shape("critic must map the observation to one value"));
        }
    }
    let eval_seed = seed::derive(master_seed, Stream::Evaluation);
    let initial = model.count_nonzero().weights;
    let base = evaluate(model, env, rules.eval_episodes, eval_seed)?;
    let mut rows = vec![SweepRow {
        sparsity: model.mask_sparsity(),
        nonzero_params: initial,
        pct_of_initial: 100.0,
        avg_score: base.mean_score,
        solved: base.mean_score >= rules.solve_threshold,
    }];
    let mut answer = model.clone();
    let level_base = seed::derive(master_seed, Stream::Baseline);

    for (k, level) in cfg.levels().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(level_base.wrapping_add(k as u64 + 1));
        let (score, pruned) = run_level(model, critic, env, cfg, level, &signal, eval_seed, &mut rng)?;
        let nonzero = pruned.count_nonzero().weights;
        let solved = score >= rules.solve_threshold;
        info!("{algo} level {level:.3}: {nonzero} weights, best score {score:.2}");
        if solved {
            answer = pruned;
        }
        rows.push(SweepRow {
            sparsity: level,
            nonzero_params: nonzero,
            pct_of_initial: 100.0 * nonzero as f64 / initial.max(1) as f64,
            avg_score: score,
            solved,
        });
    }
    Ok(BaselineOutcome {
        model: answer,
        report: SweepReport { algo, rows },
    })
}

/// One independent prune-and-fine-tune run to `level`. Returns the best
/// score and the model that achieved it.
#[allow(clippy::too_many_arguments)]
fn run_level(
    model: &DenseNetwork,
    critic: Option<&DenseNetwork>,
    env_kind: EnvKind,
    cfg: &BaselineConfig,
    level: f64,
    signal: &Signal<'_>,
    eval_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, DenseNetwork)> {
    let rules = env_kind.rules();
    let schedule = cfg.level_schedule(level);
    let ramp_end = schedule.end();
    let mut net = model.clone();
    let mut critic = critic.cloned();
    let mut target = net.clone();
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut critic_opt = Optimizer::adam(cfg.critic_learning_rate)?;
    let mut buffer = TransitionBuffer::new(cfg.buffer_capacity.max(cfg.batch_size))?;
    let mut env = env_kind.make();
    let mut state = env.reset(rng.random());
    let mut best: Option<(f64, DenseNetwork)> = None;
    let mut updates = 0usize;

    let actor_critic = critic.is_some();
    let mut interact =
        |net: &DenseNetwork, buffer: &mut TransitionBuffer, rng: &mut ChaCha8Rng| -> Result<Transition> {
            let action = if actor_critic {
                sample_action(net, &state, rng)?
            } else {
                epsilon_greedy(net, &state, cfg.epsilon, rng)?
            };
            let step = env.step(action)?;
            let scale = if actor_critic { cfg.reward_scale } else { 1.0 };
            let transition = Transition {
                state: std::mem::take(&mut state),
                action,
                reward: step.reward * scale,
                next_state: step.next_state.clone(),
                done: step.terminal(),
            };
            buffer.push(transition.clone())?;
            state = if step.done {
                env.reset(rng.random())
            } else {
                step.next_state
            };
            Ok(transition)
        };

    for _ in 0..cfg.warmup_steps.max(cfg.batch_size) {
        interact(&net, &mut buffer, rng)?;
    }

    for t in 0..cfg.level_steps {
        if schedule.is_event(t) {
            prune_network_to(&mut net, sparsity_at(&schedule, t))?;
        }
        let latest = interact(&net, &mut buffer, rng)?;
        let batch = buffer.sample_batch(cfg.batch_size, rng)?;
        match (&mut critic, signal) {
            (None, Signal::Mbgp) => {
                let targets = td_targets(&batch, &target, cfg.gamma)?;
                regress_taken_actions(&mut net, &batch, &targets, &mut opt)?;
            }
            (None, Signal::Kdbp { teacher }) => {
                let targets = td_targets(&batch, &target, cfg.gamma)?;
                kdbp_step(&mut net, teacher, &batch, &targets, cfg, &mut opt)?;
            }
            // On-policy: one update on the transition just collected.
            (Some(c), Signal::Mbgp) => {
                actor_critic_update(&mut net, c, &latest, cfg.gamma, &mut opt, &mut critic_opt)?;
            }
            (Some(c), Signal::Kdbp { teacher }) => {
                // Taken logit shifted by the advantage plays the TD target's role.
                let advantages = batch_advantages(c, &batch, cfg.gamma, &mut critic_opt)?;
                let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
                let logits = net.forward_batch(&states, batch.len())?;
                let targets: Vec<f64> = batch
                    .iter()
                    .zip(logits.output().chunks_exact(net.output_dim()))
                    .zip(&advantages)
                    .map(|((tr, q), adv)| q[tr.action] + adv)
                    .collect();
                kdbp_step(&mut net, teacher, &batch, &targets, cfg, &mut opt)?;
            }
        }
        updates += 1;
        if updates.is_multiple_of(cfg.target_sync) {
            target = net.clone();
        }

        let step = t + 1;
        if step >= ramp_end + cfg.eval_every && (step - ramp_end).is_multiple_of(cfg.eval_every) {
            let score = evaluate(&net, env_kind, rules.eval_episodes, eval_seed)?.mean_score;
            debug!("level {level:.3} step {step}: score {score:.2}");
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, net.clone()));
            }
        }
    }
    Ok(best.unwrap_or((f64::NEG_INFINITY, net)))
}

/// Advantages of a batch under `critic`, followed by one critic step on the
/// mean `½·δ²`.
fn batch_advantages(
    critic: &mut DenseNetwork,
    batch: &[&Transition],
    gamma: f64,
    opt: &mut Optimizer,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let next: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
    let pass = critic.forward_batch(&states, n)?;
    let v_next = critic.forward_batch(&next, n)?.into_output();
    let adv: Vec<f64> = batch
        .iter()
        .zip(pass.output())
        .zip(&v_next)
        .map(|((t, v), vn)| {
            let bootstrap = if t.done { 0.0 } else { gamma * vn };
            t.reward + bootstrap - v
        })
        .collect();
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric("non-finite advantage in baseline batch".into()));
    }
    let grad: Vec<f64> = adv.iter().map(|a| -a / n as f64).collect();
    let grads = critic.backward_batch(&pass, &grad)?;
    opt.apply_gradients(critic, &grads)?;
    Ok(adv)
}

fn kdbp_step(
    net: &mut DenseNetwork,
    teacher: &DenseNetwork,
    batch: &[&Transition],
    targets: &[f64],
    cfg: &BaselineConfig,
    opt: &mut Optimizer,
) -> Result<f64> {
    let n = batch.len();
    let actions = net.output_dim();
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let pass = net.forward_batch(&states, n)?;
    let q_teacher = teacher.forward_batch(&states, n)?;
    let mut grad = Vec::with_capacity(n * actions);
    let mut loss = 0.0;
    for (i, (tr, y)) in batch.iter().zip(targets).enumerate() {
        let row = i * actions..(i + 1) * actions;
        let (l, g) = kdbp_loss_grad(
            &pass.output()[row.clone()],
            &q_teacher.output()[row],
            tr.action,
            *y,
            cfg.lambda,
            cfg.tau,
        )?;
        loss += l / n as f64;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("KDBP loss is {loss}")));
    }
    let grads = net.backward_batch(&pass, &grad)?;
    opt.apply_gradients(net, &grads)?;
    Ok(loss)
}
