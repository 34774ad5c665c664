//! Teacher-to-student policy distillation.
//!
//! The loss compares the teacher's tempered distribution `softmax(q_t / τ)`
//! against the student's untempered `softmax(q_s)`; only the teacher side is
//! sharpened.

use log::debug;
use rand::Rng;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, DenseNetwork, Optimizer};
use crate::replay::{accumulate_experience, DistillBuffer, DistillSample, DEFAULT_CAPACITY};
use crate::report::write_rows;
use crate::trainers::{evaluate, EvalResult, Screening};

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fresh teacher samples gathered at the start of every phase.
    pub accumulate: usize,
    /// Distillation steps per phase before re-accumulating.
    pub steps_per_phase: usize,
    pub epsilon: f64,
    pub buffer_capacity: usize,
    /// Step budget of one `train_student` call.
    pub max_steps: usize,
    /// Screening cadence in steps; a passing screen is confirmed with a full
    /// evaluation before the student is accepted.
    pub screening: Screening,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: 0.01,
            batch_size: 64,
            learning_rate: 1e-3,
            accumulate: 10_000,
            steps_per_phase: 5_000,
            epsilon: 0.05,
            buffer_capacity: DEFAULT_CAPACITY,
            max_steps: 30_000,
            screening: Screening {
                every: 500,
                episodes: 20,
            },
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::param(format!("tau must be positive, got {}", self.tau)));
        }
        if self.batch_size == 0 || self.steps_per_phase == 0 || self.screening.every == 0 {
            return Err(Error::param(
                "batch_size, steps_per_phase and screening cadence must be at least 1",
            ));
        }
        Ok(())
    }
}

fn check_lengths(q_teacher: &[f64], q_student: &[f64], tau: f64) -> Result<()> {
    if q_teacher.len() != q_student.len() || q_teacher.is_empty() {
        return Err(Error::param(format!(
            "teacher and student outputs differ in length ({} vs {})",
            q_teacher.len(),
            q_student.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// `KL(softmax(q_t/τ) ‖ softmax(q_s))`.
pub fn kl_loss(q_teacher: &[f64], q_student: &[f64], tau: f64) -> Result<f64> {
    check_lengths(q_teacher, q_student, tau)?;
    let log_p = log_softmax(q_teacher, tau);
    let log_q = log_softmax(q_student, 1.0);
    let loss: f64 = log_p
        .iter()
        .zip(&log_q)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum();
    Ok(loss.max(0.0))
}

/// Gradient of [`kl_loss`] with respect to the student outputs:
/// `softmax(q_s) − softmax(q_t/τ)`.
pub fn kl_loss_grad(q_teacher: &[f64], q_student: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_lengths(q_teacher, q_student, tau)?;
    let log_p = log_softmax(q_teacher, tau);
    let log_q = log_softmax(q_student, 1.0);
    Ok(log_q.iter().zip(&log_p).map(|(lq, lp)| lq.exp() - lp.exp()).collect())
}

/// One optimizer step on the batch-mean KL loss. Returns the loss measured
/// before the step.
pub fn distill_step(
    student: &mut DenseNetwork,
    batch: &[&DistillSample],
    tau: f64,
    opt: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::param("distill_step needs a nonempty batch"));
    }
    let n = batch.len();
    let out_dim = student.output_dim();
    let states: Vec<f64> = batch.iter().flat_map(|s| s.state.iter().copied()).collect();
    let pass = student.forward_batch(&states, n)?;
    let mut grad = Vec::with_capacity(n * out_dim);
    let mut loss = 0.0;
    for (sample, q_s) in batch.iter().zip(pass.output().chunks_exact(out_dim)) {
        loss += kl_loss(&sample.teacher_output, q_s, tau)?;
        grad.extend(
            kl_loss_grad(&sample.teacher_output, q_s, tau)?
                .into_iter()
                .map(|g| g / n as f64),
        );
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("distillation loss is {loss}")));
    }
    let grads = student.backward_batch(&pass, &grad)?;
    opt.apply_gradients(student, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillRow {
    pub step: usize,
    pub loss: f64,
    pub eval_mean: f64,
}

#[derive(Debug, Clone)]
pub struct StudentOutcome {
    pub model: DenseNetwork,
    /// Full evaluation of `model`.
    pub eval: EvalResult,
    /// False when the step budget ran out without a confirmed solve.
    pub solved: bool,
    pub steps: usize,
    pub curve: Vec<DistillRow>,
}

impl StudentOutcome {
    /// Distillation curve as `step,loss,eval_mean`.
    pub fn write_curve(&self, path: &std::path::Path) -> Result<()> {
        write_rows(
            path,
            &["step", "loss", "eval_mean"],
            self.curve
                .iter()
                .map(|r| vec![r.step.to_string(), r.loss.to_string(), r.eval_mean.to_string()]),
        )
    }
}

/// Seeds for screening and confirmation evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSeeds {
    pub screening: u64,
    pub confirmation: u64,
}

/// Evaluates with a short screen and, if that passes, a full confirmation.
/// Returns `(screen_mean, confirmed_result)`.
pub(crate) fn screen_and_confirm(
    model: &DenseNetwork,
    env: EnvKind,
    screening_episodes: usize,
    seeds: EvalSeeds,
) -> Result<(f64, Option<EvalResult>)> {
    let rules = env.rules();
    let screen = evaluate(model, env, screening_episodes, seeds.screening)?;
    if screen.mean_score < rules.solve_threshold {
        return Ok((screen.mean_score, None));
    }
    let full = evaluate(model, env, rules.eval_episodes, seeds.confirmation)?;
    let confirmed = (full.mean_score >= rules.solve_threshold).then_some(full);
    Ok((screen.mean_score, confirmed))
}

/// Distills `teacher` into `student`, re-accumulating teacher experience at
/// the start of every phase, until a confirmed solve or the step budget.
#[allow(clippy::too_many_arguments)]
pub fn train_student<R: Rng + ?Sized>(
    student: DenseNetwork,
    teacher: &DenseNetwork,
    env: EnvKind,
    buffer: &mut DistillBuffer,
    cfg: &DistillConfig,
    seeds: EvalSeeds,
    rng: &mut R,
) -> Result<StudentOutcome> {
    cfg.validate()?;
    let mut student = student;
    let (screen, confirmed) = screen_and_confirm(&student, env, cfg.screening.episodes, seeds)?;
    let mut curve = vec![DistillRow {
        step: 0,
        loss: f64::NAN,
        eval_mean: screen,
    }];
    if let Some(eval) = confirmed {
        return Ok(StudentOutcome {
            model: student,
            eval,
            solved: true,
            steps: 0,
            curve,
        });
    }

    let mut env_instance = env.make();
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut best = (screen, student.clone());
    let mut window_loss = 0.0;
    let mut window = 0usize;
    for step in 1..=cfg.max_steps {
        if (step - 1) % cfg.steps_per_phase == 0 {
            accumulate_experience(buffer, teacher, env_instance.as_mut(), cfg.accumulate, cfg.epsilon, rng)?;
        }
        let batch = buffer.sample_batch(cfg.batch_size, rng)?;
        window_loss += distill_step(&mut student, &batch, cfg.tau, &mut opt)?;
        window += 1;
        if step % cfg.screening.every == 0 {
            let (screen, confirmed) = screen_and_confirm(&student, env, cfg.screening.episodes, seeds)?;
            let loss = window_loss / window as f64;
            debug!("distill step {step}: loss {loss:.5}, screening mean {screen:.2}");
            curve.push(DistillRow {
                step,
                loss,
                eval_mean: screen,
            });
            window_loss = 0.0;
            window = 0;
            if let Some(eval) = confirmed {
                return Ok(StudentOutcome {
                    model: student,
                    eval,
                    solved: true,
                    steps: step,
                    curve,
                });
            }
            if screen > best.0 {
                best = (screen, student.clone());
            }
        }
    }
    let model = best.1;
    let eval = evaluate(&model, env, env.rules().eval_episodes, seeds.confirmation)?;
    Ok(StudentOutcome {
        solved: eval.mean_score >= env.rules().solve_threshold,
        model,
        eval,
        steps: cfg.max_steps,
        curve,
    })
}

/// A buffer sized from the config.
pub fn new_buffer(cfg: &DistillConfig) -> Result<DistillBuffer> {
    DistillBuffer::new(cfg.buffer_capacity.max(1))
}
