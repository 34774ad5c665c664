//! Iterative policy pruning: gradual magnitude pruning fine-tuned by
//! distillation from the teacher, with recuperation when the pruned model's
//! score collapses.

use std::path::Path;

use log::{debug, info};
use rand::Rng;

use crate::distill::{distill_step, screen_and_confirm, DistillConfig, EvalSeeds};
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::{DenseNetwork, Optimizer};
use crate::replay::{accumulate_experience, DistillBuffer};
use crate::report::write_rows;

/// Cubic sparsity ramp from `g_initial` at step `t0` to `g_final` at
/// `t0 + n·delta`, with a pruning event every `delta` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule {
    pub g_initial: f64,
    pub g_final: f64,
    pub t0: usize,
    pub n: usize,
    pub delta: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            g_initial: 0.0,
            g_final: 0.9,
            t0: 0,
            n: 20,
            delta: 500,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.g_initial) || !(0.0..=1.0).contains(&self.g_final) {
            return Err(Error::param("sparsities must lie in [0, 1]"));
        }
        if self.g_initial > self.g_final {
            return Err(Error::param(format!(
                "g_initial ({}) exceeds g_final ({})",
                self.g_initial, self.g_final
            )));
        }
        if self.n == 0 || self.delta == 0 {
            return Err(Error::param("n and delta must be at least 1"));
        }
        Ok(())
    }

    /// Last step of the ramp, `t0 + n·delta`.
    pub fn end(&self) -> usize {
        self.t0 + self.n * self.delta
    }

    /// Whether a pruning event falls on global step `t`.
    pub fn is_event(&self, t: usize) -> bool {
        t >= self.t0 && t <= self.end() && (t - self.t0).is_multiple_of(self.delta)
    }
}

/// `g_final + (g_initial − g_final)·(1 − (t − t0)/(n·Δ))³`, with `t` clamped
/// to `[t0, t0 + n·Δ]`.
pub fn sparsity_at(schedule: &PruneSchedule, t: usize) -> f64 {
    if t <= schedule.t0 {
        return schedule.g_initial;
    }
    if t >= schedule.end() {
        return schedule.g_final;
    }
    let progress = (t - schedule.t0) as f64 / (schedule.n * schedule.delta) as f64;
    let remaining = 1.0 - progress;
    schedule.g_final + (schedule.g_initial - schedule.g_final) * remaining * remaining * remaining
}

/// `⌊target · size⌋`, robust to representation error in `target · size`.
pub fn pruned_count(target: f64, size: usize) -> usize {
    let raw = target.clamp(0.0, 1.0) * size as f64;
    ((raw + 1e-9).floor() as usize).min(size)
}

/// New mask removing the `⌊target·size⌋` positions of smallest `|W ⊙ M|`.
/// Already-masked positions stay masked; ties go to the lowest flat index.
pub fn prune_layer_to(weights: &[f64], mask: &[bool], target: f64) -> Result<Vec<bool>> {
    if weights.len() != mask.len() {
        return Err(Error::shape(format!(
            "weights ({}) and mask ({}) differ in length",
            weights.len(),
            mask.len()
        )));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::param(format!("target sparsity {target} outside [0, 1]")));
    }
    let k = pruned_count(target, weights.len());
    let already = mask.iter().filter(|m| !**m).count();
    let mut out = mask.to_vec();
    if k <= already {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| (mask[i], if mask[i] { weights[i].abs() } else { 0.0 });
        let (ma, wa) = key(a);
        let (mb, wb) = key(b);
        ma.cmp(&mb).then(wa.total_cmp(&wb)).then(a.cmp(&b))
    });
    for &i in &order[..k] {
        out[i] = false;
    }
    Ok(out)
}

/// Applies [`prune_layer_to`] with the same target to every weight matrix.
pub fn prune_network_to(net: &mut DenseNetwork, target: f64) -> Result<()> {
    for g in 0..net.layers().len() {
        let layer = &net.layers()[g];
        let mask = prune_layer_to(layer.weights(), layer.mask(), target)?;
        net.set_mask(g, &mask)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IppConfig {
    pub schedule: PruneSchedule,
    /// Distillation steps between evaluations.
    pub eval_every: usize,
    /// Score below which pruning pauses; defaults to 0.75 × solve threshold.
    pub low_threshold: Option<f64>,
    /// Unchanged-sparsity evaluations required to stop.
    pub patience: usize,
    pub distill: DistillConfig,
    /// Hard cap on distillation steps, recuperation included.
    pub max_steps: usize,
}

impl Default for IppConfig {
    fn default() -> Self {
        IppConfig {
            schedule: PruneSchedule::default(),
            eval_every: 500,
            low_threshold: None,
            patience: 3,
            distill: DistillConfig::default(),
            max_steps: 40_000,
        }
    }
}

impl IppConfig {
    pub fn low_threshold_for(&self, solve_threshold: f64) -> f64 {
        self.low_threshold.unwrap_or(0.75 * solve_threshold)
    }

    pub fn validate(&self, solve_threshold: f64) -> Result<()> {
        self.schedule.validate()?;
        self.distill.validate()?;
        if self.eval_every == 0 || self.patience == 0 {
            return Err(Error::param("eval_every and patience must be at least 1"));
        }
        if self.low_threshold_for(solve_threshold) >= solve_threshold {
            return Err(Error::param("low threshold must be below the solve threshold"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IppEvent {
    Prune,
    Evaluate,
    Recuperate,
    Snapshot,
}

impl IppEvent {
    pub fn name(self) -> &'static str {
        match self {
            IppEvent::Prune => "prune",
            IppEvent::Evaluate => "evaluate",
            IppEvent::Recuperate => "recuperate",
            IppEvent::Snapshot => "snapshot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IppRow {
    pub global_step: usize,
    pub layer_sparsity: Vec<f64>,
    pub total_nonzeros: usize,
    pub eval_mean: Option<f64>,
    pub event: IppEvent,
}

#[derive(Debug, Clone)]
pub struct IppOutcome {
    /// Highest-sparsity snapshot confirmed to solve, or the final model when
    /// none solved.
    pub model: DenseNetwork,
    pub solved: bool,
    pub steps: usize,
    pub trace: Vec<IppRow>,
}

impl IppOutcome {
    /// Trace as `global_step,layer{g}_sparsity...,total_nonzeros,eval_mean,event`.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        write_trace(path, &self.trace)
    }
}

pub fn write_trace(path: &Path, trace: &[IppRow]) -> Result<()> {
    let layers = trace.first().map_or(0, |r| r.layer_sparsity.len());
    let mut header = vec!["global_step".to_string()];
    header.extend((0..layers).map(|g| format!("layer{g}_sparsity")));
    header.extend(["total_nonzeros", "eval_mean", "event"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header_refs,
        trace.iter().map(|r| {
            let mut row = vec![r.global_step.to_string()];
            row.extend(r.layer_sparsity.iter().map(|s| s.to_string()));
            row.push(r.total_nonzeros.to_string());
            row.push(r.eval_mean.map(|v| v.to_string()).unwrap_or_default());
            row.push(r.event.name().to_string());
            row
        }),
    )
}

fn trace_row(net: &DenseNetwork, step: usize, eval_mean: Option<f64>, event: IppEvent) -> IppRow {
    IppRow {
        global_step: step,
        layer_sparsity: net.layers().iter().map(|l| l.mask_sparsity()).collect(),
        total_nonzeros: net.count_nonzero().weights,
        eval_mean,
        event,
    }
}

/// Prunes `model` toward the schedule's final sparsity while distilling from
/// `teacher`; stops once sparsity has not moved for `patience` evaluations.
pub fn ipp_run<R: Rng + ?Sized>(
    model: &DenseNetwork,
    teacher: &DenseNetwork,
    env: EnvKind,
    buffer: &mut DistillBuffer,
    cfg: &IppConfig,
    seeds: EvalSeeds,
    rng: &mut R,
) -> Result<IppOutcome> {
    let rules = env.rules();
    cfg.validate(rules.solve_threshold)?;
    let low = cfg.low_threshold_for(rules.solve_threshold);
    let mut model = model.clone();
    let mut env_instance = env.make();
    let mut opt = Optimizer::adam(cfg.distill.learning_rate)?;
    let mut trace = Vec::new();
    let mut snapshot: Option<(f64, DenseNetwork)> = None;
    let mut recuperating = false;
    let mut prune_clock = 0usize;
    let mut plateau = 0usize;
    let mut last_sparsity = model.mask_sparsity();
    let mut step = 0usize;

    while step < cfg.max_steps {
        if step.is_multiple_of(cfg.distill.steps_per_phase) {
            accumulate_experience(
                buffer,
                teacher,
                env_instance.as_mut(),
                cfg.distill.accumulate,
                cfg.distill.epsilon,
                rng,
            )?;
        }
        if !recuperating {
            if cfg.schedule.is_event(prune_clock) {
                let target = sparsity_at(&cfg.schedule, prune_clock);
                let before = model.mask_sparsity();
                prune_network_to(&mut model, target)?;
                if model.mask_sparsity() != before {
                    trace.push(trace_row(&model, step, None, IppEvent::Prune));
                }
            }
            prune_clock += 1;
        }
        let batch = buffer.sample_batch(cfg.distill.batch_size, rng)?;
        distill_step(&mut model, &batch, cfg.distill.tau, &mut opt)?;
        step += 1;

        if !step.is_multiple_of(cfg.eval_every) {
            continue;
        }
        let sparsity = model.mask_sparsity();
        let better_than_snapshot = snapshot.as_ref().is_none_or(|(s, _)| sparsity > *s);
        let (screen, confirmed) = if better_than_snapshot {
            screen_and_confirm(&model, env, cfg.distill.screening.episodes, seeds)?
        } else {
            let screen = crate::trainers::evaluate(&model, env, cfg.distill.screening.episodes, seeds.screening)?;
            (screen.mean_score, None)
        };
        let mut event = IppEvent::Evaluate;
        if screen < low {
            if !recuperating {
                debug!("ipp step {step}: score {screen:.2} below {low:.2}, recuperating");
            }
            recuperating = true;
            event = IppEvent::Recuperate;
        } else if recuperating && screen >= rules.solve_threshold {
            recuperating = false;
        }
        if confirmed.is_some() {
            snapshot = Some((sparsity, model.clone()));
            event = IppEvent::Snapshot;
            debug!("ipp step {step}: snapshot at sparsity {sparsity:.4}");
        }
        trace.push(trace_row(&model, step, Some(screen), event));

        if !recuperating {
            if sparsity == last_sparsity {
                plateau += 1;
            } else {
                plateau = 0;
                last_sparsity = sparsity;
            }
            if plateau >= cfg.patience && prune_clock > cfg.schedule.t0 {
                break;
            }
        }
    }

    let (model, solved) = match snapshot {
        Some((sparsity, m)) => {
            info!("ipp finished after {step} steps; snapshot sparsity {sparsity:.4}");
            (m, true)
        }
        None => {
            info!("ipp finished after {step} steps without a solving snapshot");
            (model, false)
        }
    };
    Ok(IppOutcome {
        model,
        solved,
        steps: step,
        trace,
    })
}
