//! Policy shrinking and the outer prune-then-shrink loop.

use std::path::Path;

use log::info;
use rand::Rng;

use crate::distill::{new_buffer, train_student, DistillConfig, EvalSeeds, StudentOutcome};
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::ipp::{ipp_run, IppConfig, IppOutcome};
use crate::nn::{Activation, DenseNetwork, NetworkSpec};
use crate::report::write_rows;
use crate::seed::{self, Stream};
use crate::trainers::evaluate;

/// Nonzero weight count of every matrix in a pruned network.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyMeasure {
    pub counts: Vec<usize>,
    pub source: NetworkSpec,
}

pub fn measure_redundancy(sparse: &DenseNetwork) -> RedundancyMeasure {
    RedundancyMeasure {
        counts: sparse.count_nonzero().per_layer,
        source: sparse.spec().clone(),
    }
}

/// Hidden widths of the dense replacement: front to back,
/// `d'_g = max(min_width, ⌈n_g / d'_{g−1}⌉)` with `d'_0 = input_dim`. The last
/// matrix's count is not used; its width is the fixed output dimension.
pub fn shrunk_widths(measure: &RedundancyMeasure, input_dim: usize, min_width: usize) -> Vec<usize> {
    let hidden = measure.counts.len().saturating_sub(1);
    let mut prev = input_dim;
    let mut widths = Vec::with_capacity(hidden);
    for &n in &measure.counts[..hidden] {
        let w = n.div_ceil(prev).max(min_width);
        widths.push(w);
        prev = w;
    }
    widths
}

/// Freshly initialized dense network sized from `measure`.
pub fn create_model<R: Rng + ?Sized>(
    measure: &RedundancyMeasure,
    input_dim: usize,
    output_dim: usize,
    min_width: usize,
    activation: Activation,
    rng: &mut R,
) -> Result<DenseNetwork> {
    if measure.source.input_dim != input_dim || measure.source.output_dim != output_dim {
        return Err(Error::shape(format!(
            "measure from {} does not match dims {input_dim}→{output_dim}",
            measure.source.describe()
        )));
    }
    if min_width == 0 {
        return Err(Error::param("min_width must be at least 1"));
    }
    let spec = NetworkSpec::new(
        input_dim,
        shrunk_widths(measure, input_dim, min_width),
        output_dim,
        activation,
    )?;
    DenseNetwork::new(spec, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopsConfig {
    pub max_iterations: usize,
    pub min_width: usize,
    /// Converged when the size drop is below this fraction of the previous size...
    pub threshold_fraction: f64,
    /// ...or below this many weights.
    pub threshold_weights: usize,
    pub ipp: IppConfig,
    /// Retraining of each shrunk model.
    pub distill: DistillConfig,
}

impl Default for PopsConfig {
    fn default() -> Self {
        PopsConfig {
            max_iterations: 10,
            min_width: 4,
            threshold_fraction: 0.05,
            threshold_weights: 16,
            ipp: IppConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

impl PopsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_width == 0 {
            return Err(Error::param("min_width must be at least 1"));
        }
        if !(self.threshold_fraction > 0.0) && self.threshold_weights == 0 {
            return Err(Error::param("convergence threshold must be positive"));
        }
        self.distill.validate()
    }

    fn converged(&self, previous: usize, current: usize) -> bool {
        let drop = previous.saturating_sub(current);
        drop < self.threshold_weights || (drop as f64) < self.threshold_fraction * previous as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub iteration: usize,
    pub nonzero_params: usize,
    pub pct_of_initial: f64,
    pub avg_score: f64,
}

/// Per-iteration compression record; row 0 is the teacher.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompressionReport {
    pub rows: Vec<ReportRow>,
}

impl CompressionReport {
    pub const HEADER: [&'static str; 4] = ["iteration", "nonzero_params", "pct_of_initial", "avg_score"];

    fn push(&mut self, iteration: usize, nonzero_params: usize, avg_score: f64) {
        let initial = self.rows.first().map_or(nonzero_params, |r| r.nonzero_params);
        self.rows.push(ReportRow {
            iteration,
            nonzero_params,
            pct_of_initial: 100.0 * nonzero_params as f64 / initial as f64,
            avg_score,
        });
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            &Self::HEADER,
            self.rows.iter().map(|r| {
                vec![
                    r.iteration.to_string(),
                    r.nonzero_params.to_string(),
                    format!("{:.4}", r.pct_of_initial),
                    format!("{:.4}", r.avg_score),
                ]
            }),
        )
    }
}

#[derive(Debug, Clone)]
pub struct PopsIteration {
    pub ipp: IppOutcome,
    pub retrain: Option<StudentOutcome>,
}

#[derive(Debug, Clone)]
pub struct PopsOutcome {
    /// Smallest model confirmed to solve; the teacher when none did.
    pub model: DenseNetwork,
    /// Full-evaluation mean of `model`.
    pub eval_mean: f64,
    pub report: CompressionReport,
    /// False when an iteration failed to produce a solving model.
    pub completed: bool,
    pub iterations: Vec<PopsIteration>,
}

/// Alternates pruning and shrinking until the model size stops improving.
pub fn pops_run(teacher: &DenseNetwork, env: EnvKind, cfg: &PopsConfig, master_seed: u64) -> Result<PopsOutcome> {
    cfg.validate()?;
    let rules = env.rules();
    let seeds = EvalSeeds {
        screening: seed::derive(master_seed, Stream::Screening),
        confirmation: seed::derive(master_seed, Stream::Evaluation),
    };
    let mut ipp_rng = seed::rng(master_seed, Stream::Ipp);
    let mut shrink_rng = seed::rng(master_seed, Stream::Shrink);
    let mut init_rng = seed::rng(master_seed, Stream::Init);

    let mut report = CompressionReport::default();
    let teacher_eval = evaluate(teacher, env, rules.eval_episodes, seeds.confirmation)?;
    let initial = teacher.count_nonzero().weights;
    report.push(0, initial, teacher_eval.mean_score);
    info!(
        "pops: teacher {} with {initial} weights scores {:.2}",
        teacher.spec().describe(),
        teacher_eval.mean_score
    );

    let mut answer = teacher.clone();
    let mut answer_score = teacher_eval.mean_score;
    let mut current = teacher.clone();
    let mut completed = true;
    let mut iterations = Vec::new();
    let mut buffer = new_buffer(&cfg.ipp.distill)?;

    for i in 1..=cfg.max_iterations {
        let ipp = ipp_run(&current, teacher, env, &mut buffer, &cfg.ipp, seeds, &mut ipp_rng)?;
        if !ipp.solved {
            info!("pops iteration {i}: pruning never produced a solving model");
            completed = false;
            iterations.push(PopsIteration { ipp, retrain: None });
            break;
        }
        let measure = measure_redundancy(&ipp.model);
        let fresh = create_model(
            &measure,
            teacher.input_dim(),
            teacher.output_dim(),
            cfg.min_width,
            teacher.spec().activation,
            &mut init_rng,
        )?;
        info!(
            "pops iteration {i}: pruned to {} weights, shrinking to {}",
            ipp.model.count_nonzero().weights,
            fresh.spec().describe()
        );
        let retrain = train_student(fresh, teacher, env, &mut buffer, &cfg.distill, seeds, &mut shrink_rng)?;
        let size = retrain.model.count_nonzero().weights;
        report.push(i, size, retrain.eval.mean_score);
        let solved = retrain.solved;
        let score = retrain.eval.mean_score;
        let model = retrain.model.clone();
        iterations.push(PopsIteration {
            ipp,
            retrain: Some(retrain),
        });
        if !solved {
            info!("pops iteration {i}: shrunk model did not solve");
            completed = false;
            break;
        }
        let previous = current.count_nonzero().weights;
        if size <= answer.count_nonzero().weights {
            answer = model.clone();
            answer_score = score;
        }
        if cfg.converged(previous, size) {
            info!("pops converged at iteration {i} with {size} weights");
            break;
        }
        current = model;
    }

    Ok(PopsOutcome {
        model: answer,
        eval_mean: answer_score,
        report,
        completed,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn measure(counts: &[usize]) -> RedundancyMeasure {
        RedundancyMeasure {
            counts: counts.to_vec(),
            source: NetworkSpec::new(4, vec![256, 256, 128], 2, Activation::Relu).unwrap(),
        }
    }

    #[test]
    fn sequential_ceiling_widths() {
        let m = measure(&[400, 3000, 1200, 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = create_model(&m, 4, 2, 4, Activation::Relu, &mut rng).unwrap();
        assert_eq!(net.spec().widths(), vec![4, 100, 30, 40, 2]);
        assert_eq!(net.spec().weight_count(), 4_680);
        assert!(net.layers().iter().all(|l| l.mask().iter().all(|b| *b)));
    }

    #[test]
    fn zero_counts_clamp_to_min_width() {
        assert_eq!(shrunk_widths(&measure(&[0, 0, 0, 0]), 4, 4), vec![4, 4, 4]);
    }

    #[test]
    fn dense_counts_reproduce_original() {
        let m = measure(&[4 * 256, 256 * 256, 256 * 128, 128 * 2]);
        assert_eq!(shrunk_widths(&m, 4, 4), vec![256, 256, 128]);
    }

    #[test]
    fn measure_matches_masks() {
        let spec = NetworkSpec::new(3, vec![5], 2, Activation::Relu).unwrap();
        let mut net = DenseNetwork::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(measure_redundancy(&net).counts, vec![15, 10]);
        net.set_mask(0, &[false; 15]).unwrap();
        net.set_mask(1, &[false; 10]).unwrap();
        assert_eq!(measure_redundancy(&net).counts, vec![0, 0]);
    }

    #[test]
    fn dims_must_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(create_model(&measure(&[1, 1, 1, 1]), 3, 2, 4, Activation::Relu, &mut rng).is_err());
    }

    #[test]
    fn convergence_threshold() {
        let cfg = PopsConfig::default();
        assert!(cfg.converged(1000, 990));
        assert!(cfg.converged(100, 90));
        assert!(!cfg.converged(1000, 900));
        assert!(cfg.converged(100, 120));
    }

    #[test]
    fn report_percentages() {
        let mut r = CompressionReport::default();
        r.push(0, 1000, 200.0);
        r.push(1, 162, 199.0);
        assert_eq!(r.rows[0].pct_of_initial, 100.0);
        assert!((r.rows[1].pct_of_initial - 16.2).abs() < 1e-12);
    }
}
