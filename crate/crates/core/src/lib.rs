//! Policy pruning and shrinking for small reinforcement-learning policies.
//!
//! A teacher network is trained on one of the built-in environments, then
//! compressed by alternating gradual magnitude pruning (fine-tuned by
//! distillation from the teacher) with shrinking into a smaller dense
//! network. Two pruning baselines are included for comparison.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod distill;
pub mod env;
pub mod error;
pub mod ipp;
pub mod nn;
pub mod replay;
pub mod report;
pub mod seed;
pub mod shrink;
pub mod trainers;

pub use baselines::{kdbp_run, mbgp_run, BaselineAlgo, BaselineConfig, BaselineOutcome, SweepReport, SweepRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::RunConfig;
pub use distill::{distill_step, kl_loss, kl_loss_grad, train_student, DistillConfig, EvalSeeds, StudentOutcome};
pub use env::{EnvKind, EnvRules, Environment, StepResult};
pub use error::{Error, Result};
pub use ipp::{ipp_run, prune_layer_to, sparsity_at, IppConfig, IppOutcome, PruneSchedule};
pub use nn::{mult_count, softmax_temperature, Activation, DenseNetwork, NetworkSpec, Optimizer};
pub use replay::{accumulate_experience, DistillBuffer, DistillSample, ReplayBuffer, Transition, TransitionBuffer};
pub use report::make_report;
pub use shrink::{create_model, measure_redundancy, pops_run, CompressionReport, PopsConfig, PopsOutcome};
pub use trainers::{evaluate, train_teacher, EvalResult, TeacherConfig, TeacherOutcome};
