//! Teacher training: DQN with a target network and advantage actor-critic,
//! plus the greedy evaluation harness shared by every other stage.

mod actor_critic;
mod dqn;
mod eval;

use std::path::Path;

pub(crate) use actor_critic::sample_action;
pub use actor_critic::{actor_critic_update, advantage, train_actor_critic, ActorCriticConfig};
pub use dqn::{dqn_update, td_target, train_dqn, DqnConfig, EpsilonSchedule};
pub(crate) use dqn::{epsilon_greedy, regress_taken_actions, td_targets};
pub use eval::{evaluate, evaluate_with_threads, run_episode, EvalResult};

use crate::env::EnvKind;
use crate::error::Result;
use crate::nn::DenseNetwork;
use crate::report::write_rows;

/// How often training pauses for a short greedy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Screening {
    /// Episodes (or steps, for distillation loops) between screenings.
    pub every: usize,
    pub episodes: usize,
}

impl Default for Screening {
    fn default() -> Self {
        Screening {
            every: 10,
            episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherAlgorithm {
    Dqn,
    ActorCritic,
}

impl TeacherAlgorithm {
    /// DQN for CartPole and the bandit, actor-critic for the lander.
    pub fn default_for(env: EnvKind) -> Self {
        match env {
            EnvKind::LineLander => TeacherAlgorithm::ActorCritic,
            EnvKind::CartPole | EnvKind::Bandit => TeacherAlgorithm::Dqn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TeacherConfig {
    pub algorithm: Option<TeacherAlgorithm>,
    pub dqn: DqnConfig,
    pub actor_critic: ActorCriticConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub train_score: f64,
    pub eval_mean: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherOutcome {
    /// Q-network (DQN) or actor (actor-critic); greedy over its outputs.
    pub policy: DenseNetwork,
    pub critic: Option<DenseNetwork>,
    pub eval: EvalResult,
    /// False when the episode budget ran out before a confirmed solve.
    pub solved: bool,
    pub episodes: usize,
    pub curve: Vec<CurveRow>,
}

impl TeacherOutcome {
    /// Learning curve as `episode,train_score,eval_mean,epsilon`.
    pub fn write_curve(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            &["episode", "train_score", "eval_mean", "epsilon"],
            self.curve.iter().map(|r| {
                vec![
                    r.episode.to_string(),
                    r.train_score.to_string(),
                    r.eval_mean.map(|v| v.to_string()).unwrap_or_default(),
                    r.epsilon.to_string(),
                ]
            }),
        )
    }
}

pub fn train_teacher(env: EnvKind, cfg: &TeacherConfig, master_seed: u64) -> Result<TeacherOutcome> {
    match cfg.algorithm.unwrap_or(TeacherAlgorithm::default_for(env)) {
        TeacherAlgorithm::Dqn => train_dqn(env, &cfg.dqn, master_seed),
        TeacherAlgorithm::ActorCritic => train_actor_critic(env, &cfg.actor_critic, master_seed),
    }
}
