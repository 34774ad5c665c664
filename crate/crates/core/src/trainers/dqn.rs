use log::{debug, info};
use rand::Rng;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::{argmax, Activation, DenseNetwork, NetworkSpec, Optimizer};
use crate::replay::{Transition, TransitionBuffer};
use crate::seed::{self, Stream};

use super::eval::{evaluate, EvalResult};
use super::{CurveRow, Screening, TeacherOutcome};

/// Linear ε decay from `start` to `end` over `decay_steps` environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Update steps between target-network copies.
    pub target_sync: usize,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    /// Environment steps collected before the first update.
    pub warmup_steps: usize,
    pub max_episodes: usize,
    pub screening: Screening,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            hidden: vec![256, 256, 128],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: 64,
            target_sync: 500,
            epsilon: EpsilonSchedule::default(),
            buffer_capacity: 100_000,
            warmup_steps: 1_000,
            max_episodes: 1_500,
            screening: Screening::default(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.target_sync == 0 || self.batch_size == 0 {
            return Err(Error::param("target_sync and batch_size must be at least 1"));
        }
        if self.epsilon.end > self.epsilon.start {
            return Err(Error::param("epsilon schedule must be non-increasing"));
        }
        Ok(())
    }
}

/// `r + γ·max_a Q_target(s', a)`, or just `r` for a terminal transition.
pub fn td_target(transition: &Transition, target_net: &DenseNetwork, gamma: f64) -> Result<f64> {
    if transition.done || gamma == 0.0 {
        return Ok(transition.reward);
    }
    let next = target_net.forward(&transition.next_state)?;
    Ok(transition.reward + gamma * next[argmax(&next)])
}

/// Batched TD targets using one forward pass of the target network.
pub(crate) fn td_targets(batch: &[&Transition], target_net: &DenseNetwork, gamma: f64) -> Result<Vec<f64>> {
    let n = batch.len();
    let actions = target_net.output_dim();
    let next: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
    let q_next = target_net.forward_batch(&next, n)?;
    Ok(batch
        .iter()
        .zip(q_next.output().chunks_exact(actions))
        .map(|(t, q)| {
            if t.done || gamma == 0.0 {
                t.reward
            } else {
                t.reward + gamma * q[argmax(q)]
            }
        })
        .collect())
}

/// One gradient step on the mean squared TD error of the taken actions.
/// Returns the loss measured before the step.
pub fn dqn_update(
    net: &mut DenseNetwork,
    target_net: &DenseNetwork,
    batch: &[&Transition],
    gamma: f64,
    opt: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::param("dqn_update needs a nonempty batch"));
    }
    let targets = td_targets(batch, target_net, gamma)?;
    regress_taken_actions(net, batch, &targets, opt)
}

/// Pulls `Q(s, a)` toward `targets` for the taken actions only.
pub(crate) fn regress_taken_actions(
    net: &mut DenseNetwork,
    batch: &[&Transition],
    targets: &[f64],
    opt: &mut Optimizer,
) -> Result<f64> {
    let n = batch.len();
    let actions = net.output_dim();
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let pass = net.forward_batch(&states, n)?;
    let mut grad = vec![0.0; n * actions];
    let mut loss = 0.0;
    for (i, (t, y)) in batch.iter().zip(targets).enumerate() {
        let err = pass.output()[i * actions + t.action] - y;
        loss += err * err;
        grad[i * actions + t.action] = 2.0 * err / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("TD loss is {loss}")));
    }
    let grads = net.backward_batch(&pass, &grad)?;
    opt.apply_gradients(net, &grads)?;
    Ok(loss)
}

/// Picks a uniformly random action with probability `epsilon`, else greedy.
pub(crate) fn epsilon_greedy<R: Rng + ?Sized>(
    net: &DenseNetwork,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..net.output_dim()))
    } else {
        net.greedy_action(state)
    }
}

/// Trains a DQN with a periodically synchronized target network.
pub fn train_dqn(env_kind: EnvKind, cfg: &DqnConfig, master_seed: u64) -> Result<TeacherOutcome> {
    cfg.validate()?;
    let mut env = env_kind.make();
    let rules = env.rules().clone();
    let spec = NetworkSpec::new(
        env.observation_dim(),
        cfg.hidden.clone(),
        rules.action_count,
        cfg.activation,
    )?;
    let mut init_rng = seed::rng(master_seed, Stream::Init);
    let mut rng = seed::rng(master_seed, Stream::Teacher);
    let mut net = DenseNetwork::new(spec, &mut init_rng)?;
    let mut target = net.clone();
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut buffer = TransitionBuffer::new(cfg.buffer_capacity)?;

    let screen_seed = seed::derive(master_seed, Stream::Screening);
    let eval_seed = seed::derive(master_seed, Stream::Evaluation);
    let mut curve = Vec::new();
    let mut best: Option<(f64, DenseNetwork)> = None;
    let mut env_steps = 0usize;
    let mut updates = 0usize;

    for episode in 1..=cfg.max_episodes {
        let mut state = env.reset(rng.random());
        let mut score = 0.0;
        loop {
            let eps = cfg.epsilon.at(env_steps);
            let action = epsilon_greedy(&net, &state, eps, &mut rng)?;
            let step = env.step(action)?;
            env_steps += 1;
            score += step.reward;
            let terminal = step.terminal();
            let done = step.done;
            buffer.push(Transition {
                state,
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
                done: terminal,
            })?;
            state = step.next_state;

            if env_steps >= cfg.warmup_steps {
                let batch = buffer.sample_batch(cfg.batch_size, &mut rng)?;
                dqn_update(&mut net, &target, &batch, cfg.gamma, &mut opt)?;
                updates += 1;
                if updates.is_multiple_of(cfg.target_sync) {
                    target = net.clone();
                }
            }
            if done {
                break;
            }
        }

        let epsilon = cfg.epsilon.at(env_steps);
        let mut row = CurveRow {
            episode,
            train_score: score,
            eval_mean: None,
            epsilon,
        };
        if episode % cfg.screening.every.max(1) == 0 && env_steps >= cfg.warmup_steps {
            let screen = evaluate(&net, env_kind, cfg.screening.episodes, screen_seed)?;
            row.eval_mean = Some(screen.mean_score);
            debug!("dqn episode {episode}: screening mean {:.2}", screen.mean_score);
            if best.as_ref().is_none_or(|(s, _)| screen.mean_score > *s) {
                best = Some((screen.mean_score, net.clone()));
            }
            if screen.mean_score >= rules.solve_threshold {
                let full = evaluate(&net, env_kind, rules.eval_episodes, eval_seed)?;
                info!(
                    "dqn episode {episode}: confirmation mean {:.2} over {} episodes",
                    full.mean_score, full.episodes
                );
                if full.mean_score >= rules.solve_threshold {
                    curve.push(row);
                    return Ok(TeacherOutcome {
                        policy: net,
                        critic: None,
                        eval: full,
                        solved: true,
                        episodes: episode,
                        curve,
                    });
                }
            }
        }
        curve.push(row);
    }

    let policy = best.map(|(_, n)| n).unwrap_or(net);
    let eval: EvalResult = evaluate(&policy, env_kind, rules.eval_episodes, eval_seed)?;
    let solved = eval.mean_score >= rules.solve_threshold;
    info!("dqn budget exhausted; best model scores {:.2}", eval.mean_score);
    Ok(TeacherOutcome {
        policy,
        critic: None,
        eval,
        solved,
        episodes: cfg.max_episodes,
        curve,
    })
}
