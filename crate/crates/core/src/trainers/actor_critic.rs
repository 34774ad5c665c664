use log::{debug, info};
use rand::Rng;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::{argmax, log_softmax, softmax_temperature, Activation, DenseNetwork, NetworkSpec, Optimizer};
use crate::replay::Transition;
use crate::seed::{self, Stream};

use super::eval::evaluate;
use super::{CurveRow, Screening, TeacherOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticConfig {
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Multiplier applied to rewards before they enter the updates.
    pub reward_scale: f64,
    pub max_episodes: usize,
    pub screening: Screening,
}

impl Default for ActorCriticConfig {
    fn default() -> Self {
        ActorCriticConfig {
            gamma: 0.99,
            hidden: vec![64, 64, 64],
            activation: Activation::Relu,
            actor_learning_rate: 1e-4,
            critic_learning_rate: 1e-3,
            reward_scale: 0.01,
            max_episodes: 3_000,
            screening: Screening::default(),
        }
    }
}

impl ActorCriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.actor_learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return Err(Error::param("actor and critic learning rates must be positive"));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::param("reward_scale must be positive"));
        }
        Ok(())
    }
}

/// `r + γ·V(s') − V(s)`, dropping the bootstrap term on terminal transitions.
pub fn advantage(transition: &Transition, critic: &DenseNetwork, gamma: f64) -> Result<f64> {
    if critic.output_dim() != 1 {
        return Err(Error::shape(format!(
            "critic must have one output, has {}",
            critic.output_dim()
        )));
    }
    let v = critic.forward(&transition.state)?[0];
    let bootstrap = if transition.done || gamma == 0.0 {
        0.0
    } else {
        gamma * critic.forward(&transition.next_state)?[0]
    };
    Ok(transition.reward + bootstrap - v)
}

/// One critic step on `½·δ²` and one actor step on `−log π(a|s)·A`, with the
/// advantage held constant. Returns `(actor_loss, critic_loss)`.
pub fn actor_critic_update(
    actor: &mut DenseNetwork,
    critic: &mut DenseNetwork,
    transition: &Transition,
    gamma: f64,
    actor_opt: &mut Optimizer,
    critic_opt: &mut Optimizer,
) -> Result<(f64, f64)> {
    if transition.action >= actor.output_dim() {
        return Err(Error::param(format!(
            "action {} out of range for actor with {} outputs",
            transition.action,
            actor.output_dim()
        )));
    }
    let adv = advantage(transition, critic, gamma)?;
    let critic_loss = 0.5 * adv * adv;

    let logits = actor.forward(&transition.state)?;
    let probs = softmax_temperature(&logits, 1.0)?;
    // From log-softmax so a saturated policy gives a large but finite loss.
    let actor_loss = -log_softmax(&logits, 1.0)[transition.action] * adv;
    if !critic_loss.is_finite() || !actor_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "actor-critic losses are ({actor_loss}, {critic_loss})"
        )));
    }

    // ∂(½δ²)/∂V(s) = −δ
    let critic_grads = critic.backward(&transition.state, &[-adv])?;
    critic_opt.apply_gradients(critic, &critic_grads)?;

    if adv != 0.0 {
        let mut g = probs;
        g[transition.action] -= 1.0;
        g.iter_mut().for_each(|v| *v *= adv);
        let actor_grads = actor.backward(&transition.state, &g)?;
        actor_opt.apply_gradients(actor, &actor_grads)?;
    }
    Ok((actor_loss, critic_loss))
}

/// Samples an action from `softmax(logits)`.
pub(crate) fn sample_action<R: Rng + ?Sized>(actor: &DenseNetwork, state: &[f64], rng: &mut R) -> Result<usize> {
    let probs = softmax_temperature(&actor.forward(state)?, 1.0)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left `u` past the last bucket.
    Ok(argmax(&probs))
}

/// Online advantage actor-critic; the actor is the policy used for evaluation.
pub fn train_actor_critic(env_kind: EnvKind, cfg: &ActorCriticConfig, master_seed: u64) -> Result<TeacherOutcome> {
    cfg.validate()?;
    let mut env = env_kind.make();
    let rules = env.rules().clone();
    let obs = env.observation_dim();
    let mut init_rng = seed::rng(master_seed, Stream::Init);
    let mut rng = seed::rng(master_seed, Stream::Teacher);
    let mut actor = DenseNetwork::new(
        NetworkSpec::new(obs, cfg.hidden.clone(), rules.action_count, cfg.activation)?,
        &mut init_rng,
    )?;
    let mut critic = DenseNetwork::new(
        NetworkSpec::new(obs, cfg.hidden.clone(), 1, cfg.activation)?,
        &mut init_rng,
    )?;
    let mut actor_opt = Optimizer::adam(cfg.actor_learning_rate)?;
    let mut critic_opt = Optimizer::adam(cfg.critic_learning_rate)?;

    let screen_seed = seed::derive(master_seed, Stream::Screening);
    let eval_seed = seed::derive(master_seed, Stream::Evaluation);
    let mut curve = Vec::new();
    let mut best: Option<(f64, DenseNetwork, DenseNetwork)> = None;

    for episode in 1..=cfg.max_episodes {
        let mut state = env.reset(rng.random());
        let mut score = 0.0;
        loop {
            let action = sample_action(&actor, &state, &mut rng)?;
            let step = env.step(action)?;
            score += step.reward;
            let t = Transition {
                state,
                action,
                reward: step.reward * cfg.reward_scale,
                next_state: step.next_state.clone(),
                done: step.terminal(),
            };
            actor_critic_update(&mut actor, &mut critic, &t, cfg.gamma, &mut actor_opt, &mut critic_opt)?;
            if step.done {
                break;
            }
            state = step.next_state;
        }

        let mut row = CurveRow {
            episode,
            train_score: score,
            eval_mean: None,
            epsilon: 0.0,
        };
        if episode % cfg.screening.every.max(1) == 0 {
            let screen = evaluate(&actor, env_kind, cfg.screening.episodes, screen_seed)?;
            row.eval_mean = Some(screen.mean_score);
            debug!("a2c episode {episode}: screening mean {:.2}", screen.mean_score);
            if best.as_ref().is_none_or(|(s, _, _)| screen.mean_score > *s) {
                best = Some((screen.mean_score, actor.clone(), critic.clone()));
            }
            if screen.mean_score >= rules.solve_threshold {
                let full = evaluate(&actor, env_kind, rules.eval_episodes, eval_seed)?;
                info!("a2c episode {episode}: confirmation mean {:.2}", full.mean_score);
                if full.mean_score >= rules.solve_threshold {
                    curve.push(row);
                    return Ok(TeacherOutcome {
                        policy: actor,
                        critic: Some(critic),
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

    let (policy, critic) = best.map(|(_, a, c)| (a, c)).unwrap_or((actor, critic));
    let eval = evaluate(&policy, env_kind, rules.eval_episodes, eval_seed)?;
    let solved = eval.mean_score >= rules.solve_threshold;
    info!("a2c budget exhausted; best actor scores {:.2}", eval.mean_score);
    Ok(TeacherOutcome {
        policy,
        critic: Some(critic),
        eval,
        solved,
        episodes: cfg.max_episodes,
        curve,
    })
}
