use std::thread;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::DenseNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_score: f64,
    pub episode_scores: Vec<f64>,
    pub episodes: usize,
}

impl EvalResult {
    fn from_scores(episode_scores: Vec<f64>) -> Self {
        let episodes = episode_scores.len();
        let mean_score = episode_scores.iter().sum::<f64>() / episodes as f64;
        EvalResult {
            mean_score,
            episode_scores,
            episodes,
        }
    }
}

/// Undiscounted score of one greedy episode started from `seed`.
pub fn run_episode(policy: &DenseNetwork, env: EnvKind, seed: u64) -> Result<f64> {
    let mut env = env.make();
    let mut state = env.reset(seed);
    let mut score = 0.0;
    loop {
        let step = env.step(policy.greedy_action(&state)?)?;
        score += step.reward;
        if step.done {
            return Ok(score);
        }
        state = step.next_state;
    }
}

/// Greedy evaluation over `episodes` episodes seeded `seed, seed+1, ...`.
pub fn evaluate(policy: &DenseNetwork, env: EnvKind, episodes: usize, seed: u64) -> Result<EvalResult> {
    evaluate_with_threads(policy, env, episodes, seed, 1)
}

/// Same as [`evaluate`], splitting episodes over `threads` workers. Scores are
/// collected in episode order, so the result does not depend on `threads`.
pub fn evaluate_with_threads(
    policy: &DenseNetwork,
    env: EnvKind,
    episodes: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::param("evaluation needs at least one episode"));
    }
    if policy.output_dim() != env.rules().action_count || policy.input_dim() != env.observation_dim() {
        return Err(Error::shape(format!(
            "policy {} does not fit {env} ({} inputs, {} actions)",
            policy.spec().describe(),
            env.observation_dim(),
            env.rules().action_count
        )));
    }
    let seeds: Vec<u64> = (0..episodes as u64).map(|i| seed.wrapping_add(i)).collect();
    let threads = threads.clamp(1, episodes);
    let scores = if threads == 1 {
        seeds
            .iter()
            .map(|s| run_episode(policy, env, *s))
            .collect::<Result<Vec<_>>>()?
    } else {
        let chunk = episodes.div_ceil(threads);
        thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| run_episode(policy, env, *s))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(episodes);
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    Ok(EvalResult::from_scores(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};

    /// Linear policy pushing toward the side the pole leans to.
    pub(crate) fn balancing_policy() -> DenseNetwork {
        let spec = NetworkSpec::new(4, vec![], 2, Activation::Relu).unwrap();
        let mut net = DenseNetwork::zeros(spec).unwrap();
        let gains = [0.1, 0.5, 10.0, 2.0];
        let mut w = Vec::new();
        for g in gains {
            w.extend_from_slice(&[-g, g]);
        }
        net.set_weights(0, &w).unwrap();
        net
    }

    #[test]
    fn balancing_policy_scores_200() {
        let net = balancing_policy();
        let before = net.clone();
        let r = evaluate(&net, EnvKind::CartPole, 100, 0).unwrap();
        assert_eq!(r.mean_score, 200.0);
        assert_eq!(r.episodes, 100);
        assert_eq!(net, before);
    }

    #[test]
    fn single_episode_mean_equals_score() {
        let net = balancing_policy();
        let r = evaluate(&net, EnvKind::CartPole, 1, 5).unwrap();
        assert_eq!(r.mean_score, r.episode_scores[0]);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let spec = NetworkSpec::new(4, vec![8], 2, Activation::Tanh).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let net = DenseNetwork::new(spec, &mut rng).unwrap();
        let a = evaluate_with_threads(&net, EnvKind::CartPole, 30, 11, 1).unwrap();
        let b = evaluate_with_threads(&net, EnvKind::CartPole, 30, 11, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_episodes_rejected() {
        assert!(evaluate(&balancing_policy(), EnvKind::CartPole, 0, 0).is_err());
    }

    #[test]
    fn shape_checked() {
        assert!(matches!(
            evaluate(&balancing_policy(), EnvKind::LineLander, 1, 0),
            Err(Error::Shape(_))
        ));
    }
}
