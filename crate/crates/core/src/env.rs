//! Seedable environments sharing one interaction contract.
//!
//! All randomness is drawn at `reset`; transitions are deterministic, so a seed
//! plus an action sequence fixes a trajectory bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Episode limits and the "solved" criterion of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRules {
    pub action_count: usize,
    pub max_steps: usize,
    pub solve_threshold: f64,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Episode over, either by a terminal event or by the step limit.
    pub done: bool,
    /// `done` was caused by the step limit only; the next state still has value.
    pub truncated: bool,
}

impl StepResult {
    /// True when the transition ends the episode for bootstrapping purposes.
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn rules(&self) -> &EnvRules;
    fn observation_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    CartPole,
    LineLander,
    Bandit,
}

impl EnvKind {
    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::CartPole => Box::new(CartPole::new()),
            EnvKind::LineLander => Box::new(LineLander::new()),
            EnvKind::Bandit => Box::new(Bandit::new()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::LineLander => "linelander",
            EnvKind::Bandit => "bandit",
        }
    }

    pub fn rules(self) -> EnvRules {
        self.make().rules().clone()
    }

    pub fn observation_dim(self) -> usize {
        self.make().observation_dim()
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "linelander" => Ok(EnvKind::LineLander),
            "bandit" => Ok(EnvKind::Bandit),
            other => Err(Error::param(format!(
                "unknown environment `{other}` (expected cartpole, linelander or bandit)"
            ))),
        }
    }
}

/// `Σ_t γ^{t−1} r_t`.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Shared bookkeeping for step validation.
#[derive(Debug, Clone, Default)]
struct Episode {
    steps: usize,
    active: bool,
}

impl Episode {
    fn begin(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    fn check(&self, action: usize, rules: &EnvRules) -> Result<()> {
        if !self.active {
            return Err(Error::State("step called on a finished episode; reset first".into()));
        }
        if action >= rules.action_count {
            return Err(Error::param(format!(
                "action {action} out of range for {} actions",
                rules.action_count
            )));
        }
        Ok(())
    }
}

/// Classic cart-pole balancing with Euler integration.
#[derive(Debug, Clone)]
pub struct CartPole {
    rules: EnvRules,
    /// `[x, x_dot, theta, theta_dot]`, theta in radians.
    state: [f64; 4],
    episode: Episode,
}

impl CartPole {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    pub const ANGLE_LIMIT: f64 = 15.0 * PI / 180.0;
    pub const POSITION_LIMIT: f64 = 2.4;

    pub fn new() -> Self {
        CartPole {
            rules: EnvRules {
                action_count: 2,
                max_steps: 200,
                solve_threshold: 195.0,
                eval_episodes: 100,
            },
            state: [0.0; 4],
            episode: Episode::default(),
        }
    }

    /// Places the system in an arbitrary state, starting a fresh episode.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.episode.begin();
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn kind(&self) -> EnvKind {
        EnvKind::CartPole
    }

    fn rules(&self) -> &EnvRules {
        &self.rules
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut self.state {
            *s = rng.random_range(-0.05..=0.05);
        }
        self.episode.begin();
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        self.episode.check(action, &self.rules)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { Self::FORCE } else { -Self::FORCE };
        let total_mass = Self::CART_MASS + Self::POLE_MASS;
        let pole_moment = Self::POLE_MASS * Self::HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;
        self.state = [
            x + Self::DT * x_dot,
            x_dot + Self::DT * x_acc,
            theta + Self::DT * theta_dot,
            theta_dot + Self::DT * theta_acc,
        ];
        self.episode.steps += 1;

        let failed = self.state[2].abs() > Self::ANGLE_LIMIT || self.state[0].abs() > Self::POSITION_LIMIT;
        let timed_out = self.episode.steps >= self.rules.max_steps;
        let done = failed || timed_out;
        self.episode.active = !done;
        Ok(StepResult {
            next_state: self.state.to_vec(),
            reward: 1.0,
            done,
            truncated: done && !failed,
        })
    }
}

/// One-dimensional descent: coast or thrust until touching the ground.
#[derive(Debug, Clone)]
pub struct LineLander {
    rules: EnvRules,
    altitude: f64,
    velocity: f64,
    episode: Episode,
}

impl LineLander {
    pub const START_ALTITUDE: f64 = 10.0;
    pub const MAX_ALTITUDE: f64 = 10.0;
    pub const START_NOISE: f64 = 0.5;
    pub const GRAVITY: f64 = 0.05;
    pub const THRUST: f64 = 0.12;
    pub const SAFE_SPEED: f64 = 0.5;
    pub const LANDING_REWARD: f64 = 100.0;
    pub const CRASH_REWARD: f64 = -100.0;
    pub const THRUST_COST: f64 = 0.3;

    pub fn new() -> Self {
        LineLander {
            rules: EnvRules {
                action_count: 2,
                max_steps: 500,
                solve_threshold: 80.0,
                eval_episodes: 100,
            },
            altitude: 0.0,
            velocity: 0.0,
            episode: Episode::default(),
        }
    }

    /// Observation `[altitude, velocity]`.
    pub fn observation(&self) -> Vec<f64> {
        vec![self.altitude, self.velocity]
    }

    /// Scripted controller: thrust whenever descending faster than 0.4.
    pub fn scripted_action(observation: &[f64]) -> usize {
        usize::from(observation[1] < -0.4)
    }
}

impl Default for LineLander {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for LineLander {
    fn kind(&self) -> EnvKind {
        EnvKind::LineLander
    }

    fn rules(&self) -> &EnvRules {
        &self.rules
    }

    fn observation_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Self::START_NOISE;
        self.altitude = (Self::START_ALTITUDE + rng.random_range(-n..=n)).min(Self::MAX_ALTITUDE);
        self.velocity = rng.random_range(-n..=n);
        self.episode.begin();
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        self.episode.check(action, &self.rules)?;
        let thrust = action == 1;
        self.velocity += -Self::GRAVITY + if thrust { Self::THRUST } else { 0.0 };
        self.altitude = (self.altitude + self.velocity).min(Self::MAX_ALTITUDE);
        if self.altitude >= Self::MAX_ALTITUDE {
            self.velocity = self.velocity.min(0.0);
        }
        self.episode.steps += 1;

        let mut reward = if thrust { -Self::THRUST_COST } else { 0.0 };
        let landed = self.altitude <= 0.0;
        if landed {
            reward += if self.velocity.abs() <= Self::SAFE_SPEED {
                Self::LANDING_REWARD
            } else {
                Self::CRASH_REWARD
            };
            self.altitude = 0.0;
        }
        let timed_out = self.episode.steps >= self.rules.max_steps;
        let done = landed || timed_out;
        self.episode.active = !done;
        Ok(StepResult {
            next_state: self.observation(),
            reward,
            done,
            truncated: done && !landed,
        })
    }
}

/// Single-state two-armed bandit: arm 0 pays 1, arm 1 pays 0.
#[derive(Debug, Clone)]
pub struct Bandit {
    rules: EnvRules,
    episode: Episode,
}

impl Bandit {
    pub fn new() -> Self {
        Bandit {
            rules: EnvRules {
                action_count: 2,
                max_steps: 1,
                solve_threshold: 0.99,
                eval_episodes: 100,
            },
            episode: Episode::default(),
        }
    }
}

impl Default for Bandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Bandit {
    fn kind(&self) -> EnvKind {
        EnvKind::Bandit
    }

    fn rules(&self) -> &EnvRules {
        &self.rules
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.episode.begin();
        vec![0.0]
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        self.episode.check(action, &self.rules)?;
        self.episode.active = false;
        Ok(StepResult {
            next_state: vec![0.0],
            reward: if action == 0 { 1.0 } else { 0.0 },
            done: true,
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_reset_within_bounds_and_deterministic() {
        let mut env = CartPole::new();
        for seed in 0..50 {
            let s = env.reset(seed);
            assert!(s.iter().all(|v| v.abs() <= 0.05));
            assert_eq!(env.reset(seed), s);
        }
    }

    #[test]
    fn bandit_fixture() {
        let mut env = Bandit::new();
        assert_eq!(env.reset(99), vec![0.0]);
        let r = env.step(0).unwrap();
        assert!(r.done);
        assert_eq!(r.reward, 1.0);
        assert!(matches!(env.step(0), Err(Error::State(_))));
        env.reset(1);
        assert_eq!(env.step(1).unwrap().reward, 0.0);
    }

    #[test]
    fn cartpole_angle_past_limit_terminates() {
        let mut env = CartPole::new();
        env.set_state([0.0, 0.0, 16f64.to_radians(), 0.0]);
        let r = env.step(0).unwrap();
        assert!(r.done);
        assert!(!r.truncated);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn cartpole_surviving_step_rewards_one() {
        let mut env = CartPole::new();
        env.reset(0);
        let r = env.step(1).unwrap();
        assert!(!r.done);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn cartpole_position_limit() {
        let mut env = CartPole::new();
        env.set_state([2.41, 0.0, 0.0, 0.0]);
        assert!(env.step(0).unwrap().done);
        env.set_state([2.3, 0.0, 0.0, 0.0]);
        assert!(!env.step(0).unwrap().done);
    }

    #[test]
    fn cartpole_times_out_at_200() {
        let mut env = CartPole::new();
        let mut steps = 0;
        env.set_state([0.0; 4]);
        loop {
            let [x, v, theta, omega] = env.state();
            let push_right = 0.1 * x + 0.5 * v + 10.0 * theta + 2.0 * omega > 0.0;
            let r = env.step(usize::from(push_right)).unwrap();
            steps += 1;
            if r.done {
                assert!(r.truncated);
                break;
            }
        }
        assert_eq!(steps, 200);
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = CartPole::new();
        env.reset(0);
        assert!(matches!(env.step(2), Err(Error::Parameter(_))));
    }

    #[test]
    fn returns() {
        assert_eq!(episode_return(&[1.0, 1.0, 1.0], 1.0), 3.0);
        assert_eq!(episode_return(&[1.0, 1.0], 0.5), 1.5);
        assert_eq!(episode_return(&[], 0.9), 0.0);
    }

    #[test]
    fn lander_free_fall_crashes() {
        let mut env = LineLander::new();
        env.reset(0);
        let mut last = None;
        for _ in 0..500 {
            let r = env.step(0).unwrap();
            if r.done {
                last = Some(r);
                break;
            }
        }
        let r = last.unwrap();
        assert_eq!(r.reward, -100.0);
        assert!(!r.truncated);
    }

    #[test]
    fn lander_scripted_controller_lands_softly() {
        let mut env = LineLander::new();
        for seed in 0..100 {
            let mut s = env.reset(seed);
            let mut rewards = Vec::new();
            loop {
                let r = env.step(LineLander::scripted_action(&s)).unwrap();
                rewards.push(r.reward);
                s = r.next_state;
                if r.done {
                    assert!(!r.truncated, "seed {seed} timed out");
                    break;
                }
            }
            let total = episode_return(&rewards, 1.0);
            assert!(total > 80.0, "seed {seed}: {total}");
        }
    }

    #[test]
    fn lander_hovering_times_out() {
        let mut env = LineLander::new();
        let mut s = env.reset(3);
        let mut total = 0.0;
        loop {
            // Thrust only when falling: hovers without touching down.
            let a = usize::from(s[1] < 0.0);
            let r = env.step(a).unwrap();
            total += r.reward;
            s = r.next_state;
            if r.done {
                assert!(r.truncated);
                break;
            }
        }
        assert!(total < 0.0);
    }

    #[test]
    fn env_names_round_trip() {
        for k in [EnvKind::CartPole, EnvKind::LineLander, EnvKind::Bandit] {
            assert_eq!(k.name().parse::<EnvKind>().unwrap(), k);
        }
        assert!("pong".parse::<EnvKind>().is_err());
    }
}
