//! Bounded FIFO experience buffers.

use std::collections::VecDeque;

use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{argmax, DenseNetwork};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal for bootstrapping; step-limit truncation is not terminal.
    pub done: bool,
}

/// A state paired with the teacher's full output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSample {
    pub state: Vec<f64>,
    pub teacher_output: Vec<f64>,
}

/// Something a [`ReplayBuffer`] can validate before storing.
pub trait Record: Clone {
    /// `(state_dim, payload_dim)`; all records in one buffer must agree.
    fn shape(&self) -> Result<(usize, usize)>;
}

impl Record for Transition {
    fn shape(&self) -> Result<(usize, usize)> {
        if self.state.len() != self.next_state.len() {
            return Err(Error::param(format!(
                "transition state lengths differ: {} vs {}",
                self.state.len(),
                self.next_state.len()
            )));
        }
        Ok((self.state.len(), 0))
    }
}

impl Record for DistillSample {
    fn shape(&self) -> Result<(usize, usize)> {
        Ok((self.state.len(), self.teacher_output.len()))
    }
}

/// Ring buffer that evicts its oldest record once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    shape: Option<(usize, usize)>,
    records: VecDeque<T>,
}

pub type TransitionBuffer = ReplayBuffer<Transition>;
pub type DistillBuffer = ReplayBuffer<DistillSample>;

impl<T: Record> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("buffer capacity must be at least 1"));
        }
        Ok(ReplayBuffer {
            capacity,
            shape: None,
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.records.iter()
    }

    pub fn push(&mut self, record: T) -> Result<()> {
        let shape = record.shape()?;
        match self.shape {
            Some(expected) if expected != shape => {
                return Err(Error::param(format!(
                    "record shape {shape:?} does not match buffer shape {expected:?}"
                )));
            }
            None => self.shape = Some(shape),
            _ => {}
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(())
    }

    /// Draws `n` records uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.records.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        let len = self.records.len();
        Ok((0..n).map(|_| &self.records[rng.random_range(0..len)]).collect())
    }
}

/// Runs ε-greedy teacher episodes and stores exactly `count` visited states
/// labeled with the teacher's full output vector.
pub fn accumulate_experience<R: Rng + ?Sized>(
    buffer: &mut DistillBuffer,
    teacher: &DenseNetwork,
    env: &mut dyn Environment,
    count: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<()> {
    let actions = env.rules().action_count;
    if teacher.output_dim() != actions {
        return Err(Error::shape(format!(
            "teacher has {} outputs but the environment has {actions} actions",
            teacher.output_dim()
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::param(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let mut added = 0;
    while added < count {
        let mut state = env.reset(rng.random());
        loop {
            let output = teacher.forward(&state)?;
            let action = if rng.random::<f64>() < epsilon {
                rng.random_range(0..actions)
            } else {
                argmax(&output)
            };
            buffer.push(DistillSample {
                state: state.clone(),
                teacher_output: output,
            })?;
            added += 1;
            if added == count {
                break;
            }
            let step = env.step(action)?;
            if step.done {
                break;
            }
            state = step.next_state;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Bandit, CartPole};
    use crate::nn::{Activation, NetworkSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(v: f64) -> DistillSample {
        DistillSample {
            state: vec![v],
            teacher_output: vec![v, -v],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = DistillBuffer::new(2).unwrap();
        for v in [1.0, 2.0, 3.0] {
            buf.push(sample(v)).unwrap();
        }
        let kept: Vec<f64> = buf.iter().map(|s| s.state[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn push_to_empty() {
        let mut buf = DistillBuffer::new(4).unwrap();
        buf.push(sample(1.0)).unwrap();
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn default_capacity_bound() {
        let mut buf = DistillBuffer::new(DEFAULT_CAPACITY).unwrap();
        for i in 0..=DEFAULT_CAPACITY {
            buf.push(sample(i as f64)).unwrap();
        }
        assert_eq!(buf.len(), 100_000);
        assert_eq!(buf.iter().next().unwrap().state[0], 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut buf = DistillBuffer::new(4).unwrap();
        buf.push(sample(1.0)).unwrap();
        let bad = DistillSample {
            state: vec![1.0, 2.0],
            teacher_output: vec![0.0, 0.0],
        };
        assert!(matches!(buf.push(bad), Err(Error::Parameter(_))));
        let mut tb = TransitionBuffer::new(4).unwrap();
        let t = Transition {
            state: vec![0.0],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0, 1.0],
            done: false,
        };
        assert!(tb.push(t).is_err());
    }

    #[test]
    fn single_element_sampling() {
        let mut buf = DistillBuffer::new(4).unwrap();
        buf.push(sample(7.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample_batch(3, &mut rng).unwrap();
        assert!(batch.iter().all(|s| s.state[0] == 7.0));
        assert_eq!(batch.len(), 3);
    }

    #[test]
    fn empty_sampling_is_state_error() {
        let buf = DistillBuffer::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_batch(1, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn sampling_is_deterministic_given_rng() {
        let mut buf = DistillBuffer::new(16).unwrap();
        for i in 0..16 {
            buf.push(sample(i as f64)).unwrap();
        }
        let a: Vec<f64> = buf
            .sample_batch(32, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap()
            .iter()
            .map(|s| s.state[0])
            .collect();
        let b: Vec<f64> = buf
            .sample_batch(32, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap()
            .iter()
            .map(|s| s.state[0])
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = DistillBuffer::new(10).unwrap();
        for i in 0..10 {
            buf.push(sample(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 10];
        for s in buf.sample_batch(100_000, &mut rng).unwrap() {
            counts[s.state[0] as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 0.1).abs() <= 0.01, "frequency {freq}");
        }
    }

    fn cartpole_teacher() -> DenseNetwork {
        let spec = NetworkSpec::new(4, vec![16], 2, Activation::Relu).unwrap();
        DenseNetwork::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn accumulation_adds_exact_count_and_labels_match_teacher() {
        let teacher = cartpole_teacher();
        let mut env = CartPole::new();
        let mut buf = DistillBuffer::new(DEFAULT_CAPACITY).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        accumulate_experience(&mut buf, &teacher, &mut env, 10_000, 0.05, &mut rng).unwrap();
        assert_eq!(buf.len(), 10_000);
        for s in buf.iter().step_by(97) {
            assert_eq!(s.teacher_output, teacher.forward(&s.state).unwrap());
        }
    }

    #[test]
    fn accumulation_is_reproducible() {
        let teacher = cartpole_teacher();
        let run = || {
            let mut env = CartPole::new();
            let mut buf = DistillBuffer::new(1000).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            accumulate_experience(&mut buf, &teacher, &mut env, 500, 0.0, &mut rng).unwrap();
            buf.iter().cloned().collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn accumulation_checks_action_count() {
        let spec = NetworkSpec::new(1, vec![], 3, Activation::Relu).unwrap();
        let teacher = DenseNetwork::zeros(spec).unwrap();
        let mut buf = DistillBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = accumulate_experience(&mut buf, &teacher, &mut Bandit::new(), 5, 0.0, &mut rng);
        assert!(matches!(res, Err(Error::Shape(_))));
    }
}
