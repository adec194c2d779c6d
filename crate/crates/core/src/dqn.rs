//! DQN machinery shared by every agent: replay, exploration and TD targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{td_step_with, BatchScratch, NnError, OptimizerState, QNetwork, TdSample, TrainScratch};
use crate::SimRng;

/// Whether an episode learns or only evaluates the greedy policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions; once full the oldest entry is
/// overwritten.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), inserted: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes over the buffer's lifetime.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Contents from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { (self.inserted % self.capacity as u64) as usize };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement; `None` while the buffer is empty.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, batch_size: usize, rng: &mut R) -> Option<Vec<&'a Transition>> {
        if self.items.is_empty() {
            return None;
        }
        Some((0..batch_size).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}

/// Linear anneal from `start` to `end` over `anneal_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.end.clamp(0.0, 1.0);
        }
        let frac = step as f64 / self.anneal_steps as f64;
        (self.start + (self.end - self.start) * frac).clamp(0.0, 1.0)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniform action, otherwise [`argmax`].
/// At `epsilon == 0` the rng is not touched.
pub fn epsilon_greedy<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(!q_values.is_empty(), "no actions to choose from");
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// `r` for terminal transitions, else `r + gamma * max_a Q_target(s', a)`.
pub fn td_targets(batch: &[&Transition], target_net: &QNetwork, gamma: f64) -> Vec<f64> {
    td_targets_with(batch, target_net, gamma, &mut BatchScratch::default())
}

pub fn td_targets_with(batch: &[&Transition], target_net: &QNetwork, gamma: f64, scratch: &mut BatchScratch) -> Vec<f64> {
    let open: Vec<&[f64]> = batch.iter().filter(|t| !t.terminal).map(|t| &t.next_state[..]).collect();
    let mut bootstrap = Vec::with_capacity(open.len());
    if !open.is_empty() {
        let q = target_net.forward_batch(&open, scratch);
        bootstrap.extend(q.rows().into_iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    }
    let mut next = bootstrap.into_iter();
    batch
        .iter()
        .map(|t| if t.terminal { t.reward } else { t.reward + gamma * next.next().expect("one value per open transition") })
        .collect()
}

/// Hard copy of the learner into the target every `period` steps.
/// Returns whether a copy happened.
pub fn maybe_sync_target(learner: &QNetwork, target: &mut QNetwork, step: u64, period: u64) -> bool {
    assert!(period >= 1, "sync period must be at least 1");
    if step.is_multiple_of(period) {
        target.copy_from(learner);
        true
    } else {
        false
    }
}

/// Anything that maps an encoded state to per-action values.
pub trait QFunction {
    fn q_values(&self, state: &[f64]) -> Vec<f64>;
}

impl QFunction for QNetwork {
    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.forward(state)
    }
}

/// A [`QFunction`] that can also store experience and learn from it. The
/// defaults do nothing, which suits fixed evaluation policies.
pub trait Learner: QFunction {
    fn remember(&mut self, _transition: Transition) {}

    /// One minibatch update. `Ok(None)` when there is nothing to learn from.
    fn learn(&mut self, _rng: &mut SimRng) -> Result<Option<f64>, NnError> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync_period: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig { gamma: 0.95, learning_rate: 1e-3, buffer_capacity: 50_000, batch_size: 32, target_sync_period: 500 }
    }
}

/// Online network, target network, optimizer and replay buffer for one
/// role (meta-controller or the shared controller).
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: OptimizerState,
    pub buffer: ReplayBuffer,
    config: DqnConfig,
    grad_steps: u64,
    scratch: TrainScratch,
    target_scratch: BatchScratch,
}

impl DqnLearner {
    pub fn new(online: QNetwork, config: DqnConfig) -> Self {
        DqnLearner {
            target: online.clone(),
            optimizer: OptimizerState::adam(&online, config.learning_rate),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            scratch: TrainScratch::for_net(&online),
            target_scratch: BatchScratch::default(),
            online,
            config,
            grad_steps: 0,
        }
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }
}

impl QFunction for DqnLearner {
    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.online.forward(state)
    }
}

impl Learner for DqnLearner {
    fn remember(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn learn(&mut self, rng: &mut SimRng) -> Result<Option<f64>, NnError> {
        let Some(batch) = self.buffer.sample(self.config.batch_size, rng) else {
            return Ok(None);
        };
        let targets = td_targets_with(&batch, &self.target, self.config.gamma, &mut self.target_scratch);
        let samples: Vec<TdSample<'_>> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &target)| TdSample { input: &t.state, action: t.action, target })
            .collect();
        let loss = td_step_with(&mut self.online, &mut self.optimizer, &samples, &mut self.scratch)?;
        self.grad_steps += 1;
        maybe_sync_target(&self.online, &mut self.target, self.grad_steps, self.config.target_sync_period);
        Ok(Some(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(id: usize) -> Transition {
        Transition { state: vec![id as f64], action: 0, reward: 0.0, next_state: vec![id as f64], terminal: false }
    }

    #[test]
    fn ring_eviction() {
        let mut buf = ReplayBuffer::new(2);
        for i in 1..=3 {
            buf.push(t(i));
        }
        let held: Vec<f64> = buf.iter_ordered().map(|x| x.state[0]).collect();
        assert_eq!(held, vec![2.0, 3.0]);
        let mut big = ReplayBuffer::new(100);
        for i in 0..10_000 {
            big.push(t(i));
        }
        assert_eq!(big.len(), 100);
        assert_eq!(big.inserted(), 10_000);
    }

    #[test]
    fn sampling_single_and_empty() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut buf = ReplayBuffer::new(8);
        assert!(buf.sample(32, &mut rng).is_none());
        buf.push(t(7));
        let batch = buf.sample(32, &mut rng).unwrap();
        assert_eq!(batch.len(), 32);
        assert!(batch.iter().all(|x| x.state[0] == 7.0));
    }

    #[test]
    fn greedy_examples() {
        let mut rng = SimRng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[0.1, 0.9, 0.3], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[0.5, 0.5], 0.0, &mut rng), 0);
    }

    #[test]
    fn schedule_interpolates_then_clamps() {
        let s = EpsilonSchedule { start: 1.0, end: 0.05, anneal_steps: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(1_000_000), 0.05);
    }

    #[test]
    fn target_examples() {
        let zero = QNetwork::zeros(2, &[3], 2);
        let mut net = QNetwork::zeros(2, &[3], 2);
        net.layers_mut()[1].bias_mut().copy_from_slice(&[1.0, 0.25]);
        let term = Transition { state: vec![0.0; 2], action: 0, reward: 1.0, next_state: vec![9.0; 2], terminal: true };
        let step = Transition { reward: 0.0, terminal: false, ..term.clone() };
        assert_eq!(td_targets(&[&term], &net, 0.95), vec![1.0]);
        assert_eq!(td_targets(&[&step], &net, 0.95), vec![0.95]);
        assert_eq!(td_targets(&[&term, &step], &net, 0.0), vec![1.0, 0.0]);
        assert_eq!(td_targets(&[&step], &zero, 0.95), vec![0.0]);
    }

    #[test]
    fn sync_period() {
        let mut rng = SimRng::seed_from_u64(1);
        let learner = QNetwork::new(4, 2, &mut rng);
        let mut target = QNetwork::new(4, 2, &mut rng);
        assert!(!maybe_sync_target(&learner, &mut target, 499, 500));
        assert_ne!(target, learner);
        assert!(maybe_sync_target(&learner, &mut target, 500, 500));
        assert_eq!(target.forward(&[1.0, 0.0, 1.0, 0.0]), learner.forward(&[1.0, 0.0, 1.0, 0.0]));
        let mut every = QNetwork::new(4, 2, &mut rng);
        for step in 1..5 {
            assert!(maybe_sync_target(&learner, &mut every, step, 1));
        }
    }

    #[test]
    fn learner_skips_until_data() {
        let mut rng = SimRng::seed_from_u64(2);
        let net = QNetwork::new(1, 2, &mut rng);
        let mut learner = DqnLearner::new(net, DqnConfig { buffer_capacity: 10, target_sync_period: 1, ..Default::default() });
        assert_eq!(learner.learn(&mut rng).unwrap(), None);
        learner.remember(Transition { terminal: true, reward: 1.0, ..t(1) });
        assert!(learner.learn(&mut rng).unwrap().is_some());
        assert_eq!(learner.grad_steps(), 1);
        assert_eq!(learner.target, learner.online);
    }
}
