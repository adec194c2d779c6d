use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use fcrl_core::dqn::{epsilon_greedy, td_targets, EpsilonSchedule, ReplayBuffer, Transition};
use fcrl_core::nn::QNetwork;
use fcrl_core::rng_stream;

fn transition(seq: usize, reward: f64, terminal: bool) -> Transition {
    Transition { state: vec![seq as f64], action: 0, reward, next_state: vec![seq as f64], terminal }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(10);
    for k in 0..10 {
        buffer.push(transition(k, 0.0, false));
    }
    let mut rng = rng_stream(21, 0);
    let mut counts = [0f64; 10];
    for _ in 0..1000 {
        for t in buffer.sample(100, &mut rng).unwrap() {
            counts[t.state[0] as usize] += 1.0;
        }
    }
    let expected = 100_000.0 / 10.0;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-squared {stat}, p = {p}");
}

#[test]
fn full_exploration_is_uniform() {
    let mut rng = rng_stream(22, 0);
    let mut counts = [0usize; 3];
    for _ in 0..30_000 {
        counts[epsilon_greedy(&[0.1, 0.9, 0.3], 1.0, &mut rng)] += 1;
    }
    for c in counts {
        assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn size_stays_at_capacity() {
    let mut buffer = ReplayBuffer::new(100);
    for k in 0..10_000 {
        buffer.push(transition(k, 0.0, false));
    }
    assert_eq!(buffer.len(), 100);
    let mut rng = rng_stream(23, 0);
    let one = {
        let mut b = ReplayBuffer::new(5);
        b.push(transition(7, 0.0, false));
        b
    };
    let batch = one.sample(32, &mut rng).unwrap();
    assert_eq!(batch.len(), 32);
    assert!(batch.iter().all(|t| t.state[0] == 7.0));
}

/// Zero network whose output is the constant `values`.
fn constant_net(values: &[f64]) -> QNetwork {
    let mut net = QNetwork::zeros(1, &[3, 2], values.len());
    net.layers_mut().last_mut().unwrap().bias_mut().copy_from_slice(values);
    net
}

proptest! {
    #[test]
    fn buffer_keeps_last_insertions_in_order(capacity in 1usize..40, pushes in 0usize..200) {
        let mut buffer = ReplayBuffer::new(capacity);
        for k in 0..pushes {
            buffer.push(transition(k, 0.0, false));
        }
        let kept: Vec<usize> = buffer.iter_ordered().map(|t| t.state[0] as usize).collect();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, expected);
        prop_assert!(buffer.len() <= capacity);
    }

    #[test]
    fn greedy_is_argmax_lowest_tie(q in prop::collection::vec(-5i32..5, 1..10), seed in any::<u64>()) {
        let q: Vec<f64> = q.into_iter().map(f64::from).collect();
        let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = q.iter().position(|&v| v == max).unwrap();
        prop_assert_eq!(epsilon_greedy(&q, 0.0, &mut rng_stream(seed, 0)), first);
    }

    #[test]
    fn targets_monotone(r in -1.0f64..1.0, dr in 0.0f64..1.0, base in prop::collection::vec(-1.0f64..1.0, 3), shift in 0.0f64..1.0, gamma in 0.0f64..1.0) {
        let lifted: Vec<f64> = base.iter().map(|b| b + shift).collect();
        let t = transition(0, r, false);
        let t_more = transition(0, r + dr, false);
        let low = td_targets(&[&t], &constant_net(&base), gamma)[0];
        prop_assert!(td_targets(&[&t_more], &constant_net(&base), gamma)[0] >= low);
        prop_assert!(td_targets(&[&t], &constant_net(&lifted), gamma)[0] >= low);
        let max = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((low - (r + gamma * max)).abs() < 1e-12);
        let terminal = transition(0, r, true);
        prop_assert_eq!(td_targets(&[&terminal], &constant_net(&lifted), gamma)[0], r);
    }

    #[test]
    fn epsilon_stays_in_unit_interval(start in 0.0f64..=1.0, end in 0.0f64..=1.0, steps in 1u64..1000, at in 0u64..2000) {
        let s = EpsilonSchedule { start, end, anneal_steps: steps };
        let v = s.value(at);
        prop_assert!((0.0..=1.0).contains(&v));
        if at >= steps {
            prop_assert_eq!(v, end);
        }
    }
}
