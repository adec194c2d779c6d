//! Rough timing of a greedy forward pass and a DQN minibatch update on the
//! controller network shape (18 -> 100 -> 50 -> 8).
//!
//! cargo run --release --example throughput

use std::time::Instant;

use fcrl_core::dqn::{DqnConfig, DqnLearner, Learner, Transition};
use fcrl_core::nn::{QNetwork, Scratch};
use fcrl_core::rng_stream;
use rand::Rng;

fn main() {
    let mut rng = rng_stream(0, 0);
    let net = QNetwork::new(18, 8, &mut rng);
    let mut scratch = Scratch::for_net(&net);
    let x: Vec<f64> = (0..18).map(|i| (i % 2) as f64).collect();
    let start = Instant::now();
    let mut acc = 0.0;
    for _ in 0..100_000 {
        acc += net.forward_with(&x, &mut scratch)[0];
    }
    println!("{:.2} us per forward (checksum {acc:.3})", start.elapsed().as_secs_f64() * 1e6 / 100_000.0);

    let mut learner = DqnLearner::new(QNetwork::new(18, 8, &mut rng), DqnConfig::default());
    for _ in 0..5000 {
        let s: Vec<f64> = (0..18).map(|_| f64::from(rng.gen::<bool>() as u8)).collect();
        learner.remember(Transition { state: s.clone(), action: rng.gen_range(0..8), reward: 1.0, next_state: s, terminal: rng.gen() });
    }
    let n = 5000;
    let start = Instant::now();
    for _ in 0..n {
        learner.learn(&mut rng).unwrap();
    }
    println!("{:.1} us per update (batch 32)", start.elapsed().as_secs_f64() * 1e6 / n as f64);
}
