//! Hand-built policies for driving episodes without trained networks.
#![allow(dead_code)]

use fcrl_core::dqn::{Learner, QFunction, Transition};
use fcrl_core::nn::NnError;
use fcrl_core::SimRng;

/// Q-values computed by a plain function of the encoded state.
pub struct TableQ<F: Fn(&[f64]) -> Vec<f64>> {
    pub policy: F,
    pub transitions: Vec<Transition>,
    pub learn_calls: usize,
}

impl<F: Fn(&[f64]) -> Vec<f64>> TableQ<F> {
    pub fn new(policy: F) -> Self {
        TableQ { policy, transitions: Vec::new(), learn_calls: 0 }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> QFunction for TableQ<F> {
    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        (self.policy)(state)
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Learner for TableQ<F> {
    fn remember(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    fn learn(&mut self, _rng: &mut SimRng) -> Result<Option<f64>, NnError> {
        self.learn_calls += 1;
        Ok(None)
    }
}

pub fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// FCRL controller over `b` slots: the first of a pair takes its earliest
/// constrained slot, the second its latest. Picks slot 0 when nothing is free.
pub fn min_max_controller(b: usize) -> impl Fn(&[f64]) -> Vec<f64> {
    move |s: &[f64]| {
        let free: Vec<usize> = (0..b).filter(|&t| s[t] == 1.0).collect();
        let first = s[b] == 1.0;
        let pick = if first { free.first() } else { free.last() };
        one_hot(b, pick.copied().unwrap_or(0))
    }
}

/// Meta-controller always choosing window `w` out of `b - 1`.
pub fn fixed_meta(b: usize, w: usize) -> impl Fn(&[f64]) -> Vec<f64> {
    move |_: &[f64]| one_hot(b - 1, w)
}
