//! What every agent exposes to the experiment harness, and the per-episode
//! record it produces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dqn::{DqnConfig, EpsilonSchedule, Mode};
use crate::env::EpisodeSpec;
use crate::nn::{NnError, QNetwork};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fcrl,
    Marl,
    Hrl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Fcrl, Algorithm::Marl, Algorithm::Hrl];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Fcrl => "fcrl",
            Algorithm::Marl => "marl",
            Algorithm::Hrl => "hrl",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fcrl" => Ok(Algorithm::Fcrl),
            "marl" => Ok(Algorithm::Marl),
            "hrl" => Ok(Algorithm::Hrl),
            other => Err(format!("unknown algorithm {other:?} (expected fcrl, marl or hrl)")),
        }
    }
}

/// One meta-controller invocation (or, for MARL, the single joint
/// negotiation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationLog {
    /// Positions in the required order of the agents that acted.
    pub agents: Vec<usize>,
    /// Constraint window index chosen by the meta-controller.
    pub window: Option<usize>,
    /// Actions per communication turn, one entry per acting agent.
    pub actions: Vec<Vec<usize>>,
    /// Critic reward per turn; empty when no critic is involved.
    pub intrinsic: Vec<f64>,
}

impl InvocationLog {
    /// Whether the critic accepted the final turn.
    pub fn succeeded(&self) -> Option<bool> {
        self.intrinsic.last().map(|&r| r > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub algorithm: Algorithm,
    pub agent_ids: Vec<usize>,
    /// Final slots in required order; `None` if the budget ran out first.
    pub schedule: Option<Vec<usize>>,
    pub extrinsic_reward: f64,
    /// Meta-controller invocations; 0 for MARL, which has no meta-controller.
    pub invocations: usize,
    pub log: Vec<InvocationLog>,
}

impl EpisodeRecord {
    /// Fraction of invocations whose final turn passed the critic.
    pub fn intrinsic_success_rate(&self) -> Option<f64> {
        let outcomes: Vec<bool> = self.log.iter().filter_map(InvocationLog::succeeded).collect();
        if outcomes.is_empty() {
            return None;
        }
        Some(outcomes.iter().filter(|&&ok| ok).count() as f64 / outcomes.len() as f64)
    }
}

/// A trainable scheduling agent owning its networks, buffers and
/// exploration state.
pub trait Agent {
    fn algorithm(&self) -> Algorithm;

    /// Plays one episode; in [`Mode::Train`] it explores and learns, in
    /// [`Mode::Eval`] it acts greedily and changes nothing.
    fn run_episode(&mut self, episode: &EpisodeSpec, mode: Mode) -> Result<EpisodeRecord, NnError>;

    /// Named online networks, e.g. for checkpoints.
    fn networks(&self) -> Vec<(&'static str, &QNetwork)>;

    /// Combined parameter checksum of every online network.
    fn param_checksum(&self) -> u64 {
        self.networks().iter().fold(0u64, |acc, (_, net)| acc.rotate_left(17) ^ net.checksum())
    }
}

/// Shape and hyperparameters shared by all three agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub n_slots: usize,
    pub n_scheduled: usize,
    /// Communication turns per negotiation; the last turn's actions are final.
    pub comm_turns: usize,
    /// Meta-controller invocations allowed per episode.
    pub invocation_budget: usize,
    pub meta: DqnConfig,
    pub controller: DqnConfig,
    pub meta_epsilon: EpsilonSchedule,
    pub controller_epsilon: EpsilonSchedule,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            n_slots: 8,
            n_scheduled: 4,
            comm_turns: 2,
            invocation_budget: 10,
            meta: DqnConfig::default(),
            controller: DqnConfig::default(),
            meta_epsilon: EpsilonSchedule { start: 1.0, end: 0.05, anneal_steps: 50_000 },
            controller_epsilon: EpsilonSchedule { start: 1.0, end: 0.05, anneal_steps: 20_000 },
        }
    }
}

/// Independent random streams owned by one agent.
#[derive(Debug, Clone)]
pub struct AgentRngs {
    pub init: SimRng,
    pub explore: SimRng,
    pub replay: SimRng,
}

/// Exploration rates for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploration {
    pub meta: f64,
    pub controller: f64,
}

impl Exploration {
    pub const GREEDY: Exploration = Exploration { meta: 0.0, controller: 0.0 };
}
