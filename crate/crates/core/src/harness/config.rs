//! Experiment configuration: a flat `key = value` file, overridable key by
//! key from the command line.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, Algorithm};
use crate::dqn::{DqnConfig, EpsilonSchedule};
use crate::env::{EnvConfig, EnvError, MAX_SLOTS};
use crate::fcrl::{enumerate_windows, PretrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("{key}: cannot parse {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{key} {reason}")]
    Invalid { key: &'static str, reason: String },
}

impl From<EnvError> for ConfigError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig { key, reason } => ConfigError::Invalid { key, reason },
            other => ConfigError::Invalid { key: "env", reason: other.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    pub comm_turns: usize,
    pub invocation_budget: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub meta_buffer_capacity: usize,
    pub controller_buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync_period: u64,
    pub meta_epsilon: EpsilonSchedule,
    pub controller_epsilon: EpsilonSchedule,
    /// Episodes per training block and per evaluation block.
    pub block_size: usize,
    pub total_blocks: usize,
    pub seeds: Vec<u64>,
    pub pretrain: bool,
    pub pretrain_episodes: u64,
    /// Write wall-clock seconds into metrics; off gives reproducible files.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        ExperimentConfig {
            algorithm: Algorithm::Fcrl,
            env: EnvConfig::default(),
            comm_turns: agent.comm_turns,
            invocation_budget: agent.invocation_budget,
            gamma: agent.controller.gamma,
            learning_rate: agent.controller.learning_rate,
            meta_buffer_capacity: agent.meta.buffer_capacity,
            controller_buffer_capacity: agent.controller.buffer_capacity,
            batch_size: agent.controller.batch_size,
            target_sync_period: agent.controller.target_sync_period,
            meta_epsilon: agent.meta_epsilon,
            controller_epsilon: agent.controller_epsilon,
            block_size: 1000,
            total_blocks: 100,
            seeds: vec![1, 2, 3, 4, 5],
            pretrain: false,
            pretrain_episodes: 20_000,
            record_timing: true,
        }
    }
}

/// Every key accepted in config files and by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "algorithm",
    "n_agents",
    "n_slots",
    "n_scheduled",
    "availability_prob",
    "ensure_feasible",
    "comm_turns",
    "invocation_budget",
    "gamma",
    "learning_rate",
    "meta_buffer_capacity",
    "controller_buffer_capacity",
    "batch_size",
    "target_sync_period",
    "meta_epsilon_start",
    "meta_epsilon_end",
    "meta_epsilon_anneal",
    "controller_epsilon_start",
    "controller_epsilon_end",
    "controller_epsilon_anneal",
    "block_size",
    "total_blocks",
    "seeds",
    "pretrain",
    "pretrain_episodes",
    "record_timing",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

impl ExperimentConfig {
    /// Sets one key from its textual value; validation is separate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "algorithm" => self.algorithm = parse(key, v)?,
            "n_agents" => self.env.n_agents = parse(key, v)?,
            "n_slots" => self.env.n_slots = parse(key, v)?,
            "n_scheduled" => self.env.n_scheduled = parse(key, v)?,
            "availability_prob" => self.env.availability_prob = parse(key, v)?,
            "ensure_feasible" => self.env.ensure_feasible = parse(key, v)?,
            "comm_turns" => self.comm_turns = parse(key, v)?,
            "invocation_budget" => self.invocation_budget = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "meta_buffer_capacity" => self.meta_buffer_capacity = parse(key, v)?,
            "controller_buffer_capacity" => self.controller_buffer_capacity = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "target_sync_period" => self.target_sync_period = parse(key, v)?,
            "meta_epsilon_start" => self.meta_epsilon.start = parse(key, v)?,
            "meta_epsilon_end" => self.meta_epsilon.end = parse(key, v)?,
            "meta_epsilon_anneal" => self.meta_epsilon.anneal_steps = parse(key, v)?,
            "controller_epsilon_start" => self.controller_epsilon.start = parse(key, v)?,
            "controller_epsilon_end" => self.controller_epsilon.end = parse(key, v)?,
            "controller_epsilon_anneal" => self.controller_epsilon.anneal_steps = parse(key, v)?,
            "block_size" => self.block_size = parse(key, v)?,
            "total_blocks" => self.total_blocks = parse(key, v)?,
            "seeds" => self.seeds = parse_seeds(key, v)?,
            "pretrain" => self.pretrain = parse(key, v)?,
            "pretrain_episodes" => self.pretrain_episodes = parse(key, v)?,
            "record_timing" => self.record_timing = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: n + 1, text: raw.to_string() })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Parses a config file over the defaults without validating.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = ExperimentConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    /// Reads, applies `overrides` in order, then validates.
    pub fn load(path: &Path, overrides: &[(&str, String)]) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_text(&text)?;
        for (key, value) in overrides {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, reason: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, reason: reason.to_string() })
            }
        }
        self.env.validate()?;
        check(self.env.n_slots <= MAX_SLOTS, "n_slots", "must be at most 64")?;
        enumerate_windows(self.env.n_slots)?;
        check(self.comm_turns >= 1, "comm_turns", "must be at least 1")?;
        check(self.invocation_budget >= 1, "invocation_budget", "must be at least 1")?;
        check((0.0..=1.0).contains(&self.gamma), "gamma", "must lie in [0, 1]")?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be positive")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(self.meta_buffer_capacity >= 1, "meta_buffer_capacity", "must be at least 1")?;
        check(self.controller_buffer_capacity >= 1, "controller_buffer_capacity", "must be at least 1")?;
        check(self.target_sync_period >= 1, "target_sync_period", "must be at least 1")?;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        check(unit(self.meta_epsilon.start), "meta_epsilon_start", "must lie in [0, 1]")?;
        check(unit(self.meta_epsilon.end), "meta_epsilon_end", "must lie in [0, 1]")?;
        check(unit(self.controller_epsilon.start), "controller_epsilon_start", "must lie in [0, 1]")?;
        check(unit(self.controller_epsilon.end), "controller_epsilon_end", "must lie in [0, 1]")?;
        check(self.block_size >= 1, "block_size", "must be at least 1")?;
        check(self.total_blocks >= 1, "total_blocks", "must be at least 1")?;
        check(!self.seeds.is_empty(), "seeds", "must list at least one seed")?;
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        check(sorted.len() == self.seeds.len(), "seeds", "must not repeat")?;
        if self.pretrain {
            check(self.algorithm == Algorithm::Fcrl, "pretrain", "is only defined for fcrl")?;
            check(self.pretrain_episodes >= 1, "pretrain_episodes", "must be at least 1")?;
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        let dqn = |buffer_capacity| DqnConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            buffer_capacity,
            batch_size: self.batch_size,
            target_sync_period: self.target_sync_period,
        };
        AgentConfig {
            n_slots: self.env.n_slots,
            n_scheduled: self.env.n_scheduled,
            comm_turns: self.comm_turns,
            invocation_budget: self.invocation_budget,
            meta: dqn(self.meta_buffer_capacity),
            controller: dqn(self.controller_buffer_capacity),
            meta_epsilon: self.meta_epsilon,
            controller_epsilon: self.controller_epsilon,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig { episodes: self.pretrain_episodes, availability_prob: self.env.availability_prob }
    }

    /// The config as a file [`ExperimentConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("algorithm", self.algorithm.to_string()),
            ("n_agents", self.env.n_agents.to_string()),
            ("n_slots", self.env.n_slots.to_string()),
            ("n_scheduled", self.env.n_scheduled.to_string()),
            ("availability_prob", self.env.availability_prob.to_string()),
            ("ensure_feasible", self.env.ensure_feasible.to_string()),
            ("comm_turns", self.comm_turns.to_string()),
            ("invocation_budget", self.invocation_budget.to_string()),
            ("gamma", self.gamma.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("meta_buffer_capacity", self.meta_buffer_capacity.to_string()),
            ("controller_buffer_capacity", self.controller_buffer_capacity.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("target_sync_period", self.target_sync_period.to_string()),
            ("meta_epsilon_start", self.meta_epsilon.start.to_string()),
            ("meta_epsilon_end", self.meta_epsilon.end.to_string()),
            ("meta_epsilon_anneal", self.meta_epsilon.anneal_steps.to_string()),
            ("controller_epsilon_start", self.controller_epsilon.start.to_string()),
            ("controller_epsilon_end", self.controller_epsilon.end.to_string()),
            ("controller_epsilon_anneal", self.controller_epsilon.anneal_steps.to_string()),
            ("block_size", self.block_size.to_string()),
            ("total_blocks", self.total_blocks.to_string()),
            ("seeds", seeds.join(",")),
            ("pretrain", self.pretrain.to_string()),
            ("pretrain_episodes", self.pretrain_episodes.to_string()),
            ("record_timing", self.record_timing.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
