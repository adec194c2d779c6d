//! The distributed scheduling problem.
//!
//! `N` agents each own a private availability database over `B` time slots.
//! An episode picks `m` of them in a required order; the episode is solved
//! when every picked agent outputs an available slot and the slots are
//! strictly increasing along the order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest slot count a [`Database`] can hold (one bit per slot in a `u64`).
pub const MAX_SLOTS: usize = 64;

/// Number of database resamples attempted before [`new_episode`] gives up on
/// finding a feasible instance.
pub const RESAMPLE_BUDGET: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("{key} {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("no feasible instance found after {attempts} resamples; check n_slots, n_scheduled and availability_prob")]
    NoFeasibleInstance { attempts: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Availability bit vector of one agent. Bit `t` set means slot `t` is free.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Database {
    bits: u64,
    len: u8,
}

/// Checks that `n_slots` is a power of two in `[2, MAX_SLOTS]`.
pub fn validate_slot_count(n_slots: usize) -> Result<(), EnvError> {
    if !(2..=MAX_SLOTS).contains(&n_slots) || !n_slots.is_power_of_two() {
        return Err(EnvError::InvalidConfig {
            key: "n_slots",
            reason: format!("must be a power of two in [2, {MAX_SLOTS}], got {n_slots}"),
        });
    }
    Ok(())
}

impl Database {
    /// Builds a database from a slot mask. Panics if `len` exceeds [`MAX_SLOTS`].
    pub fn from_bits(bits: u64, len: usize) -> Self {
        assert!(len <= MAX_SLOTS, "database length {len} exceeds {MAX_SLOTS}");
        let mask = if len == MAX_SLOTS { u64::MAX } else { (1u64 << len) - 1 };
        Database { bits: bits & mask, len: len as u8 }
    }

    pub fn from_slots(len: usize, available: &[usize]) -> Self {
        let mut bits = 0u64;
        for &t in available {
            assert!(t < len, "slot {t} out of range for length {len}");
            bits |= 1 << t;
        }
        Database::from_bits(bits, len)
    }

    pub fn full(len: usize) -> Self {
        Database::from_bits(u64::MAX, len)
    }

    pub fn empty(len: usize) -> Self {
        Database::from_bits(0, len)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn is_available(&self, slot: usize) -> bool {
        slot < self.len() && self.bits & (1 << slot) != 0
    }

    /// Slot-wise AND with another mask of the same length.
    pub fn intersect(&self, other: &Database) -> Database {
        debug_assert_eq!(self.len, other.len);
        Database { bits: self.bits & other.bits, len: self.len }
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Available slots in ascending order.
    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&t| self.is_available(t))
    }

    /// Smallest available slot strictly greater than `after` (or the smallest
    /// overall when `after` is `None`).
    pub fn first_available_after(&self, after: Option<usize>) -> Option<usize> {
        let from = after.map_or(0, |a| a + 1);
        if from >= self.len() {
            return None;
        }
        let rest = self.bits >> from;
        (rest != 0).then(|| from + rest.trailing_zeros() as usize)
    }

    /// Writes the mask as 0/1 reals into `out` (length must equal `len`).
    pub fn write_indicator(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for (t, o) in out.iter_mut().enumerate() {
            *o = if self.is_available(t) { 1.0 } else { 0.0 };
        }
    }
}

impl fmt::Display for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in 0..self.len() {
            f.write_str(if self.is_available(t) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Database({self})")
    }
}

impl FromStr for Database {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s.len() > MAX_SLOTS {
            return Err(format!("expected 1..={MAX_SLOTS} slot characters, got {}", s.len()));
        }
        let mut bits = 0u64;
        for (t, c) in s.chars().enumerate() {
            match c {
                '1' => bits |= 1 << t,
                '0' => {}
                other => return Err(format!("unexpected character {other:?} (expected 0 or 1)")),
            }
        }
        Ok(Database::from_bits(bits, s.len()))
    }
}

/// Parses the fixture format: one database per line as a 0/1 string.
/// Blank lines and `#` comments are skipped. All databases must share a
/// power-of-two length.
pub fn parse_databases(text: &str) -> Result<Vec<Database>, EnvError> {
    let mut out: Vec<Database> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let db: Database = line.parse().map_err(|reason| EnvError::Parse { line: i + 1, reason })?;
        if let Some(first) = out.first() {
            if first.len() != db.len() {
                return Err(EnvError::Parse {
                    line: i + 1,
                    reason: format!("length {} differs from first database length {}", db.len(), first.len()),
                });
            }
        } else {
            validate_slot_count(db.len()).map_err(|e| EnvError::Parse { line: i + 1, reason: e.to_string() })?;
        }
        out.push(db);
    }
    if out.is_empty() {
        return Err(EnvError::Parse { line: 0, reason: "no databases found".into() });
    }
    Ok(out)
}

pub fn format_databases(dbs: &[Database]) -> String {
    dbs.iter().map(|d| format!("{d}\n")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_slots: usize,
    pub n_scheduled: usize,
    pub availability_prob: f64,
    pub ensure_feasible: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { n_agents: 20, n_slots: 8, n_scheduled: 4, availability_prob: 0.5, ensure_feasible: true }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |key, reason: String| Err(EnvError::InvalidConfig { key, reason });
        if self.n_agents == 0 {
            return bad("n_agents", "must be positive".into());
        }
        validate_slot_count(self.n_slots)?;
        if !self.n_scheduled.is_multiple_of(2) {
            return bad("n_scheduled", "must be even".into());
        }
        if self.n_scheduled < 2 || self.n_scheduled > self.n_agents {
            return bad("n_scheduled", format!("must be in [2, n_agents={}], got {}", self.n_agents, self.n_scheduled));
        }
        if self.n_scheduled > self.n_slots {
            return bad(
                "n_scheduled",
                format!("must not exceed n_slots={} (no strictly increasing schedule exists)", self.n_slots),
            );
        }
        if !(self.availability_prob > 0.0 && self.availability_prob <= 1.0) {
            return bad("availability_prob", format!("must be in (0, 1], got {}", self.availability_prob));
        }
        Ok(())
    }
}

/// One scheduling instance: agents in required order and their databases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub agent_ids: Vec<usize>,
    pub databases: Vec<Database>,
}

impl EpisodeSpec {
    /// Builds an instance from databases alone, numbering agents `0..m`.
    pub fn from_databases(databases: Vec<Database>) -> Self {
        EpisodeSpec { agent_ids: (0..databases.len()).collect(), databases }
    }

    pub fn n_scheduled(&self) -> usize {
        self.databases.len()
    }

    pub fn n_slots(&self) -> usize {
        self.databases.first().map_or(0, Database::len)
    }
}

/// Final actions of the scheduled agents, in required order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub actions: Vec<usize>,
}

/// Samples an instance. Agents are drawn uniformly without replacement; each
/// slot is independently available with `availability_prob`. With
/// `ensure_feasible` the databases are resampled until a schedule exists.
pub fn new_episode<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<EpisodeSpec, EnvError> {
    config.validate()?;
    let agent_ids = index::sample(rng, config.n_agents, config.n_scheduled).into_vec();
    let sample_dbs = |rng: &mut R| -> Vec<Database> {
        (0..config.n_scheduled)
            .map(|_| {
                let mut bits = 0u64;
                for t in 0..config.n_slots {
                    if rng.gen_bool(config.availability_prob) {
                        bits |= 1 << t;
                    }
                }
                Database::from_bits(bits, config.n_slots)
            })
            .collect()
    };
    if !config.ensure_feasible {
        return Ok(EpisodeSpec { agent_ids, databases: sample_dbs(rng) });
    }
    for _ in 0..RESAMPLE_BUDGET {
        let databases = sample_dbs(rng);
        if is_feasible(&databases) {
            return Ok(EpisodeSpec { agent_ids, databases });
        }
    }
    Err(EnvError::NoFeasibleInstance { attempts: RESAMPLE_BUDGET })
}

/// 1 when the actions are strictly increasing and each is available to its
/// agent, else 0. Panics if the schedule length differs from the instance.
pub fn extrinsic_reward(episode: &EpisodeSpec, schedule: &Schedule) -> f64 {
    assert_eq!(schedule.actions.len(), episode.databases.len(), "schedule length must equal m");
    let available = schedule.actions.iter().zip(&episode.databases).all(|(&a, db)| db.is_available(a));
    let increasing = schedule.actions.windows(2).all(|w| w[0] < w[1]);
    if available && increasing {
        1.0
    } else {
        0.0
    }
}

/// Greedy witness: each agent takes its smallest free slot after the
/// previous agent's. Returns `None` if some agent has nothing left.
pub fn greedy_schedule(databases: &[Database]) -> Option<Schedule> {
    let mut prev = None;
    let mut actions = Vec::with_capacity(databases.len());
    for db in databases {
        let slot = db.first_available_after(prev)?;
        actions.push(slot);
        prev = Some(slot);
    }
    Some(Schedule { actions })
}

/// Whether some strictly increasing, database-valid schedule exists.
/// Taking the smallest valid slot never removes options from later agents,
/// so the greedy scan is exact.
pub fn is_feasible(databases: &[Database]) -> bool {
    greedy_schedule(databases).is_some()
}

/// Exact number of valid schedules, by dynamic programming over
/// (agent, slot of that agent).
pub fn count_solutions(databases: &[Database]) -> u64 {
    let Some(first) = databases.first() else { return 0 };
    let b = first.len();
    // ways[t]: assignments of the agents so far with the last one at slot t
    let mut ways: Vec<u64> = (0..b).map(|t| u64::from(first.is_available(t))).collect();
    for db in &databases[1..] {
        let mut next = vec![0u64; b];
        let mut below = 0u64;
        for t in 0..b {
            if db.is_available(t) {
                next[t] = below;
            }
            below += ways[t];
        }
        ways = next;
    }
    ways.iter().sum()
}
