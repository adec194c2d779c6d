//! The federated-control agent.
//!
//! A meta-controller walks the required agent order two at a time. For each
//! pair it picks a constraint window; the pair's controllers then exchange
//! actions for `comm_turns` simultaneous turns, each seeing only its own
//! window-restricted database, its position in the pair and the partner's
//! previous action. A critic rewards both controllers when their final
//! actions are valid and ordered. Failed pairs are retried under a new
//! window until the invocation budget is spent.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, AgentRngs, Algorithm, EpisodeRecord, Exploration, InvocationLog};
use crate::dqn::{epsilon_greedy, DqnLearner, Learner, Mode, QFunction, Transition};
use crate::env::{extrinsic_reward, is_feasible, validate_slot_count, Database, EnvError, EpisodeSpec, Schedule};
use crate::nn::{NnError, QNetwork};
use crate::{rng_stream, SimRng};

/// Contiguous, size-aligned block of slots `[start, start + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintWindow {
    pub start: usize,
    pub size: usize,
}

impl ConstraintWindow {
    pub fn end(&self) -> usize {
        self.start + self.size
    }

    pub fn contains(&self, slot: usize) -> bool {
        slot >= self.start && slot < self.end()
    }

    pub fn mask(&self, n_slots: usize) -> Database {
        let bits = if self.size >= 64 { u64::MAX } else { ((1u64 << self.size) - 1) << self.start };
        Database::from_bits(bits, n_slots)
    }
}

/// Meta-controller action space: sizes `B, B/2, ..., 2`, each tiling the
/// slots, ordered by size descending then start ascending. `B - 1` windows.
pub fn enumerate_windows(n_slots: usize) -> Result<Vec<ConstraintWindow>, EnvError> {
    validate_slot_count(n_slots)?;
    let mut windows = Vec::with_capacity(n_slots - 1);
    let mut size = n_slots;
    while size >= 2 {
        windows.extend((0..n_slots / size).map(|k| ConstraintWindow { start: k * size, size }));
        size /= 2;
    }
    Ok(windows)
}

/// Meta-controller bookkeeping within an episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetaState {
    /// Completed subtasks in order: pair indices for FCRL, agent positions for HRL.
    pub done_subtasks: Vec<usize>,
    /// Accepted slots, in schedule order.
    pub done_times: Vec<usize>,
    /// Windows already tried for the current subtask.
    pub tried_windows: BTreeSet<usize>,
    pub invocations: usize,
}

impl MetaState {
    pub(crate) fn record_outcome(&mut self, subtask: usize, window: usize, accepted: Option<&[usize]>) {
        self.invocations += 1;
        match accepted {
            Some(times) => {
                self.done_subtasks.push(subtask);
                self.done_times.extend_from_slice(times);
                self.tried_windows.clear();
            }
            None => {
                self.tried_windows.insert(window);
            }
        }
    }
}

/// `[latest accepted slot one-hot (B)] ++ [tried windows multi-hot (B-1)]`.
pub fn encode_meta_state(ms: &MetaState, n_slots: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n_slots - 1];
    if let Some(&latest) = ms.done_times.last() {
        v[latest] = 1.0;
    }
    for &w in &ms.tried_windows {
        v[n_slots + w] = 1.0;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairPosition {
    First,
    Second,
}

/// What one controller of a negotiating pair observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerView {
    /// Own database restricted to the current window.
    pub constrained_db: Database,
    pub position: PairPosition,
    /// Partner's action in the previous turn.
    pub last_comm: Option<usize>,
}

/// `[constrained db (B)] ++ [position one-hot (2)] ++ [partner action one-hot (B)]`.
pub fn encode_controller_state(view: &ControllerView, n_slots: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n_slots + 2];
    view.constrained_db.write_indicator(&mut v[..n_slots]);
    v[n_slots + view.position as usize] = 1.0;
    if let Some(a) = view.last_comm {
        v[n_slots + 2 + a] = 1.0;
    }
    v
}

/// Shared intrinsic reward: 1 iff both actions lie in their window-restricted
/// databases and `a_i < a_j`.
pub fn critic(window: &ConstraintWindow, db_i: &Database, db_j: &Database, a_i: usize, a_j: usize) -> f64 {
    let valid = |db: &Database, a: usize| window.contains(a) && db.is_available(a);
    if valid(db_i, a_i) && valid(db_j, a_j) && a_i < a_j {
        1.0
    } else {
        0.0
    }
}

/// Disjoint consecutive pairs `(0,1), (2,3), ...` in required order; returns
/// the pair index and agent positions of the first pair not yet done.
/// Panics when every pair is done.
pub fn next_controller_pair(ms: &MetaState, n_scheduled: usize) -> (usize, (usize, usize)) {
    let k = (0..n_scheduled / 2)
        .find(|k| !ms.done_subtasks.contains(k))
        .expect("next_controller_pair called after every pair completed");
    (k, (2 * k, 2 * k + 1))
}

/// Outcome of one pair negotiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Negotiation {
    pub actions: Vec<[usize; 2]>,
    pub intrinsic: Vec<f64>,
}

/// Runs `turns` simultaneous exchanges between two controllers sharing one
/// policy, storing each controller's transition per turn when learning.
#[allow(clippy::too_many_arguments)]
fn negotiate<C: Learner>(
    controller: &mut C,
    window: &ConstraintWindow,
    db_i: &Database,
    db_j: &Database,
    n_slots: usize,
    turns: usize,
    epsilon: f64,
    learning: bool,
    rng: &mut SimRng,
) -> Negotiation {
    let mask = window.mask(n_slots);
    let mut views = [
        ControllerView { constrained_db: db_i.intersect(&mask), position: PairPosition::First, last_comm: None },
        ControllerView { constrained_db: db_j.intersect(&mask), position: PairPosition::Second, last_comm: None },
    ];
    let mut out = Negotiation { actions: Vec::with_capacity(turns), intrinsic: Vec::with_capacity(turns) };
    for turn in 1..=turns {
        let states = views.map(|v| encode_controller_state(&v, n_slots));
        let a_i = epsilon_greedy(&controller.q_values(&states[0]), epsilon, rng);
        let a_j = epsilon_greedy(&controller.q_values(&states[1]), epsilon, rng);
        let next = [
            ControllerView { last_comm: Some(a_j), ..views[0] },
            ControllerView { last_comm: Some(a_i), ..views[1] },
        ];
        let reward = critic(window, db_i, db_j, a_i, a_j);
        if learning {
            let [s_i, s_j] = states;
            for (state, action, view) in [(s_i, a_i, &next[0]), (s_j, a_j, &next[1])] {
                controller.remember(Transition {
                    state,
                    action,
                    reward,
                    next_state: encode_controller_state(view, n_slots),
                    terminal: turn == turns,
                });
            }
        }
        out.actions.push([a_i, a_j]);
        out.intrinsic.push(reward);
        views = next;
    }
    out
}

/// Episode-level settings for [`run_fcrl_episode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub n_slots: usize,
    pub comm_turns: usize,
    pub invocation_budget: usize,
    pub windows: Vec<ConstraintWindow>,
}

impl EpisodeSettings {
    pub fn from_config(config: &AgentConfig) -> Result<Self, EnvError> {
        Ok(EpisodeSettings {
            n_slots: config.n_slots,
            comm_turns: config.comm_turns,
            invocation_budget: config.invocation_budget,
            windows: enumerate_windows(config.n_slots)?,
        })
    }
}

/// Random streams used while playing an episode.
pub struct EpisodeRngs<'a> {
    pub explore: &'a mut SimRng,
    pub replay: &'a mut SimRng,
}

/// Plays one FCRL episode. In train mode both networks store transitions
/// and take one minibatch step per meta step; in eval mode exploration is
/// off and nothing is stored or updated.
pub fn run_fcrl_episode<M: Learner, C: Learner>(
    episode: &EpisodeSpec,
    meta: &mut M,
    controller: &mut C,
    settings: &EpisodeSettings,
    mode: Mode,
    exploration: Exploration,
    rngs: EpisodeRngs<'_>,
) -> Result<EpisodeRecord, NnError> {
    let m = episode.n_scheduled();
    let b = settings.n_slots;
    assert_eq!(episode.n_slots(), b, "episode slot count differs from agent configuration");
    assert!(m.is_multiple_of(2), "FCRL pairs agents, so n_scheduled must be even");
    assert!(settings.comm_turns >= 1, "at least one communication turn is required");
    let learning = mode == Mode::Train;
    let eps = if learning { exploration } else { Exploration::GREEDY };

    let mut ms = MetaState::default();
    let mut log = Vec::new();
    let mut reward = 0.0;
    while ms.done_subtasks.len() < m / 2 && ms.invocations < settings.invocation_budget {
        let (pair, (i, j)) = next_controller_pair(&ms, m);
        let meta_state = encode_meta_state(&ms, b);
        let w = epsilon_greedy(&meta.q_values(&meta_state), eps.meta, rngs.explore);
        let window = settings.windows[w];
        let (db_i, db_j) = (&episode.databases[i], &episode.databases[j]);
        let talk = negotiate(controller, &window, db_i, db_j, b, settings.comm_turns, eps.controller, learning, rngs.explore);
        if learning {
            controller.learn(rngs.replay)?;
        }

        let final_actions = *talk.actions.last().expect("at least one turn");
        let success = talk.intrinsic.last().is_some_and(|&r| r > 0.0);
        ms.record_outcome(pair, w, success.then_some(&final_actions[..]));
        log.push(InvocationLog { agents: vec![i, j], window: Some(w), actions: talk.actions.iter().map(|a| a.to_vec()).collect(), intrinsic: talk.intrinsic });

        let complete = ms.done_subtasks.len() == m / 2;
        let terminal = complete || ms.invocations >= settings.invocation_budget;
        if terminal && complete {
            reward = extrinsic_reward(episode, &Schedule { actions: ms.done_times.clone() });
        }
        if learning {
            meta.remember(Transition {
                state: meta_state,
                action: w,
                reward: if terminal { reward } else { 0.0 },
                next_state: encode_meta_state(&ms, b),
                terminal,
            });
            meta.learn(rngs.replay)?;
        }
    }

    let complete = ms.done_subtasks.len() == m / 2;
    Ok(EpisodeRecord {
        algorithm: Algorithm::Fcrl,
        agent_ids: episode.agent_ids.clone(),
        schedule: complete.then(|| ms.done_times.clone()),
        extrinsic_reward: reward,
        invocations: ms.invocations,
        log,
    })
}

/// Samples a two-agent instance together with a uniformly random window,
/// resampling until the window-restricted pair admits an ordered answer.
pub fn sample_pair_instance<R: Rng + ?Sized>(
    windows: &[ConstraintWindow],
    n_slots: usize,
    availability_prob: f64,
    rng: &mut R,
) -> (usize, Database, Database) {
    loop {
        let w = rng.gen_range(0..windows.len());
        let mut draw = || {
            let bits = (0..n_slots).filter(|_| rng.gen_bool(availability_prob)).fold(0u64, |acc, t| acc | 1 << t);
            Database::from_bits(bits, n_slots)
        };
        let (db_i, db_j) = (draw(), draw());
        let mask = windows[w].mask(n_slots);
        if is_feasible(&[db_i.intersect(&mask), db_j.intersect(&mask)]) {
            return (w, db_i, db_j);
        }
    }
}

/// Settings for controller warm-up against the critic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub episodes: u64,
    pub availability_prob: f64,
}

/// Trains the shared controller alone: random windows and database pairs,
/// one negotiation and one minibatch step per episode. Only the controller's
/// own replay buffer is touched. Exploration anneals from 1 to the
/// controller schedule's floor over the first half of the episodes.
pub fn pretrain_controllers<C: Learner>(
    controller: &mut C,
    settings: &EpisodeSettings,
    config: &PretrainConfig,
    floor_epsilon: f64,
    instance_rng: &mut SimRng,
    rngs: EpisodeRngs<'_>,
) -> Result<(), NnError> {
    let anneal = (config.episodes / 2).max(1);
    for e in 0..config.episodes {
        let frac = (e as f64 / anneal as f64).min(1.0);
        let epsilon = 1.0 + (floor_epsilon - 1.0) * frac;
        let (w, db_i, db_j) = sample_pair_instance(&settings.windows, settings.n_slots, config.availability_prob, instance_rng);
        negotiate(controller, &settings.windows[w], &db_i, &db_j, settings.n_slots, settings.comm_turns, epsilon, true, rngs.explore);
        controller.learn(rngs.replay)?;
    }
    Ok(())
}

/// Greedy success rate of a controller policy against the critic on
/// feasible random pair instances.
pub fn pair_success_rate<C: QFunction>(
    controller: &C,
    settings: &EpisodeSettings,
    availability_prob: f64,
    instances: usize,
    rng: &mut SimRng,
) -> f64 {
    let mut frozen = Frozen(controller);
    // greedy negotiation never draws from this
    let mut unused = rng_stream(0, 0);
    let mut wins = 0usize;
    for _ in 0..instances {
        let (w, db_i, db_j) = sample_pair_instance(&settings.windows, settings.n_slots, availability_prob, rng);
        let talk = negotiate(&mut frozen, &settings.windows[w], &db_i, &db_j, settings.n_slots, settings.comm_turns, 0.0, false, &mut unused);
        if talk.intrinsic.last().is_some_and(|&r| r > 0.0) {
            wins += 1;
        }
    }
    wins as f64 / instances as f64
}

/// Read-only adapter: a borrowed policy that never learns.
struct Frozen<'a, Q: QFunction>(&'a Q);

impl<Q: QFunction> QFunction for Frozen<'_, Q> {
    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.0.q_values(state)
    }
}

impl<Q: QFunction> Learner for Frozen<'_, Q> {}

/// FCRL with DQN-trained meta-controller and shared controller.
#[derive(Debug, Clone)]
pub struct FcrlAgent {
    pub meta: DqnLearner,
    pub controller: DqnLearner,
    config: AgentConfig,
    settings: EpisodeSettings,
    rngs: AgentRngs,
    train_episodes: u64,
}

impl FcrlAgent {
    pub fn new(config: AgentConfig, mut rngs: AgentRngs) -> Result<Self, EnvError> {
        let settings = EpisodeSettings::from_config(&config)?;
        let b = config.n_slots;
        let meta = DqnLearner::new(QNetwork::new(2 * b - 1, b - 1, &mut rngs.init), config.meta);
        let controller = DqnLearner::new(QNetwork::new(2 * b + 2, b, &mut rngs.init), config.controller);
        Ok(FcrlAgent { meta, controller, config, settings, rngs, train_episodes: 0 })
    }

    pub fn settings(&self) -> &EpisodeSettings {
        &self.settings
    }

    pub fn train_episodes(&self) -> u64 {
        self.train_episodes
    }

    /// Warm-starts the controller network before joint training.
    pub fn pretrain(&mut self, config: &PretrainConfig, instance_rng: &mut SimRng) -> Result<(), NnError> {
        let floor = self.config.controller_epsilon.end;
        let rngs = EpisodeRngs { explore: &mut self.rngs.explore, replay: &mut self.rngs.replay };
        pretrain_controllers(&mut self.controller, &self.settings, config, floor, instance_rng, rngs)
    }
}

impl Agent for FcrlAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Fcrl
    }

    fn run_episode(&mut self, episode: &EpisodeSpec, mode: Mode) -> Result<EpisodeRecord, NnError> {
        let exploration = Exploration {
            meta: self.config.meta_epsilon.value(self.train_episodes),
            controller: self.config.controller_epsilon.value(self.train_episodes),
        };
        let rngs = EpisodeRngs { explore: &mut self.rngs.explore, replay: &mut self.rngs.replay };
        let record = run_fcrl_episode(episode, &mut self.meta, &mut self.controller, &self.settings, mode, exploration, rngs)?;
        if mode == Mode::Train {
            self.train_episodes += 1;
        }
        Ok(record)
    }

    fn networks(&self) -> Vec<(&'static str, &QNetwork)> {
        vec![("meta", &self.meta.online), ("controller", &self.controller.online)]
    }
}
