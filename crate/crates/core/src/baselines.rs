//! Comparison agents.
//!
//! MARL drops the meta-controller: all `m` agents negotiate at once, each
//! seeing the mean of everyone else's previous actions, and learn only from
//! the shared environment reward. HRL keeps the meta-controller but drops
//! communication: it constrains one agent at a time and that agent picks a
//! slot on its own.

use crate::agent::{Agent, AgentConfig, AgentRngs, Algorithm, EpisodeRecord, Exploration, InvocationLog};
use crate::dqn::{epsilon_greedy, DqnLearner, Learner, Mode, Transition};
use crate::env::{extrinsic_reward, Database, EnvError, EpisodeSpec, Schedule};
use crate::fcrl::{encode_meta_state, EpisodeRngs, EpisodeSettings, MetaState};
use crate::nn::{NnError, QNetwork};

/// What a MARL agent observes in one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct MarlView {
    pub database: Database,
    /// Position in the required order, `0..m`.
    pub position: usize,
    /// Mean of the other agents' previous one-hot actions; zeros on turn 1.
    pub comm_avg: Vec<f64>,
}

/// `[database (B)] ++ [position one-hot (m)] ++ [comm average (B)]`.
pub fn encode_marl_state(view: &MarlView, n_slots: usize, n_scheduled: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n_slots + n_scheduled];
    view.database.write_indicator(&mut v[..n_slots]);
    v[n_slots + view.position] = 1.0;
    v[n_slots + n_scheduled..].copy_from_slice(&view.comm_avg);
    v
}

/// For each agent, the mean of the other agents' one-hot actions.
pub fn comm_averages(actions: &[usize], n_slots: usize) -> Vec<Vec<f64>> {
    let others = (actions.len() - 1).max(1) as f64;
    (0..actions.len())
        .map(|k| {
            let mut avg = vec![0.0; n_slots];
            for (_, &a) in actions.iter().enumerate().filter(|&(o, _)| o != k) {
                avg[a] += 1.0;
            }
            avg.iter_mut().for_each(|x| *x /= others);
            avg
        })
        .collect()
}

/// Plays one MARL episode: `comm_turns` simultaneous turns of all agents
/// with a shared policy; the last turn's actions are the schedule and its
/// reward goes to every agent's terminal transition. In train mode the
/// network takes one minibatch step after each turn.
pub fn run_marl_episode<C: Learner>(
    episode: &EpisodeSpec,
    controller: &mut C,
    n_slots: usize,
    comm_turns: usize,
    mode: Mode,
    epsilon: f64,
    rngs: EpisodeRngs<'_>,
) -> Result<EpisodeRecord, NnError> {
    let m = episode.n_scheduled();
    assert_eq!(episode.n_slots(), n_slots, "episode slot count differs from agent configuration");
    assert!(comm_turns >= 1, "at least one communication turn is required");
    let learning = mode == Mode::Train;
    let epsilon = if learning { epsilon } else { 0.0 };

    let mut views: Vec<MarlView> = episode
        .databases
        .iter()
        .enumerate()
        .map(|(position, &database)| MarlView { database, position, comm_avg: vec![0.0; n_slots] })
        .collect();
    let mut turns = Vec::with_capacity(comm_turns);
    let mut reward = 0.0;
    for turn in 1..=comm_turns {
        let states: Vec<Vec<f64>> = views.iter().map(|v| encode_marl_state(v, n_slots, m)).collect();
        let actions: Vec<usize> = states.iter().map(|s| epsilon_greedy(&controller.q_values(s), epsilon, rngs.explore)).collect();
        for (view, avg) in views.iter_mut().zip(comm_averages(&actions, n_slots)) {
            view.comm_avg = avg;
        }
        let terminal = turn == comm_turns;
        if terminal {
            reward = extrinsic_reward(episode, &Schedule { actions: actions.clone() });
        }
        if learning {
            for ((state, &action), view) in states.into_iter().zip(&actions).zip(&views) {
                controller.remember(Transition {
                    state,
                    action,
                    reward: if terminal { reward } else { 0.0 },
                    next_state: encode_marl_state(view, n_slots, m),
                    terminal,
                });
            }
            controller.learn(rngs.replay)?;
        }
        turns.push(actions);
    }
    let schedule = turns.last().cloned();
    Ok(EpisodeRecord {
        algorithm: Algorithm::Marl,
        agent_ids: episode.agent_ids.clone(),
        schedule,
        extrinsic_reward: reward,
        invocations: 0,
        log: vec![InvocationLog { agents: (0..m).collect(), window: None, actions: turns, intrinsic: Vec::new() }],
    })
}

/// What an HRL controller observes: its database restricted to the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HrlView {
    pub constrained_db: Database,
}

pub fn encode_hrl_state(view: &HrlView, n_slots: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_slots];
    view.constrained_db.write_indicator(&mut v);
    v
}

/// HRL critic: 1 iff the action is available in the constrained database.
pub fn hrl_critic(view: &HrlView, action: usize) -> f64 {
    if view.constrained_db.is_available(action) {
        1.0
    } else {
        0.0
    }
}

/// Plays one HRL episode: agents are handled one at a time in required
/// order; each invocation picks a window, the agent answers once, and a
/// rejected agent is retried under a fresh window until the budget runs out.
pub fn run_hrl_episode<M: Learner, C: Learner>(
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
    let learning = mode == Mode::Train;
    let eps = if learning { exploration } else { Exploration::GREEDY };

    let mut ms = MetaState::default();
    let mut log = Vec::new();
    let mut reward = 0.0;
    while ms.done_subtasks.len() < m && ms.invocations < settings.invocation_budget {
        let agent = ms.done_subtasks.len();
        let meta_state = encode_meta_state(&ms, b);
        let w = epsilon_greedy(&meta.q_values(&meta_state), eps.meta, rngs.explore);
        let view = HrlView { constrained_db: episode.databases[agent].intersect(&settings.windows[w].mask(b)) };
        let state = encode_hrl_state(&view, b);
        let action = epsilon_greedy(&controller.q_values(&state), eps.controller, rngs.explore);
        let intrinsic = hrl_critic(&view, action);
        if learning {
            controller.remember(Transition { next_state: state.clone(), state, action, reward: intrinsic, terminal: true });
            controller.learn(rngs.replay)?;
        }

        let success = intrinsic > 0.0;
        ms.record_outcome(agent, w, success.then_some(&[action][..]));
        log.push(InvocationLog { agents: vec![agent], window: Some(w), actions: vec![vec![action]], intrinsic: vec![intrinsic] });

        let complete = ms.done_subtasks.len() == m;
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

    let complete = ms.done_subtasks.len() == m;
    Ok(EpisodeRecord {
        algorithm: Algorithm::Hrl,
        agent_ids: episode.agent_ids.clone(),
        schedule: complete.then(|| ms.done_times.clone()),
        extrinsic_reward: reward,
        invocations: ms.invocations,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct MarlAgent {
    pub controller: DqnLearner,
    config: AgentConfig,
    rngs: AgentRngs,
    train_episodes: u64,
}

impl MarlAgent {
    pub fn new(config: AgentConfig, mut rngs: AgentRngs) -> Result<Self, EnvError> {
        crate::env::validate_slot_count(config.n_slots)?;
        let b = config.n_slots;
        let net = QNetwork::new(2 * b + config.n_scheduled, b, &mut rngs.init);
        Ok(MarlAgent { controller: DqnLearner::new(net, config.controller), config, rngs, train_episodes: 0 })
    }
}

impl Agent for MarlAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Marl
    }

    fn run_episode(&mut self, episode: &EpisodeSpec, mode: Mode) -> Result<EpisodeRecord, NnError> {
        let epsilon = self.config.controller_epsilon.value(self.train_episodes);
        let rngs = EpisodeRngs { explore: &mut self.rngs.explore, replay: &mut self.rngs.replay };
        let record =
            run_marl_episode(episode, &mut self.controller, self.config.n_slots, self.config.comm_turns, mode, epsilon, rngs)?;
        if mode == Mode::Train {
            self.train_episodes += 1;
        }
        Ok(record)
    }

    fn networks(&self) -> Vec<(&'static str, &QNetwork)> {
        vec![("controller", &self.controller.online)]
    }
}

#[derive(Debug, Clone)]
pub struct HrlAgent {
    pub meta: DqnLearner,
    pub controller: DqnLearner,
    config: AgentConfig,
    settings: EpisodeSettings,
    rngs: AgentRngs,
    train_episodes: u64,
}

impl HrlAgent {
    pub fn new(config: AgentConfig, mut rngs: AgentRngs) -> Result<Self, EnvError> {
        let settings = EpisodeSettings::from_config(&config)?;
        let b = config.n_slots;
        let meta = DqnLearner::new(QNetwork::new(2 * b - 1, b - 1, &mut rngs.init), config.meta);
        let controller = DqnLearner::new(QNetwork::new(b, b, &mut rngs.init), config.controller);
        Ok(HrlAgent { meta, controller, config, settings, rngs, train_episodes: 0 })
    }
}

impl Agent for HrlAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Hrl
    }

    fn run_episode(&mut self, episode: &EpisodeSpec, mode: Mode) -> Result<EpisodeRecord, NnError> {
        let exploration = Exploration {
            meta: self.config.meta_epsilon.value(self.train_episodes),
            controller: self.config.controller_epsilon.value(self.train_episodes),
        };
        let rngs = EpisodeRngs { explore: &mut self.rngs.explore, replay: &mut self.rngs.replay };
        let record = run_hrl_episode(episode, &mut self.meta, &mut self.controller, &self.settings, mode, exploration, rngs)?;
        if mode == Mode::Train {
            self.train_episodes += 1;
        }
        Ok(record)
    }

    fn networks(&self) -> Vec<(&'static str, &QNetwork)> {
        vec![("meta", &self.meta.online), ("controller", &self.controller.online)]
    }
}
