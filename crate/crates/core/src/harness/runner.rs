//! Seeded training runs with alternating train and evaluation blocks.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{BlockStats, MetricsRow, Phase};
use super::HarnessError;
use crate::agent::{Agent, AgentRngs, Algorithm, EpisodeRecord};
use crate::baselines::{HrlAgent, MarlAgent};
use crate::dqn::Mode;
use crate::env::{new_episode, EpisodeSpec};
use crate::fcrl::FcrlAgent;
use crate::nn::{NnError, QNetwork};
use crate::{rng_stream, SimRng};

/// Stream numbers of the generators derived from one run seed.
pub mod streams {
    pub const ENV: u64 = 0;
    pub const INIT: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const PRETRAIN: u64 = 4;
}

#[derive(Debug, Clone)]
pub enum AnyAgent {
    Fcrl(FcrlAgent),
    Marl(MarlAgent),
    Hrl(HrlAgent),
}

impl AnyAgent {
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<Self, HarnessError> {
        let rngs = AgentRngs {
            init: rng_stream(seed, streams::INIT),
            explore: rng_stream(seed, streams::EXPLORE),
            replay: rng_stream(seed, streams::REPLAY),
        };
        let agent_config = config.agent_config();
        Ok(match config.algorithm {
            Algorithm::Fcrl => AnyAgent::Fcrl(FcrlAgent::new(agent_config, rngs)?),
            Algorithm::Marl => AnyAgent::Marl(MarlAgent::new(agent_config, rngs)?),
            Algorithm::Hrl => AnyAgent::Hrl(HrlAgent::new(agent_config, rngs)?),
        })
    }

    fn inner(&self) -> &dyn Agent {
        match self {
            AnyAgent::Fcrl(a) => a,
            AnyAgent::Marl(a) => a,
            AnyAgent::Hrl(a) => a,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Agent {
        match self {
            AnyAgent::Fcrl(a) => a,
            AnyAgent::Marl(a) => a,
            AnyAgent::Hrl(a) => a,
        }
    }
}

impl Agent for AnyAgent {
    fn algorithm(&self) -> Algorithm {
        self.inner().algorithm()
    }

    fn run_episode(&mut self, episode: &EpisodeSpec, mode: Mode) -> Result<EpisodeRecord, NnError> {
        self.inner_mut().run_episode(episode, mode)
    }

    fn networks(&self) -> Vec<(&'static str, &QNetwork)> {
        self.inner().networks()
    }
}

/// One finished episode, as seen by an observer.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeEvent<'a> {
    pub seed: u64,
    pub block: usize,
    pub phase: Phase,
    pub index: usize,
    pub spec: &'a EpisodeSpec,
    pub record: &'a EpisodeRecord,
}

pub type Observer<'o> = dyn FnMut(&EpisodeEvent<'_>) -> std::io::Result<()> + 'o;

/// Result of one block pair: two rows, or a single failed row on divergence.
#[derive(Debug)]
pub struct BlockOutcome {
    pub rows: Vec<MetricsRow>,
    pub diverged: Option<NnError>,
}

/// Training state of one seed. Blocks can be run one at a time, so several
/// seeds can advance in lockstep.
#[derive(Debug, Clone)]
pub struct SeedRun {
    seed: u64,
    config: ExperimentConfig,
    agent: AnyAgent,
    env_rng: SimRng,
    next_block: usize,
    failed: bool,
}

impl SeedRun {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, HarnessError> {
        config.validate()?;
        Ok(SeedRun {
            seed,
            config: config.clone(),
            agent: AnyAgent::build(config, seed)?,
            env_rng: rng_stream(seed, streams::ENV),
            next_block: 0,
            failed: false,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agent(&self) -> &AnyAgent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut AnyAgent {
        &mut self.agent
    }

    pub fn blocks_done(&self) -> usize {
        self.next_block
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    /// Controller pretraining, when the config asks for it.
    pub fn pretrain(&mut self) -> Result<(), NnError> {
        if let (true, AnyAgent::Fcrl(agent)) = (self.config.pretrain, &mut self.agent) {
            let mut instance_rng = rng_stream(self.seed, streams::PRETRAIN);
            if let Err(e) = agent.pretrain(&self.config.pretrain_config(), &mut instance_rng) {
                self.failed = true;
                return Err(e);
            }
        }
        Ok(())
    }

    /// Plays `block_size` training episodes, then `block_size` greedy ones.
    pub fn run_block(&mut self, observer: Option<&mut Observer<'_>>) -> Result<BlockOutcome, HarnessError> {
        assert!(!self.failed, "run_block called on a diverged run");
        let mut observer = observer;
        let block = self.next_block;
        let mut rows = Vec::with_capacity(2);
        for phase in [Phase::Train, Phase::Eval] {
            let mode = if phase == Phase::Train { Mode::Train } else { Mode::Eval };
            let before = (phase == Phase::Eval).then(|| self.agent.param_checksum());
            let start = Instant::now();
            let mut stats = BlockStats::default();
            for index in 0..self.config.block_size {
                let spec = new_episode(&self.config.env, &mut self.env_rng)?;
                let record = match self.agent.run_episode(&spec, mode) {
                    Ok(r) => r,
                    Err(e) => {
                        self.failed = true;
                        rows.push(stats.row(self.seed, block, Phase::Failed, self.seconds(start)));
                        return Ok(BlockOutcome { rows, diverged: Some(e) });
                    }
                };
                stats.add(record.extrinsic_reward, record.invocations, record.intrinsic_success_rate());
                if let Some(obs) = observer.as_deref_mut() {
                    let event = EpisodeEvent { seed: self.seed, block, phase, index, spec: &spec, record: &record };
                    obs(&event).map_err(HarnessError::Observer)?;
                }
            }
            if before.is_some_and(|c| c != self.agent.param_checksum()) {
                return Err(HarnessError::EvalMutatedParameters { seed: self.seed, block });
            }
            rows.push(stats.row(self.seed, block, phase, self.seconds(start)));
        }
        self.next_block += 1;
        Ok(BlockOutcome { rows, diverged: None })
    }

    fn seconds(&self, start: Instant) -> f64 {
        if self.config.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

/// Metrics of a full experiment plus the seeds that diverged.
#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub failed_seeds: Vec<(u64, NnError)>,
    pub runs: Vec<SeedRun>,
}

/// Runs every seed to `total_blocks`. A diverging seed gets a failed row and
/// the remaining seeds carry on.
pub fn run_experiment(config: &ExperimentConfig, mut observer: Option<&mut Observer<'_>>) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let mut out = ExperimentOutput::default();
    for &seed in &config.seeds {
        let mut run = SeedRun::new(config, seed)?;
        if let Err(e) = run.pretrain() {
            out.rows.push(BlockStats::default().row(seed, 0, Phase::Failed, 0.0));
            out.failed_seeds.push((seed, e));
            out.runs.push(run);
            continue;
        }
        while run.blocks_done() < config.total_blocks {
            let outcome = run.run_block(observer.as_deref_mut())?;
            out.rows.extend(outcome.rows);
            if let Some(e) = outcome.diverged {
                out.failed_seeds.push((seed, e));
                break;
            }
        }
        out.runs.push(run);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    seed: u64,
    block: usize,
    phase: Phase,
    episode: usize,
    #[serde(flatten)]
    record: &'a EpisodeRecord,
}

/// Observer writing one JSON object per episode.
pub fn json_lines_observer<W: Write>(out: &mut W) -> impl FnMut(&EpisodeEvent<'_>) -> std::io::Result<()> + '_ {
    move |e| {
        let line = EpisodeLine { seed: e.seed, block: e.block, phase: e.phase, episode: e.index, record: e.record };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")
    }
}

/// Writes each online network of `agent` to `dir/{stem}_{name}.ckpt`.
pub fn write_checkpoints(agent: &dyn Agent, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, HarnessError> {
    agent
        .networks()
        .into_iter()
        .map(|(name, net)| {
            let path = dir.join(format!("{stem}_{name}.ckpt"));
            std::fs::write(&path, net.to_checkpoint()).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            Ok(path)
        })
        .collect()
}
