//! Federated control (FCRL) on a distributed scheduling task, with flat
//! multi-agent (MARL) and hierarchical (HRL) baselines.
//!
//! A meta-controller walks the required agent order pair by pair, handing
//! each pair a constraint window; the two controllers of a pair negotiate for
//! a few turns and emit time slots. See the README for the experiment CLI.

pub mod env;
pub mod nn;
pub mod agent;
pub mod dqn;
pub mod fcrl;
pub mod baselines;
pub mod harness;

/// Random source used throughout; seeded streams are reproducible across
/// platforms.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Stream `stream` of the generator keyed by `seed`. Distinct streams of
/// one seed are independent.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    use rand::SeedableRng;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
