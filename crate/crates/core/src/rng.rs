//! Seeded random streams. Every run owns one seed and derives independent
//! substreams from it, so adding a draw in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const REWARD_STREAM: u64 = 0;
const TRANSITION_STREAM: u64 = 1;
const GENERATOR_STREAM: u64 = 2;

fn substream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Bernoulli reward draws of a run.
pub fn reward_stream(seed: u64) -> Stream {
    substream(seed, REWARD_STREAM)
}

/// Next-state draws of a run.
pub fn transition_stream(seed: u64) -> Stream {
    substream(seed, TRANSITION_STREAM)
}

/// Random instance generation.
pub fn generator_stream(seed: u64) -> Stream {
    substream(seed, GENERATOR_STREAM)
}

/// The pair of per-run streams used by [`crate::envs::step`].
#[derive(Clone, Debug)]
pub struct RunStreams {
    pub rewards: Stream,
    pub transitions: Stream,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            rewards: reward_stream(seed),
            transitions: transition_stream(seed),
        }
    }
}
