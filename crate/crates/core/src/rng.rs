//! Seeded random streams.
//!
//! Every consumer of randomness in a training run draws from its own ChaCha
//! stream derived from the run seed, so adding or removing draws in one place
//! (for example sampling balance coefficients) never shifts another (for
//! example minibatch indices).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Buffer = 2,
    Beta = 3,
    Balance = 4,
    Policy = 5,
    Env = 6,
    Eval = 7,
    Data = 8,
    Critic = 9,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    pub init: Rng,
    pub buffer: Rng,
    pub beta: Rng,
    pub balance: Rng,
    pub policy: Rng,
    pub env: Rng,
    pub eval: Rng,
    pub critic: Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            init: stream(seed, Stream::Init),
            buffer: stream(seed, Stream::Buffer),
            beta: stream(seed, Stream::Beta),
            balance: stream(seed, Stream::Balance),
            policy: stream(seed, Stream::Policy),
            env: stream(seed, Stream::Env),
            eval: stream(seed, Stream::Eval),
            critic: stream(seed, Stream::Critic),
        }
    }
}
