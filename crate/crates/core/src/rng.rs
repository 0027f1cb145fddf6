//! Seeded random streams.
//!
//! Every simulation draws from ChaCha8 streams keyed by `(seed, stream)`, so
//! the arrival, context and noise sequences of a run are fixed by the seed
//! alone and do not depend on what the policy does with them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    GroundTruth = 0,
    Arrivals = 1,
    Contexts = 2,
    Noise = 3,
    Auxiliary = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
