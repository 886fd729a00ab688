//! Seeded random streams. All randomness in the crate flows through here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A stream that is identical for identical seeds on every platform.
pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent stream for one consumer of a run's seed. Consumers with
/// different `stream` ids never share draws.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

/// The stream for one step (or epoch) of one consumer. Derived from the
/// counter alone, so a resumed run draws exactly what an uninterrupted one would.
pub fn step_rng(seed: u64, stream: u64, step: u64) -> Rng {
    stream_rng(seed, (stream << 40) | step)
}

/// Stream ids used by the trainer and data pipeline.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const ASSIGNER: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
}
