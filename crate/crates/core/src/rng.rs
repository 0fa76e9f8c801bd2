//! Deterministic random streams.
//!
//! Every simulation stage draws from its own ChaCha8 stream. A stream is
//! addressed by `(seed, block_index)`: the seed selects the key, the block
//! index selects the ChaCha stream id, so blocks can be generated in any
//! order (or in parallel) and still reproduce the sequential result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent, reproducible stream for one block of work.
pub fn rng_substream(seed: u64, block_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block_index);
    rng
}

/// Labels for the stages of a run. Each stage gets its own key so that, for
/// example, changing the background rate does not perturb the pair stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    Source = 1,
    Optics = 2,
    Channel = 3,
    Background = 4,
    Detector = 5,
    Routing = 6,
}

/// Seed for a sub-task derived from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, label: u64) -> u64 {
    let mut z = master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `stage`, block `block_index` of a run seeded with `seed`.
pub fn stage_stream(seed: u64, stage: Stage, block_index: u64) -> SimRng {
    rng_substream(derive_seed(seed, stage as u64), block_index)
}
