//! Named random sub-streams derived from one run seed.
//!
//! Every consumer of randomness asks for its own stream, so changing how many
//! numbers one component draws never shifts another component's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Synthetic scenario generation.
    Data = 1,
    /// Support/query and train/test partitions.
    Split = 2,
    /// Parameter initialization.
    Init = 3,
    /// Task sampling during meta-training and task-subset selection.
    Sampling = 4,
    /// Per-sample measurement noise inside a scenario.
    Noise = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an index into a new, well-separated seed.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for `(seed, stream, index)`.
pub fn stream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, index));
    rng.set_stream(which as u64);
    rng
}
