//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator (counter-based) keyed by a 64-bit seed
//! derived from a `(run_seed, task_id, purpose)` triple with SplitMix64
//! finalization:
//!
//! ```text
//! z = run_seed
//! z = mix(z ^ mix(task_id + 0x9E3779B97F4A7C15))
//! z = mix(z ^ mix(purpose + 0xD1B54A32D192ED03))
//! mix(x): x ^= x >> 30; x *= 0xBF58476D1CE4E5B9; x ^= x >> 27; x *= 0x94D049BB133111EB; x ^= x >> 31
//! ```
//!
//! so streams for different tasks or purposes never share state and any one
//! of them can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Shuffle,
    Permutation,
    Subsample,
    TaskOrder,
    Planted,
    PlantedSamples,
    MonteCarlo,
    Erm,
    Head,
    Split,
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Shuffle => 2,
            Purpose::Permutation => 3,
            Purpose::Subsample => 4,
            Purpose::TaskOrder => 5,
            Purpose::Planted => 6,
            Purpose::PlantedSamples => 7,
            Purpose::MonteCarlo => 8,
            Purpose::Erm => 9,
            Purpose::Head => 10,
            Purpose::Split => 11,
        }
    }
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(run_seed: u64, task_id: u64, purpose: Purpose) -> u64 {
    let mut z = run_seed;
    z = splitmix64(z ^ splitmix64(task_id.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    splitmix64(z ^ splitmix64(purpose.code().wrapping_add(0xD1B5_4A32_D192_ED03)))
}

pub fn stream(run_seed: u64, task_id: u64, purpose: Purpose) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, task_id, purpose))
}
