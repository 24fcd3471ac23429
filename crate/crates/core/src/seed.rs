//! Deterministic seed derivation.
//!
//! Every random quantity in the toolkit is drawn from a [`ChaCha8Rng`] built
//! from a 64-bit seed and a stream id, so results do not depend on thread
//! scheduling or on how many trials are run.
//!
//! Trial seeds are derived with the SplitMix64 finalizer:
//!
//! ```text
//! trial_seed(base, point, trial) = mix(mix(mix(base) ^ point) ^ trial)
//! mix(z): z += 0x9E3779B97F4A7C15
//!         z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!         z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!         z ^ (z >> 31)
//! ```
//! (all arithmetic wrapping modulo 2^64).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at sweep point `point` (index into the sweep values).
pub fn trial_seed(base_seed: u64, point: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ point) ^ trial)
}

/// Independent random streams used inside one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scenario = 0,
    PilotNoise = 1,
    Pattern = 2,
    Selection = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
