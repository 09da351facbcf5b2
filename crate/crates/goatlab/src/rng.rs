//! Seed derivation helpers.
//!
//! Every random stream in the crate is a ChaCha12 generator seeded from a
//! user-facing `u64` seed mixed with a fixed stream label. Deriving one
//! generator per logical stream (per trajectory, per network, per sampler)
//! keeps results independent of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 step; a well-distributed 64-bit mixer.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    *state = z;
}

/// Mix a base seed with a stream label into a fresh 64-bit seed.
pub fn derive_seed(base: u64, label: u64) -> u64 {
    let mut s = base ^ label.rotate_left(17).wrapping_mul(0xD1B54A32D192ED03);
    splitmix64(&mut s);
    splitmix64(&mut s);
    s
}

/// Build the generator for stream `label` under `base` seed.
pub fn stream_rng(base: u64, label: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(base, label))
}

/// Fixed stream labels, so call sites cannot collide by accident.
pub mod labels {
    pub const DATASET: u64 = 0x01;
    pub const POLICY_INIT: u64 = 0x02;
    /// Critic member k uses `CRITIC_INIT + k`.
    pub const CRITIC_INIT: u64 = 0x100;
    pub const BATCH_SAMPLER: u64 = 0x03;
    pub const EVAL_GOALS: u64 = 0x04;
    pub const CQL_ACTIONS: u64 = 0x05;
}
