// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seed derivation. Every unit of parallel work gets its own ChaCha stream so
//! results do not depend on worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`.
pub fn derived(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for batch slot `slot` of optimizer step `step`.
pub fn for_slot(seed: u64, step: usize, slot: usize) -> Rng {
    derived(seed, ((step as u64) << 24) | slot as u64)
}
