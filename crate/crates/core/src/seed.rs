//! Labeled sub-seed derivation and per-index random streams.
//!
//! Every random quantity in a run is a function of one root seed. Stages get
//! their own sub-seed via [`derive`], and item `i` within a stage draws from
//! ChaCha stream `i` keyed by that sub-seed, so results never depend on the
//! order or thread in which items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(h: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *h ^= u64::from(*b);
        *h = h.wrapping_mul(FNV_PRIME);
    }
}

/// Sub-seed for the stage named `label` under root seed `seed`.
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    fnv1a(&mut h, label.as_bytes());
    splitmix64(seed ^ splitmix64(h))
}

/// Sub-seed for round `round` of stage `label`.
pub fn derive_indexed(seed: u64, label: &str, round: u64) -> u64 {
    splitmix64(derive(seed, label) ^ splitmix64(round.wrapping_add(1)))
}

/// Independent generator for item `index` of the stage keyed by `stage_seed`.
pub fn stream(stage_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    rng.set_stream(index);
    rng
}
