//! Seed expansion. Every random draw in the toolkit comes from a ChaCha8 stream
//! keyed by a seed derived from one top-level seed plus a stable string tag, so
//! a stage or a single record can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix `tag` into `base`. Stable across platforms and toolchains.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    splitmix64(base ^ splitmix64(fnv1a(tag.as_bytes())))
}

pub fn rng_for(base: u64, tag: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}
