//! Deterministic derivation of independent RNG streams.
//!
//! Every random choice is drawn from a stream keyed by the run seed plus a
//! label (a parameter path, a sample index, a metric name). Streams never
//! depend on evaluation order, so parallel work and toggled network modules
//! leave every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer: spreads nearby inputs over the whole range.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named by `label` under `seed`, at position `index`.
pub fn derive_seed(seed: u64, index: u64, label: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, &index.to_le_bytes());
    h = fnv1a(h, label.as_bytes());
    splitmix64(h)
}

pub fn stream(seed: u64, index: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index, label))
}
