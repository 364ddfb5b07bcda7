//! Deterministic derivation of named RNG substreams from a master seed.
//!
//! Every random stage of a pipeline draws from its own substream, keyed by a
//! string label plus optional indices. Streams are independent of each other
//! and of thread scheduling, so a fixed master seed reproduces a run bit for
//! bit regardless of how much randomness any single stage consumes.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MasterSeed(pub u64);

impl MasterSeed {
    /// Derive the substream for `label` (e.g. "macro.stack") and `idx`
    /// (replication counters, slice numbers, ...).
    pub fn stream(&self, label: &str, idx: &[u64]) -> ChaCha8Rng {
        let mut key = splitmix64(self.0 ^ fnv1a(label.as_bytes()));
        for &i in idx {
            key = splitmix64(key ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        ChaCha8Rng::seed_from_u64(key)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
