//! Seed derivation. Every consumer of randomness gets its own stream keyed by
//! (seed, domain, index), so results never depend on evaluation order or on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags separating independent uses of one seed.
pub mod domain {
    pub const PARAMS: u64 = 0x5041_5241;
    pub const ROUTE: u64 = 0x524f_5554;
    pub const ENGINE: u64 = 0x454e_4749;
    pub const JUNCTION: u64 = 0x4a55_4e43;
    pub const FIXTURE: u64 = 0x4649_5854;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index)
}

pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, index))
}
