//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! whose seed is a pure function of the master seed and a (domain, index)
//! counter, so work can be split across threads in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for item `index` of stream `domain` under `master`.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let tag = domain.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    splitmix(splitmix(master ^ tag).wrapping_add(index))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
