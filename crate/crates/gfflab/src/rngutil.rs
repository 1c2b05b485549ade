//! Seeding discipline. Every replica, chain or decoration stream derives its
//! RNG from (master seed, stream index) only, never from wall clocks or
//! worker identity, so results are bit-stable under any scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step, used to mix seed material.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a stream index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut s = master ^ 0x51ed_2701_89ab_cdef;
    let a = splitmix64(&mut s);
    let mut t = a ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93);
    splitmix64(&mut t)
}

/// RNG for a derived stream.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
