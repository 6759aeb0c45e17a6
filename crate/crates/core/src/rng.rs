//! Counter-based random streams.
//!
//! Every parallel work item draws from a ChaCha stream keyed by
//! `(seed, domain, chunk)` and positioned by `step`, so results do not depend
//! on which thread runs which chunk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the random streams of independent subsystems sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Hypotheses = 1,
    Propagation = 2,
    Mppi = 3,
    Human = 4,
    Observation = 5,
    Scenario = 6,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for work item `chunk` of `domain` at counter `step`.
pub fn stream(seed: u64, domain: Domain, step: u64, chunk: u64) -> ChaCha8Rng {
    let mut s = seed ^ (domain as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    let c = splitmix64(&mut s) ^ chunk;
    let mut s2 = c;
    for word in key.chunks_exact_mut(8) {
        word.copy_from_slice(&splitmix64(&mut s2).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(step);
    rng
}

/// Mixes a sequence number into a seed; used to derive per-call seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut s = seed ^ salt.wrapping_mul(0xA076_1D64_78BD_642F);
    splitmix64(&mut s)
}
