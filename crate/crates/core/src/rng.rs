//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(seed, index, purpose)`. The index is a replicate number; the purpose
//! separates covariates, instrument, compliance type, noise and
//! resampling so that changing one consumer leaves the others untouched.
//! Because streams are addressed rather than advanced, replicates can run
//! in any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Covariates = 1,
    Instrument = 2,
    Compliance = 3,
    Noise = 4,
    Resample = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut state = seed ^ index.rotate_left(32).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}
