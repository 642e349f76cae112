//! Counter-based seed derivation.
//!
//! Every random quantity is addressed by `(seed, stream, position)` on a
//! ChaCha8 keystream, so a value never depends on what else was drawn before
//! it. Two imputations with different masks add the same noise to any pixel
//! they both cover.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named streams for values derived from a campaign seed.
pub mod stream {
    pub const IMPUTATION: u64 = 1;
    pub const RANDOM_CAM: u64 = 2;
}

/// Derives an independent child seed from `base` for `(stream, index)`.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// A standard normal sample addressed by `(seed, stream, position)`.
pub(crate) fn normal_at(rng: &mut ChaCha8Rng, stream: u64, position: u64) -> f64 {
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(position) * 4);
    // Box-Muller on two 53-bit uniforms; u1 is kept away from zero.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
