//! Portable randomness.
//!
//! All sampling goes through [`ChaCha8Rng`] seeded with `seed_from_u64`, and
//! floats and bounded integers are derived from raw `u64` draws with the fixed
//! recipes below so that streams are identical across platforms and crate
//! upgrades of the higher-level `rand` distributions.

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a run seeded with `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub fn unit_f64<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[0, bound)` by rejection; `bound` must be non-zero.
pub fn below<R: Rng + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "empty range");
    let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return x % bound;
        }
    }
}

/// Index of the first cumulative weight exceeding `u`, or `None` if `u` is
/// past the total mass.
pub fn invert_cumulative(weights: impl IntoIterator<Item = f64>, u: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (i, w) in weights.into_iter().enumerate() {
        acc += w;
        if u < acc {
            return Some(i);
        }
    }
    None
}
