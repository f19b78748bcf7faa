//! Seeded random helpers shared by initializers, dropout and shuffling.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `shape` values uniformly from `[-limit, limit)`.
pub fn uniform(rng: &mut SeededRng, shape: &[usize], limit: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Derives an independent stream for a named purpose from a base seed.
pub fn derive(seed: u64, salt: &str) -> SeededRng {
    // FNV-1a over the salt, mixed into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in salt.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seeded(seed ^ h.rotate_left(17))
}
