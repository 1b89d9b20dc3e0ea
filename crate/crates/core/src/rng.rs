//! Seeded random streams.
//!
//! Every consumer draws from its own named stream derived from one run seed,
//! so changing how many numbers one component draws never shifts another.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream `name` of run `seed`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(seed);
    // FNV-1a of the stream name selects the ChaCha stream.
    let id = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    rng.set_stream(id);
    rng
}

/// Uniform sample from the open interval `(lo, hi)`.
pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return lo + (hi - lo) * u;
        }
    }
}

pub fn uniform_vec(rng: &mut StreamRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, lo, hi)).collect()
}

/// Uniformly random permutation of `0..n`.
pub fn permutation(rng: &mut StreamRng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<u64> = (0..4).map(|_| stream(1, "data").random()).collect();
        let b: Vec<u64> = (0..4).map(|_| stream(1, "data").random()).collect();
        assert_eq!(a, b);
        let mut x = stream(1, "data");
        let mut y = stream(1, "init");
        assert_ne!(x.random::<u64>(), y.random::<u64>());
        let u = uniform_vec(&mut x, 1000, -1.0, 1.0);
        assert!(u.iter().all(|&v| v > -1.0 && v < 1.0));
    }
}
