//! Reproducible random streams.
//!
//! Every Monte Carlo path draws from its own counter-based substream keyed
//! by (master seed, path index), so estimates are bit-identical regardless
//! of how paths are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The stream type used by all samplers in this crate.
pub type Stream = ChaCha8Rng;

/// Independent substream for one path.
pub fn substream(seed: u64, path_index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Strictly positive exponential holding time with the given rate.
pub fn exponential<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -u.ln() / rate;
        }
    }
}
