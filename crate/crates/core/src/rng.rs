//! Deterministic randomness plumbing.
//!
//! Every random decision in the simulator draws from a ChaCha8 stream whose
//! seed is derived from the experiment seed plus a fixed tag path, e.g.
//! `(seed, CLIENT_ROUND, t, client_id)`. Streams for different purposes are
//! therefore independent, reproducible across platforms, and insensitive to
//! the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Each (tag, ...path) combination owns a disjoint stream.
pub mod tag {
    /// Common initial item embedding shared by all clients.
    pub const INIT_GLOBAL_ITEM: u64 = 1;
    /// Per-client init of user embedding and score-function weights.
    pub const INIT_CLIENT: u64 = 2;
    /// Per-(round, client) training stream: negative sampling + shuffling.
    pub const CLIENT_ROUND: u64 = 3;
    /// Per-(round, client) upload noise.
    pub const LDP: u64 = 4;
    /// Per-user evaluation candidates for the test item.
    pub const EVAL_TEST: u64 = 5;
    /// Per-user evaluation candidates for the validation item.
    pub const EVAL_VAL: u64 = 6;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mix a base seed with a tag path into a single derived seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in path {
        s = splitmix64(s ^ t.wrapping_mul(0xd6e8feb86659fd93));
    }
    s
}

/// ChaCha8 stream for `(base, path)`.
pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Uniform draw strictly inside (0, 1).
pub fn uniform_open01(rng: &mut ChaCha8Rng) -> f64 {
    use rand::RngCore;
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw via Box-Muller, scaled to the given std.
pub fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let u1 = uniform_open01(rng);
    let u2 = uniform_open01(rng);
    std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Laplace(0, scale) draw via the inverse CDF, so the mapping from the
/// uniform stream to the noise value is identical on every platform.
pub fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u = uniform_open01(rng) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}
