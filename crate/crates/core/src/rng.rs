//! Seeded random streams.
//!
//! A single master seed fans out into independent streams, one per
//! `(role, index)` pair. The stream seed is
//! `splitmix(splitmix(master ^ fnv1a(role)) ^ index)` and the stream itself is
//! ChaCha8 keyed with that seed, so adding node 11 never changes what node 3
//! draws. Gaussian variates come from Box–Muller on the stream's raw 64-bit
//! output rather than from a library sampler.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Roles used by the simulator. Kept as constants so that typos do not
/// silently create fresh streams.
pub mod role {
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const LDP: &str = "ldp";
    pub const BATCH_NOISE: &str = "batch-noise";
    pub const COMPUTE: &str = "compute";
    pub const UPLINK: &str = "uplink";
    pub const DOWNLINK: &str = "downlink";
    pub const PROFILE: &str = "profile";
    pub const PARTITION: &str = "partition";
    pub const SYNTHETIC: &str = "synthetic";
    pub const MALICIOUS: &str = "malicious";
    pub const LEAKAGE: &str = "leakage";
    pub const QUADRATIC: &str = "quadratic";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive the seed of the stream for `(role, index)` under `master`.
pub fn stream_seed(master: u64, role: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(role.as_bytes())) ^ index)
}

/// A reproducible random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn derive(master: u64, role: &str, index: u64) -> Self {
        Self::from_seed(stream_seed(master, role, index))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    fn uniform_open_low(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.gaussian()
    }

    /// Exponential with the given mean, by inversion.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * self.uniform_open_low().ln()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Access to the underlying generator for `rand` APIs (shuffles, distributions).
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_keyed_by_role_and_index() {
        let a = stream_seed(7, role::SHUFFLE, 3);
        assert_eq!(a, stream_seed(7, role::SHUFFLE, 3));
        assert_ne!(a, stream_seed(7, role::SHUFFLE, 4));
        assert_ne!(a, stream_seed(7, role::LDP, 3));
        assert_ne!(a, stream_seed(8, role::SHUFFLE, 3));
    }

    #[test]
    fn gaussian_is_reproducible() {
        let mut s1 = Stream::derive(1, role::LDP, 0);
        let mut s2 = Stream::derive(1, role::LDP, 0);
        for _ in 0..101 {
            assert_eq!(s1.gaussian().to_bits(), s2.gaussian().to_bits());
        }
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut s = Stream::from_seed(3);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(s.exponential(2.0) >= 0.0);
        }
    }
}
