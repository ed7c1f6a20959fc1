//! Portable seeded randomness.
//!
//! Stream: ChaCha8 (counter-based, stable across platforms). Uniform doubles
//! take the top 53 bits of a u64; normal variates use the polar-free
//! Box–Muller transform with a cached spare. Identical seed and call sequence
//! therefore give an identical stream everywhere, in both precision modes
//! (f32 values are f64 draws rounded once).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

/// Serializable snapshot of the generator, for checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub spare_normal: Option<f64>,
}

/// splitmix64 finalizer, used to derive sub-seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        PortableRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent child stream identified by a tag; deterministic in (seed path, tag).
    pub fn fork(&mut self, tag: u64) -> PortableRng {
        let s = mix64(self.inner.next_u64() ^ mix64(tag));
        PortableRng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; draws two uniforms, caches the second variate.
    pub fn normal_f64(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0,1] so ln is finite
        let u1 = 1.0 - self.uniform_f64();
        let u2 = self.uniform_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal<R: Real>(&mut self) -> R {
        R::from_f64(self.normal_f64())
    }

    pub fn uniform<R: Real>(&mut self) -> R {
        R::from_f64(self.uniform_f64())
    }

    /// Fisher–Yates shuffle of indices 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        idx
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            word_pos: self.inner.get_word_pos(),
            spare_normal: self.spare_normal,
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_word_pos(state.word_pos);
        PortableRng {
            inner,
            spare_normal: state.spare_normal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = PortableRng::new(42);
        let mut b = PortableRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal_f64().to_bits(), b.normal_f64().to_bits());
        }
    }

    #[test]
    fn state_round_trip() {
        let mut a = PortableRng::new(7);
        for _ in 0..13 {
            a.normal_f64();
        }
        let mut b = PortableRng::from_state(&a.state());
        for _ in 0..50 {
            assert_eq!(a.normal_f64().to_bits(), b.normal_f64().to_bits());
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = PortableRng::new(1);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal_f64();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = PortableRng::new(3);
        let mut p = rng.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
