//! Counter-based seeded randomness.
//!
//! Every random draw in the crate goes through a [`SeedStream`]: a base seed
//! plus a purpose label. A stream never carries mutable state; callers pass
//! an explicit call index, and the generator for `(base_seed, purpose,
//! call_index)` is rebuilt from scratch each time. Parallel workers therefore
//! need no shared RNG.
//!
//! Key derivation (all arithmetic wrapping, `mix` = SplitMix64 finalizer):
//!
//! ```text
//! h     = fnv1a64(purpose label bytes)
//! k0    = mix(base_seed ^ 0x9E3779B97F4A7C15)
//! k1    = mix(k0 ^ h)
//! k2    = mix(k1 ^ mix(call_index))
//! seed  = [k2, mix(k2 + 1), mix(k2 + 2), mix(k2 + 3)]  (little-endian, 32 bytes)
//! ```
//!
//! The 32-byte seed keys a ChaCha8 generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    HeadInit,
    BodyInit,
    Shuffle,
    Dropout,
    RandomMask,
    BagSubset,
    DataGen,
}

impl Purpose {
    pub fn label(self) -> &'static str {
        match self {
            Purpose::HeadInit => "head-init",
            Purpose::BodyInit => "body-init",
            Purpose::Shuffle => "shuffle",
            Purpose::Dropout => "dropout",
            Purpose::RandomMask => "random-mask",
            Purpose::BagSubset => "bag-subset",
            Purpose::DataGen => "data-gen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    pub base_seed: u64,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    /// Uniform on `[0, 1)`.
    Uniform,
    /// Standard normal.
    Normal,
    /// `1.0` with probability `p`, else `0.0`.
    Bernoulli(f64),
}

pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeedStream {
    pub fn new(base_seed: u64, purpose: Purpose) -> Self {
        Self { base_seed, purpose }
    }

    pub fn key(&self, call_index: u64) -> [u8; 32] {
        let h = fnv1a64(self.purpose.label().as_bytes());
        let k0 = mix64(self.base_seed ^ 0x9E37_79B9_7F4A_7C15);
        let k1 = mix64(k0 ^ h);
        let k2 = mix64(k1 ^ mix64(call_index));
        let words = [
            k2,
            mix64(k2.wrapping_add(1)),
            mix64(k2.wrapping_add(2)),
            mix64(k2.wrapping_add(3)),
        ];
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        seed
    }

    pub fn rng(&self, call_index: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(call_index))
    }

    pub fn draw(&self, call_index: u64, n: usize, dist: Dist) -> Result<Vec<f64>> {
        let mut rng = self.rng(call_index);
        match dist {
            Dist::Uniform => Ok((0..n).map(|_| rng.random::<f64>()).collect()),
            Dist::Normal => Ok((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()),
            Dist::Bernoulli(p) => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::contract(format!("bernoulli p={p} outside [0,1]")));
                }
                // `random::<f64>()` is in [0,1), so p=0 never fires and p=1 always does.
                Ok((0..n)
                    .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                    .collect())
            }
        }
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&self, call_index: u64, n: usize) -> Vec<usize> {
        let mut rng = self.rng(call_index);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}
