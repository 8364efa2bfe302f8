//! Addressable Gaussian noise.
//!
//! Every random number used by a simulation is a pure function of a key
//! `(seed, replica, particle, step, coordinate)`, computed with the Philox4x32-10
//! block function. Nothing is drawn from a sequential stream, so a value never
//! depends on evaluation order or on the number of worker threads. Two systems
//! that read the same keys see the same Brownian increments, which is how the
//! particle system and the nonlinear processes are coupled.
//!
//! Counter layout (four 32-bit words): `[particle, step, replica, stream << 24 | block]`,
//! key = the 64-bit seed. Replica ids with the top bit set are reserved for
//! the reference ensemble and target samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Replica id of the reference-flow ensemble. Experiment replicas must stay below it.
pub const REFERENCE_NAMESPACE: u32 = 0x8000_0000;
/// Base replica id for target-law samples (equilibrium targets, noise floors).
pub const TARGET_NAMESPACE: u32 = 0xC000_0000;
/// Largest replica id an experiment may use.
pub const MAX_REPLICA: u32 = REFERENCE_NAMESPACE - 1;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

const BLOCK_BITS: u32 = 24;
const UNIFORM_BLOCK_BASE: u32 = 1 << 23;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let product = u64::from(a) * u64::from(b);
    ((product >> 32) as u32, product as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut key = key;
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// Which family of draws a key belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Stream {
    /// Brownian increments.
    Increment = 0,
    /// Initial-law samples.
    Initial = 1,
    /// Everything else: subsample selection, target draws.
    Auxiliary = 2,
}

#[inline]
fn unit_open_closed(hi: u32, lo: u32) -> f64 {
    // (0, 1]
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    (bits as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(hi: u32, lo: u32) -> f64 {
    // [0, 1)
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(words: [u32; 4]) -> (f64, f64) {
    let u1 = unit_open_closed(words[0], words[1]);
    let u2 = unit_closed_open(words[2], words[3]);
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// Deterministic, random-access source of Brownian increments and auxiliary draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseGrid {
    seed: u64,
    dt: f64,
    sqrt_dt: f64,
}

impl NoiseGrid {
    pub fn new(seed: u64, dt: f64) -> Self {
        NoiseGrid {
            seed,
            dt,
            sqrt_dt: dt.sqrt(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    fn key(&self) -> [u32; 2] {
        [self.seed as u32, (self.seed >> 32) as u32]
    }

    /// Raw 128-bit block for a key.
    #[inline]
    pub fn block(&self, stream: Stream, replica: u32, particle: u32, step: u32, block: u32) -> [u32; 4] {
        debug_assert!(block < (1 << BLOCK_BITS));
        let tag = ((stream as u32) << BLOCK_BITS) | block;
        philox4x32([particle, step, replica, tag], self.key())
    }

    /// Standard normal for one coordinate of a key.
    #[inline]
    pub fn standard_normal(&self, stream: Stream, replica: u32, particle: u32, step: u32, coord: u32) -> f64 {
        let (z0, z1) = box_muller(self.block(stream, replica, particle, step, coord / 2));
        if coord % 2 == 0 {
            z0
        } else {
            z1
        }
    }

    /// Standard normals for coordinates `0..out.len()` of a key.
    pub fn fill_standard_normals(&self, stream: Stream, replica: u32, particle: u32, step: u32, out: &mut [f64]) {
        for (block, pair) in out.chunks_mut(2).enumerate() {
            let (z0, z1) = box_muller(self.block(stream, replica, particle, step, block as u32));
            pair[0] = z0;
            if let Some(second) = pair.get_mut(1) {
                *second = z1;
            }
        }
    }

    /// Brownian increment `B(t_{k+1}) - B(t_k)` for coordinate `coord`: an exact N(0, dt) draw.
    #[inline]
    pub fn increment(&self, replica: u32, particle: u32, step: u32, coord: u32) -> f64 {
        self.sqrt_dt * self.standard_normal(Stream::Increment, replica, particle, step, coord)
    }

    /// All coordinates of the increment for `(replica, particle, step)`.
    pub fn fill_increments(&self, replica: u32, particle: u32, step: u32, out: &mut [f64]) {
        self.fill_standard_normals(Stream::Increment, replica, particle, step, out);
        for value in out.iter_mut() {
            *value *= self.sqrt_dt;
        }
    }

    /// Uniform on `[0, 1)`; `index` selects among independent uniforms of the same key.
    pub fn uniform(&self, stream: Stream, replica: u32, particle: u32, step: u32, index: u32) -> f64 {
        let words = self.block(stream, replica, particle, step, UNIFORM_BLOCK_BASE + index / 2);
        if index % 2 == 0 {
            unit_closed_open(words[0], words[1])
        } else {
            unit_closed_open(words[2], words[3])
        }
    }

    /// A conventional RNG seeded from one key, for combinatorial draws such as subsampling.
    pub fn keyed_rng(&self, stream: Stream, replica: u32, particle: u32, step: u32) -> ChaCha8Rng {
        let a = self.block(stream, replica, particle, step, UNIFORM_BLOCK_BASE - 1);
        let b = self.block(stream, replica, particle, step, UNIFORM_BLOCK_BASE - 2);
        let mut seed = [0u8; 32];
        for (chunk, word) in seed.chunks_mut(4).zip(a.iter().chain(b.iter())) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn same_key_same_value() {
        let grid = NoiseGrid::new(42, 0.01);
        let a = grid.increment(3, 17, 99, 1);
        let b = grid.increment(3, 17, 99, 1);
        assert_eq!(a.to_bits(), b.to_bits());
        let mut filled = [0.0; 3];
        grid.fill_increments(3, 17, 99, &mut filled);
        assert_eq!(filled[1].to_bits(), a.to_bits());
        assert_eq!(filled[2].to_bits(), grid.increment(3, 17, 99, 2).to_bits());
    }

    #[test]
    fn keys_are_sensitive_to_every_field() {
        let grid = NoiseGrid::new(7, 1.0);
        let base = grid.increment(1, 2, 3, 0);
        assert_ne!(base, NoiseGrid::new(8, 1.0).increment(1, 2, 3, 0));
        assert_ne!(base, grid.increment(0, 2, 3, 0));
        assert_ne!(base, grid.increment(1, 1, 3, 0));
        assert_ne!(base, grid.increment(1, 2, 2, 0));
        assert_ne!(base, grid.increment(1, 2, 3, 1));
        assert_ne!(base, grid.standard_normal(Stream::Initial, 1, 2, 3, 0));
    }

    #[test]
    fn increments_have_variance_dt() {
        let dt = 0.25;
        let grid = NoiseGrid::new(2024, dt);
        let n = 200_000u32;
        let draws: Vec<f64> = (0..n).map(|i| grid.increment(0, i, 0, 0)).collect();
        let mean = draws.iter().sum::<f64>() / f64::from(n);
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / f64::from(n - 1);
        // 5 standard errors
        assert!(mean.abs() < 5.0 * (dt / f64::from(n)).sqrt(), "mean {mean}");
        assert!((var - dt).abs() < 5.0 * dt * (2.0 / f64::from(n)).sqrt(), "var {var}");
    }

    #[test]
    fn standard_normals_pass_batched_ks() {
        // 20 batches of 5000; KS critical value at 1% is 1.63/sqrt(n). Allow one batch to fail.
        let grid = NoiseGrid::new(11, 1.0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 5000usize;
        let crit = 1.63 / (n as f64).sqrt();
        let mut failures = 0;
        for batch in 0..20u32 {
            let mut xs: Vec<f64> = (0..n as u32)
                .map(|i| grid.standard_normal(Stream::Increment, batch, i, 5, i % 3))
                .collect();
            xs.sort_by(f64::total_cmp);
            let d = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = normal.cdf(x);
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            if d > crit {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} KS batches rejected");
    }

    #[test]
    fn neighbouring_keys_are_uncorrelated() {
        let grid = NoiseGrid::new(5, 1.0);
        let n = 100_000u32;
        let pairs: [(fn(&NoiseGrid, u32) -> (f64, f64), &str); 4] = [
            (|g, i| (g.increment(0, i, 0, 0), g.increment(0, i, 0, 1)), "coordinate"),
            (|g, i| (g.increment(0, i, 0, 0), g.increment(0, i + 1, 0, 0)), "particle"),
            (|g, i| (g.increment(0, i, 0, 0), g.increment(0, i, 1, 0)), "step"),
            (|g, i| (g.increment(0, i, 0, 0), g.increment(1, i, 0, 0)), "replica"),
        ];
        for (pair, label) in pairs {
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let (x, y) = pair(&grid, i);
                sxy += x * y;
                sxx += x * x;
                syy += y * y;
            }
            let corr = sxy / (sxx * syy).sqrt();
            assert!(corr.abs() < 5.0 / f64::from(n).sqrt(), "{label}: corr {corr}");
        }
    }

    #[test]
    fn uniforms_in_unit_interval() {
        let grid = NoiseGrid::new(3, 1.0);
        let mut sum = 0.0;
        for i in 0..10_000u32 {
            let u = grid.uniform(Stream::Auxiliary, 0, i, 0, i % 5);
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.015);
    }
}
