//! Seeded random source shared by every stochastic step.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood): a 64-bit counter
//! advanced by `0x9E3779B97F4A7C15` and passed through a fixed mixing
//! function. Every derived draw (uniform floats, bounded integers, shuffles,
//! Gaussians) is defined here in terms of `next_u64`, so a run can be
//! reproduced bit-for-bit by any implementation that follows these rules:
//!
//! * `next_f64` = `(next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! * `below(n)` draws `x = next_u64()` until `x >= (2^64 - n) mod n`, then
//!   returns `x mod n`.
//! * `shuffle` is Fisher-Yates from the last index down, `j = below(i + 1)`.
//! * `normal` is Box-Muller on `u1 = 1 - next_f64()`, `u2 = next_f64()`,
//!   returning the cosine branch only.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream `index` of `seed`, used for per-subject sub-seeds
    /// so parallel generation does not depend on scheduling.
    pub fn stream(seed: u64, index: u64) -> Self {
        let mut base = Self::new(seed ^ mix(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
        Self::new(base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) has no valid outcome");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Child generator seeded from this one's next output.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
