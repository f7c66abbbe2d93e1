//! Counter-based random streams.
//!
//! Every random draw in the toolkit is addressed, not sequenced: the value at
//! (seed, stream, counter) is a pure function of those three integers. Workers
//! can fill disjoint index ranges in any order and the output is identical to
//! a serial run, which is what makes simulation and probing reproducible at
//! any thread count.

/// A seeded family of independent value streams.
#[derive(Clone, Copy, Debug)]
pub struct StreamRng {
    seed: u64,
}

/// One addressable stream within a [`StreamRng`].
#[derive(Clone, Copy, Debug)]
pub struct Stream {
    base: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng { seed }
    }

    /// Stream addressed by a domain tag and an index (e.g. particle id).
    pub fn stream(&self, tag: u64, index: u64) -> Stream {
        let base = mix(self.seed ^ GOLDEN)
            ^ mix(tag.wrapping_mul(GOLDEN).wrapping_add(0x243F_6A88_85A3_08D3))
            ^ mix(index.wrapping_add(1).wrapping_mul(0x1000_0001_B3));
        Stream { base: mix(base) }
    }
}

impl Stream {
    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix(self.base ^ counter.wrapping_mul(GOLDEN).wrapping_add(1))
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        (self.u64_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn index_at(&self, counter: u64, n: usize) -> usize {
        debug_assert!(n > 0);
        // 128-bit multiply avoids modulo bias for the ranges used here.
        (((self.u64_at(counter) as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box-Muller on two addressed uniforms.
    #[inline]
    pub fn gauss_at(&self, counter: u64) -> f64 {
        let a = self.u64_at(counter.wrapping_mul(2));
        let b = self.u64_at(counter.wrapping_mul(2).wrapping_add(1));
        // u1 in (0, 1] so the log is finite
        let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Stream tags, one per consumer, so draws never collide across subsystems.
pub mod tags {
    pub const SDE: u64 = 0x5344_4531;
    pub const SDE_INIT: u64 = 0x5344_4530;
    pub const PROBE: u64 = 0x5052_4F42;
    pub const LM_INIT: u64 = 0x4C4D_494E;
    pub const LM_BATCH: u64 = 0x4C4D_4241;
}
