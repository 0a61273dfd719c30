//! Seeded pseudo-random numbers with a fully pinned algorithm.
//!
//! The generator is PCG-XSH-RR with a 64-bit state and 32-bit output:
//! `state ← state · 6364136223846793005 + (stream << 1 | 1)`, output is the
//! xorshifted high bits rotated by the top five bits of the old state.
//! Gaussian draws use the Box–Muller transform, consuming two uniforms per
//! pair of normals. Nothing here depends on platform or library versions, so
//! seeded runs reproduce bit-for-bit everywhere.

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const DEFAULT_STREAM: u64 = 1_442_695_040_888_963_407;

#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    increment: u64,
    spare_normal: Option<f64>,
}

impl Pcg32 {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, DEFAULT_STREAM)
    }

    /// Independent sequence for the same seed, selected by `stream`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Self {
            state: 0,
            increment: (stream << 1) | 1,
            spare_normal: None,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(seed);
        rng.step();
        rng
    }

    /// Derives a child generator; used to give each subsystem its own stream.
    pub fn fork(&mut self, tag: u64) -> Self {
        let seed = (u64::from(self.next_u32()) << 32) | u64::from(self.next_u32());
        Self::with_stream(seed, tag)
    }

    #[inline]
    fn step(&mut self) {
        self.state = self
            .state
            .wrapping_mul(MULTIPLIER)
            .wrapping_add(self.increment);
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.step();
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        let hi = u64::from(self.next_u32()) >> 5;
        let lo = u64::from(self.next_u32()) >> 6;
        ((hi << 26) | lo) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..bound`, unbiased by rejection.
    pub fn below(&mut self, bound: u32) -> u32 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Standard normal deviate via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U keeps the radius argument inside (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * theta.sin());
        radius * theta.cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below((i + 1) as u32) as usize;
            items.swap(i, j);
        }
    }
}

/// Source of standard-normal noise for latent sampling.
pub trait GaussianSource {
    fn standard_normal(&mut self) -> f64;
}

impl GaussianSource for Pcg32 {
    fn standard_normal(&mut self) -> f64 {
        self.normal()
    }
}

/// Noise source that always yields zero, so sampling returns the mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl GaussianSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }
}
