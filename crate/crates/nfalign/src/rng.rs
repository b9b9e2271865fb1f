//! Deterministic, splittable random streams for the simulation.
//!
//! Every consumer derives its own stream from `(master_seed, trial_index,
//! stream tag)`, so trials can run in any order, on any number of workers,
//! and still reproduce bit-identical draws. The generator is splitmix64,
//! which is counter-based (the key fully determines the sequence) and fast.
//! It is not cryptographically secure.

use num_complex::Complex64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tag separating the random streams used within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    /// User position draw (angle, range, per-sample power).
    UePosition,
    /// Measurement noise for the DFT sweep.
    Measurement,
    /// Fresh noise draws for the polar exhaustive search.
    PolarProbe,
    /// Extra probe noise for the support-width baseline.
    CandidateProbe,
    /// Network weight initialization.
    WeightInit,
    /// Training-set shuffling.
    Shuffle,
    /// Dropout masks.
    Dropout,
    /// Scratch stream for tests.
    Test,
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::UePosition => 1,
            StreamTag::Measurement => 2,
            StreamTag::PolarProbe => 3,
            StreamTag::CandidateProbe => 4,
            StreamTag::WeightInit => 5,
            StreamTag::Shuffle => 6,
            StreamTag::Dropout => 7,
            StreamTag::Test => 8,
        }
    }
}

/// Splitmix64 stream keyed by `(master_seed, trial_index, tag)`.
#[derive(Debug, Clone)]
pub struct TrialRng {
    state: u64,
}

impl TrialRng {
    pub fn new(master_seed: u64, trial_index: u64, tag: StreamTag) -> Self {
        let key = mix(master_seed)
            ^ mix(trial_index.wrapping_mul(GOLDEN).wrapping_add(1))
            ^ mix(tag.code().wrapping_mul(0xD605_0B4A_869A_AE35).wrapping_add(2));
        TrialRng { state: mix(key) }
    }

    /// Single-key constructor for standalone consumers (e.g. tests).
    pub fn from_seed(seed: u64) -> Self {
        TrialRng { state: mix(seed) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection-free scaling (n small).
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal pair via the Box-Muller transform:
    /// `r = sqrt(-2 ln u1)`, `(r cos 2*pi*u2, r sin 2*pi*u2)` with `u1 in (0,1]`.
    #[inline]
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        (r * phi.cos(), r * phi.sin())
    }

    /// Circularly-symmetric complex Gaussian with total variance `var`
    /// (real and imaginary parts each carry `var / 2`).
    #[inline]
    pub fn complex_gaussian(&mut self, var: f64) -> Complex64 {
        let (a, b) = self.gaussian_pair();
        let s = (var / 2.0).sqrt();
        Complex64::new(a * s, b * s)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
