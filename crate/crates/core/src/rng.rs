//! Counter-based random numbers.
//!
//! A stream is a 64-bit key; value `k` of a stream is the SplitMix64 output
//! for state `key + (k + 1) * 0x9E3779B97F4A7C15`:
//!
//! ```text
//! z = key + (k + 1) * 0x9E3779B97F4A7C15        (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Child streams are derived from a label: `child = mix(key ^ fnv1a64(label))`
//! where `mix` is the three finalizer lines above. Uniforms take the top 53
//! bits: `((z >> 11) + 0.5) / 2^53`, which lies strictly inside `(0, 1)`.
//!
//! Any value can be computed from `(key, k)` alone, so pixel-parallel
//! generation reproduces the sequential result exactly, in any language.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: seed }
    }

    /// Independent stream named by `label`.
    pub fn stream(&self, label: &str) -> Self {
        Self {
            key: mix(self.key ^ fnv1a64(label)),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn bits(&self, counter: u64) -> u64 {
        mix(self
            .key
            .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Gamma(shape `looks`, scale `1/looks`) as the mean of `looks` unit
    /// exponentials; consumes counters `counter*looks .. counter*looks+looks`.
    pub fn gamma_unit_mean(&self, counter: u64, looks: u32) -> f64 {
        let base = counter * u64::from(looks);
        let sum: f64 = (0..u64::from(looks))
            .map(|k| -self.uniform(base + k).ln())
            .sum();
        sum / f64::from(looks)
    }

    pub fn cursor(&self) -> Cursor {
        Cursor {
            rng: *self,
            next: 0,
        }
    }
}

/// Sequential reader over a stream, for draws whose count is data dependent.
#[derive(Clone, Debug)]
pub struct Cursor {
    rng: CounterRng,
    next: u64,
}

impl Cursor {
    pub fn uniform(&mut self) -> f64 {
        let u = self.rng.uniform(self.next);
        self.next += 1;
        u
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.uniform() * n as f64) as u64).min(n - 1)
    }

    pub fn position(&self) -> u64 {
        self.next
    }
}
