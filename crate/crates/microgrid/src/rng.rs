//! Seeded, splittable random streams.
//!
//! All randomness flows through [`RngStream`], a ChaCha8 counter-mode
//! generator. A stream is identified by `(seed, stream id)` and yields the
//! same draw sequence on every platform. Parallel runs derive independent
//! substreams from one master seed by choosing distinct stream ids, so
//! results never depend on scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A deterministic random stream, single-owner: never share one stream
/// between concurrent consumers; derive a substream per consumer instead.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Generator family identifier, recorded for reproducibility notes.
    pub const ALGORITHM_ID: &'static str = "chacha8";

    /// The root stream (stream id 0) of a master seed.
    pub fn new(seed: u64) -> RngStream {
        RngStream::substream(seed, 0)
    }

    /// The substream `stream` of `seed`. Distinct stream ids under the same
    /// seed produce statistically independent sequences.
    pub fn substream(seed: u64, stream: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw from `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw from `0..n`. Panics if `n == 0`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "cannot draw from an empty range");
        self.rng.gen_range(0..n)
    }

    /// Samples an index from a normalized weight vector by CDF inversion.
    /// Weights must be non-negative and sum to 1 (within rounding).
    pub fn sample_categorical(&mut self, weights: &[f64]) -> usize {
        assert!(!weights.is_empty(), "cannot sample from empty weights");
        let u = self.next_f64();
        let mut cumulative = 0.0;
        for (index, weight) in weights.iter().enumerate() {
            cumulative += weight;
            if u < cumulative {
                return index;
            }
        }
        // Rounding left the total a hair under 1; the draw fell in the gap.
        weights.len() - 1
    }

    /// Poisson draw by CDF inversion: walk the pmf until the cumulative
    /// probability exceeds a single uniform draw.
    pub fn sample_poisson(&mut self, mean: f64) -> u32 {
        assert!(
            mean.is_finite() && mean >= 0.0,
            "Poisson mean must be finite and >= 0, got {mean}"
        );
        if mean == 0.0 {
            return 0;
        }
        let u = self.next_f64();
        let mut k = 0u32;
        let mut pmf = (-mean).exp();
        let mut cumulative = pmf;
        while u >= cumulative {
            k += 1;
            pmf *= mean / k as f64;
            cumulative += pmf;
            // Far-tail guard: once the pmf underflows the CDF cannot grow.
            if pmf == 0.0 {
                break;
            }
        }
        k
    }
}
