//! Seeded, stream-parallel Monte Carlo plumbing.
//!
//! Work is cut into a fixed number of streams, each driven by its own
//! ChaCha stream derived from `(seed, stream index)`. Streams run on the
//! rayon pool and are reduced in stream order, so results depend on the seed
//! and stream count but never on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const DEFAULT_STREAMS: usize = 64;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `n` items over `streams` chunks as evenly as possible.
pub fn chunk_sizes(n: usize, streams: usize) -> Vec<usize> {
    let streams = streams.max(1);
    (0..streams)
        .map(|s| n / streams + usize::from(s < n % streams))
        .collect()
}

/// Runs `work(rng, count)` for every stream and returns the per-stream results in order.
pub fn run_streams<T, F>(n: usize, seed: u64, streams: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    chunk_sizes(n, streams)
        .into_par_iter()
        .enumerate()
        .map(|(s, count)| {
            let mut rng = stream_rng(seed, s as u64);
            work(&mut rng, count)
        })
        .collect()
}

/// Running mean and variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanVar {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}
