//! Seeding and reproducible random streams.
//!
//! All randomness flows through [`Seed`], a (value, stream) pair driving a
//! counter-based ChaCha generator. Monte Carlo replicate `r` draws from
//! `seed.substream(r)`, which makes every estimate a pure function of the
//! seed and the sample count, independent of how replicates are scheduled
//! across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A reproducible random stream identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    /// Base seed shared by all streams of one experiment.
    pub value: u64,
    /// Stream counter; replicates use consecutive streams.
    pub stream: u64,
}

impl Seed {
    pub fn new(value: u64) -> Self {
        Seed { value, stream: 0 }
    }

    pub fn with_stream(value: u64, stream: u64) -> Self {
        Seed { value, stream }
    }

    /// The stream `offset` positions after this one. A Monte Carlo run over
    /// `m` replicates consumes streams `[stream, stream + m)`; callers that
    /// issue several runs under one seed must space their base streams
    /// accordingly.
    pub fn substream(self, offset: u64) -> Self {
        Seed {
            value: self.value,
            stream: self.stream.wrapping_add(offset),
        }
    }

    /// Instantiate the generator positioned at this stream.
    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.value);
        rng.set_stream(self.stream);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_draws() {
        let a: Vec<f64> = (0..16).map({
            let mut r = Seed::with_stream(7, 3).rng();
            move |_| r.random()
        }).collect();
        let b: Vec<f64> = (0..16).map({
            let mut r = Seed::with_stream(7, 3).rng();
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut r0 = Seed::with_stream(7, 0).rng();
        let mut r1 = Seed::with_stream(7, 1).rng();
        let a: f64 = r0.random();
        let b: f64 = r1.random();
        assert_ne!(a, b);
    }

    #[test]
    fn substream_offsets() {
        assert_eq!(Seed::with_stream(1, 5).substream(3), Seed::with_stream(1, 8));
        assert_eq!(Seed::new(9).substream(0), Seed::with_stream(9, 0));
    }
}
