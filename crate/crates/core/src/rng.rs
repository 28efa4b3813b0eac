//! Counter-keyed random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose seed is a
//! hash of `(seed, purpose, epoch, batch, sample)`. Streams never share state,
//! so the draws for one sample do not depend on how many other samples were
//! processed before it or on which thread processed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    ValidationDraw = 3,
    Augment = 4,
    Gumbel = 5,
    Data = 6,
    Split = 7,
    Oracle = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Key of one training iteration: `(seed, epoch, batch)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl StreamKey {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        Self { seed, epoch, batch }
    }

    /// Stream for one sample of this iteration.
    pub fn sample_rng(&self, purpose: Purpose, sample: u64) -> ChaCha8Rng {
        stream(self.seed, purpose, &[self.epoch, self.batch, sample])
    }

    /// Stream for a whole-batch draw of this iteration.
    pub fn batch_rng(&self, purpose: Purpose) -> ChaCha8Rng {
        stream(self.seed, purpose, &[self.epoch, self.batch, u64::MAX])
    }
}

/// Stream keyed by `seed`, `purpose` and any number of counters.
pub fn stream(seed: u64, purpose: Purpose, counters: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(counters.len() + 2);
    words.push(seed);
    words.push(purpose as u64);
    words.extend_from_slice(counters);
    ChaCha8Rng::seed_from_u64(mix(&words))
}
