//! Keyed, counter-based random streams.
//!
//! Every trial of a Monte Carlo study gets its own ChaCha8 stream whose key
//! is built from `(seed, detector id, sample size)` and whose stream number is
//! the trial index. No two coordinates share state, so results do not depend
//! on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type handed to the samplers.
pub type Stream = ChaCha8Rng;

/// Tags separating independent uses of the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Trial = 0x7472_6961_6c00_0001,
    Replicate = 0x7265_706c_6963_0002,
}

/// Coordinates of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub family: u64,
    pub size: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn trial(seed: u64, detector: usize, n: usize, trial: u64) -> Self {
        StreamKey {
            seed,
            family: detector as u64,
            size: n as u64,
            index: trial,
        }
    }

    /// Open the stream for `domain`.
    pub fn open(&self, domain: Domain) -> Stream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.family.to_le_bytes());
        key[16..24].copy_from_slice(&self.size.to_le_bytes());
        key[24..].copy_from_slice(&(domain as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.index);
        rng
    }
}

/// Stream for the `trial`-th trial of detector `detector` at sample size `n`.
pub fn trial_stream(seed: u64, detector: usize, n: usize, trial: u64) -> Stream {
    StreamKey::trial(seed, detector, n, trial).open(Domain::Trial)
}

/// Stream for a standalone replicate (estimator studies outside the detection
/// engine). `size` lets replicates at different sample sizes stay independent.
pub fn replicate_stream(seed: u64, size: usize, replicate: u64) -> Stream {
    StreamKey {
        seed,
        family: 0,
        size: size as u64,
        index: replicate,
    }
    .open(Domain::Replicate)
}
