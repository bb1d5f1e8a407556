//! Counter-based random substreams.
//!
//! Every stochastic routine draws from a [`Streams`] handle: a master seed
//! plus an experiment tag. Replicate `r` of experiment `e` always gets the
//! ChaCha8 stream keyed by `(seed, e)` with stream id `r`, so results do not
//! depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Experiment tags used inside the crate. Callers may use any other value.
pub mod tag {
    pub const GAUSSIAN: u64 = 0x01;
    pub const MOMENTS: u64 = 0x02;
    pub const FACTOR: u64 = 0x03;
    pub const REGRESSION: u64 = 0x04;
    pub const KDE: u64 = 0x05;
    pub const BAND: u64 = 0x06;
    pub const PERIMETRIC: u64 = 0x07;
    pub const KS: u64 = 0x08;
    pub const LP_QUANTILE: u64 = 0x09;
    pub const COVERAGE: u64 = 0x0a;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Streams {
    seed: u64,
    experiment: u64,
}

impl Streams {
    pub fn new(seed: u64, experiment: u64) -> Self {
        Self { seed, experiment }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn experiment(&self) -> u64 {
        self.experiment
    }

    /// Generator for replicate `replicate`.
    pub fn rng(&self, replicate: u64) -> Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.experiment.to_le_bytes());
        key[16..24].copy_from_slice(b"ylab-rng");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate);
        rng
    }

    /// A derived family, e.g. for the inner loop of replicate `index`.
    pub fn child(&self, index: u64) -> Streams {
        // splitmix64 finaliser keeps nested tags from colliding with flat ones
        let mut z = self
            .experiment
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Streams {
            seed: self.seed,
            experiment: z,
        }
    }
}
