//! Counter-based random substreams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream keyed by the
//! master seed and a stream id, so results do not depend on how work is
//! scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids reserved by the library.
pub mod stream {
    pub const TRUTH_STATE: u64 = 1;
    pub const OBSERVATION_NOISE: u64 = 2;
    pub const INITIAL_CONDITION: u64 = 3;
    pub const RESAMPLING: u64 = 4;
    pub const PRIOR_DRAWS: u64 = 5;
    /// Particle `i` uses stream `PARTICLE_BASE + i`.
    pub const PARTICLE_BASE: u64 = 1 << 32;
    const CHILD_BASE: u64 = 1 << 48;

    pub(crate) fn child(index: u64) -> u64 {
        CHILD_BASE + index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, id: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(id);
        rng
    }

    /// Independent tree for repeat `index` of an experiment.
    pub fn child(&self, index: u64) -> SeedTree {
        let mut rng = self.stream(stream::child(index));
        SeedTree::new(rng.next_u64())
    }

    pub fn particle(&self, i: usize) -> StreamRng {
        self.stream(stream::PARTICLE_BASE + i as u64)
    }
}
