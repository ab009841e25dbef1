//! Counter-based random streams.
//!
//! Every Gaussian draw in the crate comes from a ChaCha20 stream addressed by
//! `(seed, replicate, component)`. The seed selects the key, the pair
//! `(replicate, component)` selects the 64-bit stream word, so replicates can be
//! run in any order or in parallel and still reproduce bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Number of low bits of the stream word reserved for the component index.
const COMPONENT_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replicate: u64) -> Self {
        Self { seed, replicate }
    }

    /// Generator for one driver component of this replicate.
    pub fn component_rng(&self, component: usize) -> ChaCha20Rng {
        assert!(
            component < (1 << COMPONENT_BITS),
            "component index {component} exceeds stream layout"
        );
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream((self.replicate << COMPONENT_BITS) | component as u64);
        rng
    }

    /// Auxiliary generator (multistart designs, probes) that never collides with
    /// a driver stream of the same replicate.
    pub fn aux_rng(&self, tag: u16) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream((self.replicate << COMPONENT_BITS) | tag as u64);
        rng
    }
}
