//! Reproducible random streams.
//!
//! A [`RngSpec`] names a ChaCha8 stream by `(seed, stream_id)`. Child specs
//! are derived by folding labels into the seed with SplitMix64, so the same
//! root seed and the same label path always yield the same draws:
//!
//! ```text
//! child.seed      = splitmix64(parent.seed ^ splitmix64(label))
//! child.stream_id = parent.stream_id
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        RngSpec { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        RngSpec { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derives an independent child spec for `label`.
    pub fn derive(&self, label: u64) -> RngSpec {
        RngSpec { seed: splitmix64(self.seed ^ splitmix64(label)), stream_id: self.stream_id }
    }

    /// Derives a child spec from a string tag (e.g. a command name).
    pub fn derive_tag(&self, tag: &str) -> RngSpec {
        // FNV-1a; stable across platforms and releases.
        let hash = tag
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
        self.derive(hash)
    }

    /// The per-unit spec used by batch commands: root → command → input → class.
    pub fn for_unit(&self, command: &str, input_index: u64, class_id: u64) -> RngSpec {
        self.derive_tag(command).derive(input_index).derive(class_id)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
