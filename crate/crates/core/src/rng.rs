//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a [`Stream`]: a 64-bit key
//! plus a path of counters. Children are derived by mixing the parent key with
//! the child counter, so the values drawn for (chain 3, step 10 000) do not
//! depend on how many other draws were made before, or on which thread made
//! them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream id reserved for eigen-index draws inside one estimator evaluation.
pub const STREAM_INDICES: u64 = 0;
/// Stream id for the first domain batch (`x_beta`).
pub const STREAM_BATCH_A: u64 = 1;
/// Stream id for the second domain batch (`x_gamma`).
pub const STREAM_BATCH_B: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stream {
    pub key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { key: splitmix64(seed) }
    }

    /// Derived stream for counter `index`.
    pub fn child(self, index: u64) -> Self {
        Stream {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    /// Generator on ChaCha stream `id` under this key. Distinct ids under the
    /// same key produce non-overlapping keystreams.
    pub fn substream(self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(id);
        rng
    }
}
