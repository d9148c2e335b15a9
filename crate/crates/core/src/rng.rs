//! Counter-based random streams.
//!
//! A [`Substream`] is a 64-bit key. Children are derived by hashing the parent
//! key with an integer id, so the stream for (replicate b, inner rep r) never
//! depends on which thread ran what, or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substream {
    key: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Substream {
    pub fn root(seed: u64) -> Self {
        Substream {
            key: splitmix(seed ^ 0x6A09_E667_F3BC_C908),
        }
    }

    pub fn child(&self, id: u64) -> Self {
        Substream {
            key: splitmix(self.key ^ splitmix(id.wrapping_add(0x3C6E_F372_FE94_F82B))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut k = self.key;
        for chunk in seed.chunks_mut(8) {
            k = splitmix(k);
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
