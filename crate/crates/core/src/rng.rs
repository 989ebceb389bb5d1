//! Counter-based random streams.
//!
//! Every block of synthetic data is drawn from its own ChaCha8 stream. The
//! key is derived from the master seed and a [`Purpose`] tag by two rounds of
//! SplitMix64; the ChaCha stream id is the block index. Block `i` of a given
//! purpose is therefore the same no matter which worker generates it or in
//! which order, which is what makes parallel generation reproduce sequential
//! generation bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent families of random streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Train = 1,
    Validation = 2,
    Test = 3,
    Calibration = 4,
    Init = 5,
    Shuffle = 6,
    Session = 7,
    Empirical = 8,
    Misc = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed, e.g. one per sweep grid point.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// The random stream for block `index` of the given purpose.
pub fn block_rng(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose as u64));
    rng.set_stream(index);
    rng
}

/// A single sequential stream (stream id 0) for the given purpose.
pub fn purpose_rng(seed: u64, purpose: Purpose) -> StreamRng {
    block_rng(seed, purpose, 0)
}
