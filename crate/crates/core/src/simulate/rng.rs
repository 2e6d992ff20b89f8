//! Counter-based RNG substreams.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, path, attempt)`, so a
//! panel is the same whatever order rayon schedules the paths in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ATTEMPT_SHIFT: u32 = 40;

/// RNG for one path of a panel.
pub fn path_rng(seed: u64, path: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path | (attempt << ATTEMPT_SHIFT));
    rng
}

/// Derive an independent seed for a numbered child job (replicate, replication, group).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
