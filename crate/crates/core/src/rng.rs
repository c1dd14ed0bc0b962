//! Reproducible random streams.
//!
//! Every stochastic unit of work (a sampled path, a particle's update at a
//! given time, a rejuvenation move) draws from its own ChaCha stream keyed by
//! the master seed, a purpose tag and a counter. Results therefore do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams used for different jobs disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    PathSampling = 1,
    PriorDraw = 2,
    InnerResample = 3,
    OuterResample = 4,
    Rejuvenate = 5,
    Simulate = 6,
    Contaminate = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(seed, purpose, epoch)` with sub-stream `index`.
///
/// `epoch` is typically a time step or event counter; `index` a path or
/// particle number.
pub fn stream(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> StreamRng {
    let key = splitmix64(splitmix64(seed ^ ((purpose as u64) << 56)) ^ epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
