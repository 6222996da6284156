//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! master seed and addressed by a `(domain, index)` pair. Stream `n` of a
//! domain never depends on how many other streams were consumed, so a trial's
//! randomness is a pure function of `(master_seed, trial)` and results do not
//! change with the thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent uses of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    MonteCarlo = 1,
    PredictedDistributions = 2,
    CrossValidation = 3,
    SyntheticLowFi = 4,
    SyntheticHighFi = 5,
    SyntheticFatality = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `index` of `domain` under `master_seed`.
pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(master_seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
