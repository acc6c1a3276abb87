//! Seeded random streams.
//!
//! Every random decision draws from an xorshift generator keyed by
//! `(seed, purpose, index)`, so a sample or step can be regenerated without
//! replaying everything before it.

use rand::SeedableRng;
use rand_xorshift::XorShiftRng;

pub type Rng = XorShiftRng;

/// Independent stream families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TrainScene = 1,
    TestScene = 2,
    Init = 3,
    Shuffle = 4,
    Augment = 5,
    Probe = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for one `(seed, purpose, index)` key.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let key = splitmix(splitmix(seed) ^ splitmix((purpose as u64) << 56 ^ index));
    Rng::seed_from_u64(key)
}
