//! Stable seed derivation for independent random streams.
//!
//! Every Monte Carlo task derives its own generator from the run seed plus
//! the task's identity (block id, hour, ...), so results do not depend on
//! how tasks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every simulation and training stream.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Part of a derived seed's identity.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Num(u64),
    Str(&'a str),
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::Num(v)
    }
}

impl From<u32> for SeedPart<'_> {
    fn from(v: u32) -> Self {
        SeedPart::Num(u64::from(v))
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(v: usize) -> Self {
        SeedPart::Num(v as u64)
    }
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(v: &'a str) -> Self {
        SeedPart::Str(v)
    }
}

pub fn derive_seed(base: u64, parts: &[SeedPart<'_>]) -> u64 {
    let mut h = splitmix64(base);
    for part in parts {
        let v = match part {
            SeedPart::Num(n) => splitmix64(*n),
            SeedPart::Str(s) => fnv1a(s.as_bytes()),
        };
        h = splitmix64(h ^ v);
    }
    h
}

pub fn rng_for(base: u64, parts: &[SeedPart<'_>]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, parts))
}
