//! Child seeds.
//!
//! Every task gets `splitmix64(splitmix64(master) ^ key)` where
//! `key = sweep << 32 | replication << 8 | tag`. SplitMix64's output mix is
//! a bijection on `u64`, so for a fixed master seed distinct keys always give
//! distinct seeds. Sweep indices must stay below `2^32`, replications below
//! `2^24`; tags fit in a byte.

/// SplitMix64 step: add the golden-gamma increment, then mix.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Tag of the scenario stream; mechanism tags start at 1.
pub const SCENARIO_TAG: u8 = 0;

pub fn child_seed(master: u64, sweep: u32, replication: u32, tag: u8) -> u64 {
    assert!(replication < 1 << 24, "replication index too large");
    let key = (sweep as u64) << 32 | (replication as u64) << 8 | tag as u64;
    splitmix64(splitmix64(master) ^ key)
}
