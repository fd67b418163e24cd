//! Per-purpose sub-seeds derived from one top-level seed.
//!
//! `derive(seed, purpose)` hashes the purpose label with 64-bit FNV-1a, xors it
//! into the seed and finishes with the SplitMix64 mixer. Thread counts never
//! enter the derivation, so they cannot change any random draw.

pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const SYNTH: &str = "synth";

pub fn derive(seed: u64, purpose: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
