//! Shared fixtures for the kernel benchmarks.

use minihes_core::synth::LowRank;
use minihes_core::{init_factors, FactorState, HdiDataset};

/// Synthetic rank-5 problem with `entries` observed ratings spread over a
/// 4:1 user/item grid at 1% density, plus a factor state of width `f`.
pub fn fixture(entries: usize, f: usize) -> (HdiDataset, FactorState) {
    let cells = entries as f64 / 0.01;
    let num_items = (cells / 4.0).sqrt().round().max(1.0) as usize;
    let num_users = 4 * num_items;
    let data = LowRank {
        num_users,
        num_items,
        rank: 5,
        density: 0.01,
        noise_sigma: 0.1,
        seed: 1,
    }
    .generate()
    .expect("valid generator settings");
    let state = init_factors(num_users, num_items, f, 2).expect("f >= 1");
    (data, state)
}
