//! Debug builds count the multiply-adds of the sparse forward pass.
#![cfg(debug_assertions)]

mod common;

use wta_core::index::select_batch;
use wta_core::layer::{forward_sparse, forward_sparse_macs};
use wta_core::wta::{gen_permutations, hash_matrix};
use wta_core::{MultiHashIndex, WtaConfig};

#[test]
fn sparse_forward_does_exactly_active_times_k_work() {
    let mut r = common::rng(1);
    let (n, k, m) = (200, 48, 9);
    let w = common::gaussian(&mut r, n, k);
    let x = common::gaussian(&mut r, m, k);
    let perms = gen_permutations(WtaConfig::with_defaults(k, 3)).unwrap();
    let idx = MultiHashIndex::build(&w, &perms).unwrap();
    let forced: Vec<Vec<u32>> = (0..m as u32).map(|j| vec![j * 11]).collect();
    let active = select_batch(&hash_matrix(&x, &perms).unwrap(), &idx, 7, &forced).unwrap();
    let before = forward_sparse_macs();
    forward_sparse(&x, &w, &active, 0.0).unwrap();
    let total: usize = active.iter().map(|a| a.len()).sum();
    assert_eq!(forward_sparse_macs() - before, (total * k) as u64);
    assert!(total <= m * 8);
}
