//! Longest-processing-time greedy assignment of whole tensors to shards.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorPartition {
    /// Shard index of each input tensor.
    pub assignment: Vec<usize>,
    /// Total bytes per shard.
    pub shard_sizes: Vec<u64>,
}

impl TensorPartition {
    pub fn max_shard(&self) -> u64 {
        self.shard_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// Sorts tensors by size (largest first, ties by input index) and gives each
/// to the currently lightest shard, lowest index first on ties.
///
/// # Panics
/// If `k == 0`.
pub fn partition_tensors_greedy(tensor_sizes: &[u64], k: usize) -> TensorPartition {
    assert!(k >= 1, "need at least one shard");
    let mut order: Vec<usize> = (0..tensor_sizes.len()).collect();
    order.sort_by_key(|&i| (Reverse(tensor_sizes[i]), i));

    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = (0..k).map(|s| Reverse((0, s))).collect();
    let mut assignment = vec![0; tensor_sizes.len()];
    let mut shard_sizes = vec![0u64; k];
    for i in order {
        let Reverse((load, shard)) = heap.pop().expect("heap holds k shards");
        assignment[i] = shard;
        shard_sizes[shard] = load + tensor_sizes[i];
        heap.push(Reverse((shard_sizes[shard], shard)));
    }
    TensorPartition { assignment, shard_sizes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_tensors_spread_one_per_shard() {
        let p = partition_tensors_greedy(&[5; 8], 8);
        assert_eq!(p.shard_sizes, vec![5; 8]);
        let mut shards = p.assignment.clone();
        shards.sort_unstable();
        assert_eq!(shards, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn lpt_finds_the_even_split() {
        let p = partition_tensors_greedy(&[7, 5, 4, 3, 1], 2);
        assert_eq!(p.shard_sizes, vec![10, 10]);
        assert_eq!(p.assignment, vec![0, 1, 1, 0, 1]);
    }

    #[test]
    fn single_shard_takes_everything() {
        let p = partition_tensors_greedy(&[3, 9, 1], 1);
        assert_eq!(p.assignment, vec![0, 0, 0]);
        assert_eq!(p.shard_sizes, vec![13]);
    }

    #[test]
    fn empty_input() {
        let p = partition_tensors_greedy(&[], 3);
        assert_eq!(p.shard_sizes, vec![0, 0, 0]);
        assert_eq!(p.max_shard(), 0);
    }
}
