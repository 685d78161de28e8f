//! Fixtures shared by the benchmarks.

use coldsim_core::backbone::{BackboneModel, BprTriple};
use coldsim_core::embedding::EmbeddingTable;
use coldsim_core::ids::{ItemId, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_table(rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingTable::from_vec(
        rows,
        dim,
        (0..rows * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

pub fn backbone(users: usize, items: usize, dim: usize, seed: u64) -> BackboneModel {
    BackboneModel::new(
        uniform_table(users, dim, seed),
        uniform_table(items, dim, seed + 1),
    )
    .unwrap()
}

/// `n` triples with the positive drawn from the first half of the items
/// and the negative from the second.
pub fn triples(users: usize, items: usize, n: usize, seed: u64) -> Vec<BprTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| BprTriple {
            user: UserId::from(rng.random_range(0..users)),
            pos: ItemId::from(rng.random_range(0..items / 2)),
            neg: ItemId::from(rng.random_range(items / 2..items)),
        })
        .collect()
}
