//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqpatch::coreset::{BankMetadata, CoresetBank};
use seqpatch::synth::{render_dataset_sample, DatasetConfig, LightVariant, Split};
use seqpatch::PlateSpec;

/// `n` row-major vectors uniform in [0, 1)^dim.
pub fn uniform_vectors(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random::<f32>()).collect()
}

/// A full bank of `capacity` members fitted on uniform vectors.
pub fn full_bank(capacity: usize, dim: usize, seed: u64) -> CoresetBank {
    let mut bank = CoresetBank::new(capacity, dim, BankMetadata::default()).unwrap();
    for v in uniform_vectors(capacity * 4, dim, seed).chunks_exact(dim) {
        bank.observe(v).unwrap();
    }
    bank
}

/// Plate spec of a stained training sample at the given size.
pub fn stained_plate(size: usize, seed: u64) -> PlateSpec {
    let config = DatasetConfig {
        seed,
        width: size,
        height: size,
        stains: true,
        ..Default::default()
    };
    render_dataset_sample(&config, Split::Train, 0, LightVariant::Base, true)
}
