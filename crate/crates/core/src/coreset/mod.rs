//! Sequential coreset memory bank.
//!
//! The bank holds at most `capacity` patch vectors plus their dense pairwise
//! distance matrix. A streamed patch replaces the lower-indexed member of the
//! globally closest pair whenever its nearest-member distance exceeds that
//! pair's distance, so the bank expands over the nominal zone while never
//! holding more than the coreset itself.

mod bank;
mod fit;
mod format;
mod topdown;

pub use bank::{nn_distances, Action, BankMetadata, ChangeRecord, CoresetBank, EpochStats};
pub use fit::{fit, meld, FitOptions, FitStats, PatchSource, SliceSource};
pub use format::{decode_bank, encode_bank, load, save, CORESET_FILE_VERSION};
pub use topdown::reduce_topdown;

/// Default coreset size.
pub const DEFAULT_CAPACITY: usize = 2048;
/// Default number of query vectors per distance chunk.
pub const DEFAULT_CHUNK: usize = 2048;

/// Euclidean distance, accumulated in f64 in index order.
///
/// Every distance in the crate goes through this function, so a pair of
/// vectors always yields the same bits regardless of how work is chunked.
#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc.sqrt() as f32
}

/// Largest nearest-member distance over `data`; lower means better coverage.
pub fn covering_radius(bank: &CoresetBank, data: &[f32], chunk_size: usize) -> crate::Result<f32> {
    Ok(nn_distances(bank, data, chunk_size)?
        .into_iter()
        .fold(0.0, f32::max))
}
