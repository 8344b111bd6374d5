use serde::{Deserialize, Serialize};

use super::bank::{Action, BankMetadata, CoresetBank, EpochStats};
use crate::error::{Error, Result};

/// A replayable stream of patch vectors.
///
/// Every epoch must present the same base data in the same order; sources
/// may vary augmentation per epoch.
pub trait PatchSource {
    fn dim(&self) -> usize;

    /// Streams `epoch`, handing `sink` row-major batches of at most
    /// `max_batch` vectors.
    fn stream(
        &mut self,
        epoch: usize,
        max_batch: usize,
        sink: &mut dyn FnMut(&[f32]) -> Result<()>,
    ) -> Result<()>;
}

/// In-memory source over a row-major slice.
pub struct SliceSource<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> SliceSource<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: data.len() % dim.max(1),
            });
        }
        Ok(Self { data, dim })
    }
}

impl PatchSource for SliceSource<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn stream(
        &mut self,
        _epoch: usize,
        max_batch: usize,
        sink: &mut dyn FnMut(&[f32]) -> Result<()>,
    ) -> Result<()> {
        for batch in self.data.chunks(max_batch * self.dim) {
            sink(batch)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Total epoch budget, counting epochs already recorded in the bank.
    pub max_epochs: usize,
    /// Largest batch of in-flight patch vectors.
    pub chunk_size: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_epochs: 5,
            chunk_size: super::DEFAULT_CHUNK,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitStats {
    /// Epochs run by this call.
    pub epochs: Vec<EpochStats>,
    /// True when an epoch without changes ended training.
    pub converged: bool,
    pub final_d_m: Option<f32>,
    /// Largest `members + in-flight vectors` observed.
    pub peak_resident_vectors: usize,
}

/// Runs the replacement rule over `source` for up to `max_epochs` epochs in
/// total, stopping after the first epoch that neither fills nor replaces.
///
/// Progress is recorded in `bank.metadata.epochs`, so a reloaded bank
/// resumes exactly where an uninterrupted run would be.
pub fn fit(
    bank: &mut CoresetBank,
    source: &mut dyn PatchSource,
    options: FitOptions,
) -> Result<FitStats> {
    if options.chunk_size == 0 {
        return Err(Error::config("chunk size must be >= 1"));
    }
    if source.dim() != bank.dim() {
        return Err(Error::Dimension {
            expected: bank.dim(),
            found: source.dim(),
        });
    }
    let mut stats = FitStats {
        epochs: Vec::new(),
        converged: bank
            .metadata
            .epochs
            .last()
            .is_some_and(|e| e.changes() == 0),
        final_d_m: bank.d_m(),
        peak_resident_vectors: bank.fill(),
    };
    let dim = bank.dim();
    while !stats.converged && bank.metadata.epochs.len() < options.max_epochs {
        let epoch = bank.metadata.epochs.len();
        let mut e = EpochStats {
            epoch,
            filled: 0,
            replaced: 0,
            rejected: 0,
            d_m: None,
        };
        let mut peak = stats.peak_resident_vectors;
        source.stream(epoch, options.chunk_size, &mut |batch| {
            let rows = batch.len() / dim;
            if rows > options.chunk_size || !batch.len().is_multiple_of(dim) {
                return Err(Error::Dimension {
                    expected: options.chunk_size * dim,
                    found: batch.len(),
                });
            }
            peak = peak.max(bank.fill() + rows);
            for v in batch.chunks_exact(dim) {
                match bank.observe(v)?.action {
                    Action::Filled(_) => e.filled += 1,
                    Action::Replaced(_) => e.replaced += 1,
                    Action::Rejected => e.rejected += 1,
                }
            }
            Ok(())
        })?;
        e.d_m = bank.d_m();
        log::debug!(
            "epoch {epoch}: filled {} replaced {} rejected {} d_m {:?}",
            e.filled,
            e.replaced,
            e.rejected,
            e.d_m
        );
        stats.converged = e.changes() == 0;
        stats.peak_resident_vectors = peak;
        bank.metadata.epochs.push(e.clone());
        stats.epochs.push(e);
    }
    stats.final_d_m = bank.d_m();
    Ok(stats)
}

struct MeldSource<'a> {
    sources: &'a [&'a CoresetBank],
    dim: usize,
}

impl PatchSource for MeldSource<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn stream(
        &mut self,
        _epoch: usize,
        max_batch: usize,
        sink: &mut dyn FnMut(&[f32]) -> Result<()>,
    ) -> Result<()> {
        for s in self.sources {
            for batch in s.members().chunks(max_batch * self.dim) {
                sink(batch)?;
            }
        }
        Ok(())
    }
}

/// Streams the members of `sources`, in order, into a fresh bank of
/// `target_capacity`, repeating passes until one makes no change.
pub fn meld(
    sources: &[&CoresetBank],
    target_capacity: usize,
    max_passes: usize,
) -> Result<CoresetBank> {
    let first = sources
        .first()
        .ok_or_else(|| Error::config("meld needs at least one source coreset"))?;
    // a different extractor usually means a different dim too; report the cause
    for s in &sources[1..] {
        if s.metadata.extractor_hash != first.metadata.extractor_hash {
            return Err(Error::MixedExtractor(
                first.metadata.extractor_hash.clone(),
                s.metadata.extractor_hash.clone(),
            ));
        }
        if s.dim() != first.dim() {
            return Err(Error::Dimension {
                expected: first.dim(),
                found: s.dim(),
            });
        }
    }
    let metadata = BankMetadata {
        extractor_hash: first.metadata.extractor_hash.clone(),
        creation_seed: first.metadata.creation_seed,
        epochs: Vec::new(),
        sources: sources.iter().map(|s| s.content_hash()).collect(),
    };
    let mut bank = CoresetBank::new(target_capacity, first.dim(), metadata)?;
    let mut source = MeldSource {
        sources,
        dim: first.dim(),
    };
    let stats = fit(
        &mut bank,
        &mut source,
        FitOptions {
            max_epochs: max_passes,
            chunk_size: super::DEFAULT_CHUNK,
        },
    )?;
    if !stats.converged {
        log::warn!("meld stopped after {max_passes} passes without converging");
    }
    Ok(bank)
}
