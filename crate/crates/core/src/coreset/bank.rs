use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::euclidean;
use crate::error::{Error, Result};

/// Statistics of one pass over the training stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub filled: usize,
    pub replaced: usize,
    pub rejected: usize,
    /// Minimum pairwise member distance at the end of the epoch.
    pub d_m: Option<f32>,
}

impl EpochStats {
    pub fn changes(&self) -> usize {
        self.filled + self.replaced
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BankMetadata {
    /// Hash of the extractor spec that produced the member vectors.
    pub extractor_hash: String,
    pub creation_seed: u64,
    /// Completed epochs, in order.
    pub epochs: Vec<EpochStats>,
    /// Content hashes of melded source banks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Filled(usize),
    Replaced(usize),
    Rejected,
}

/// Outcome of observing one patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeRecord {
    pub action: Action,
    /// Distance to the nearest member before the update (infinite when empty).
    pub d_p: f32,
    /// Minimum pairwise member distance before the update, once full.
    pub d_m: Option<f32>,
}

/// Per-row minimum over the strict upper triangle: `(distance, column)`.
type RowMin = (f32, usize);
const NO_ROW_MIN: RowMin = (f32::INFINITY, usize::MAX);

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetBank {
    capacity: usize,
    dim: usize,
    members: Vec<f32>,
    /// Dense `capacity x capacity` distances; empty until the bank is full.
    dist: Vec<f32>,
    row_min: Vec<RowMin>,
    pub metadata: BankMetadata,
}

impl CoresetBank {
    pub fn new(capacity: usize, dim: usize, metadata: BankMetadata) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("coreset capacity must be >= 1"));
        }
        if dim == 0 {
            return Err(Error::config("coreset dimension must be >= 1"));
        }
        Ok(Self {
            capacity,
            dim,
            members: Vec::with_capacity(capacity * dim),
            dist: Vec::new(),
            row_min: Vec::new(),
            metadata,
        })
    }

    /// Rebuilds a bank from stored parts; `dist` must be the full matrix when full.
    pub(crate) fn from_parts(
        capacity: usize,
        dim: usize,
        members: Vec<f32>,
        dist: Vec<f32>,
        metadata: BankMetadata,
    ) -> Self {
        let mut bank = Self {
            capacity,
            dim,
            members,
            dist,
            row_min: Vec::new(),
            metadata,
        };
        if bank.is_full() {
            bank.row_min = (0..capacity).map(|i| bank.scan_row(i)).collect();
        }
        bank
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.members.len() / self.dim
    }

    pub fn is_full(&self) -> bool {
        self.fill() == self.capacity
    }

    pub fn member(&self, i: usize) -> &[f32] {
        &self.members[i * self.dim..(i + 1) * self.dim]
    }

    /// Filled member vectors, row-major.
    pub fn members(&self) -> &[f32] {
        &self.members
    }

    /// Stored distance between members `i` and `j` (full banks only).
    pub fn distance(&self, i: usize, j: usize) -> f32 {
        self.dist[i * self.capacity + j]
    }

    #[cfg(test)]
    pub(crate) fn distance_matrix(&self) -> &[f32] {
        &self.dist
    }

    /// SHA-256 over shape and member bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.capacity as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for v in &self.members {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_vector(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("patch vector"));
        }
        Ok(())
    }

    /// Nearest member `(index, distance)`, lowest index on ties.
    pub fn nearest(&self, v: &[f32]) -> Option<(usize, f32)> {
        let mut best: Option<(usize, f32)> = None;
        for (i, m) in self.members.chunks_exact(self.dim).enumerate() {
            let d = euclidean(v, m);
            if best.is_none_or(|b| d < b.1) {
                best = Some((i, d));
            }
        }
        best
    }

    fn scan_row(&self, i: usize) -> RowMin {
        let row = &self.dist[i * self.capacity..(i + 1) * self.capacity];
        let mut best = NO_ROW_MIN;
        for (j, &d) in row.iter().enumerate().skip(i + 1) {
            if d < best.0 {
                best = (d, j);
            }
        }
        best
    }

    fn build_matrix(&mut self) {
        let n = self.capacity;
        self.dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = euclidean(self.member(i), self.member(j));
                self.dist[i * n + j] = d;
                self.dist[j * n + i] = d;
            }
        }
        self.row_min = (0..n).map(|i| self.scan_row(i)).collect();
    }

    fn global_min(&self) -> Option<(usize, usize, f32)> {
        let mut best: Option<(usize, usize, f32)> = None;
        for (i, &(d, j)) in self.row_min.iter().enumerate() {
            if j != usize::MAX && best.is_none_or(|b| d < b.2) {
                best = Some((i, j, d));
            }
        }
        best
    }

    /// Closest member pair `(i, j, d_m)` with `i < j`; ties resolve to the
    /// smallest `i`, then the smallest `j`.
    pub fn min_pair(&self) -> Result<(usize, usize, f32)> {
        if !self.is_full() {
            return Err(Error::NotFull {
                fill: self.fill(),
                capacity: self.capacity,
            });
        }
        self.global_min().ok_or(Error::Size {
            available: self.capacity,
            target: 2,
        })
    }

    /// Smallest off-diagonal distance, if the bank is full and has a pair.
    pub fn d_m(&self) -> Option<f32> {
        self.is_full()
            .then(|| self.global_min().map(|m| m.2))
            .flatten()
    }

    fn replace(&mut self, k: usize, v: &[f32]) {
        let n = self.capacity;
        self.members[k * self.dim..(k + 1) * self.dim].copy_from_slice(v);
        for j in 0..n {
            let d = if j == k {
                0.0
            } else {
                euclidean(v, self.member(j))
            };
            self.dist[k * n + j] = d;
            self.dist[j * n + k] = d;
        }
        self.row_min[k] = self.scan_row(k);
        for i in 0..k {
            let d = self.dist[i * n + k];
            let (cur, arg) = self.row_min[i];
            if d < cur || (d == cur && k < arg) {
                self.row_min[i] = (d, k);
            } else if arg == k && d != cur {
                self.row_min[i] = self.scan_row(i);
            }
        }
    }

    /// Streams one patch through the replacement rule.
    pub fn observe(&mut self, patch: &[f32]) -> Result<ChangeRecord> {
        self.check_vector(patch)?;
        let d_p = self.nearest(patch).map_or(f32::INFINITY, |n| n.1);
        if !self.is_full() {
            let index = self.fill();
            self.members.extend_from_slice(patch);
            if self.is_full() {
                self.build_matrix();
            }
            return Ok(ChangeRecord {
                action: Action::Filled(index),
                d_p,
                d_m: None,
            });
        }
        let Some((i, _j, d_m)) = self.global_min() else {
            // a single-member bank has no pair to improve on
            return Ok(ChangeRecord {
                action: Action::Rejected,
                d_p,
                d_m: None,
            });
        };
        let action = if d_p > d_m {
            self.replace(i, patch);
            Action::Replaced(i)
        } else {
            Action::Rejected
        };
        Ok(ChangeRecord {
            action,
            d_p,
            d_m: Some(d_m),
        })
    }
}

/// Distance from every query (row-major, `bank.dim()` wide) to its nearest
/// member. Chunks of `chunk_size` queries are processed in parallel; the
/// result does not depend on the chunk size.
pub fn nn_distances(bank: &CoresetBank, queries: &[f32], chunk_size: usize) -> Result<Vec<f32>> {
    if chunk_size == 0 {
        return Err(Error::config("chunk size must be >= 1"));
    }
    if bank.fill() == 0 {
        return Err(Error::EmptyBank);
    }
    let dim = bank.dim();
    if !queries.len().is_multiple_of(dim) {
        return Err(Error::Dimension {
            expected: dim,
            found: queries.len() % dim,
        });
    }
    let chunks: Vec<Vec<f32>> = queries
        .par_chunks(chunk_size * dim)
        .map(|chunk| {
            chunk
                .chunks_exact(dim)
                .map(|q| bank.nearest(q).expect("non-empty bank").1)
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank(capacity: usize, dim: usize) -> CoresetBank {
        CoresetBank::new(capacity, dim, BankMetadata::default()).unwrap()
    }

    fn brute_min_pair(b: &CoresetBank) -> (usize, usize, f32) {
        let mut best = (0, 0, f32::INFINITY);
        for i in 0..b.fill() {
            for j in i + 1..b.fill() {
                let d = euclidean(b.member(i), b.member(j));
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        best
    }

    #[test]
    fn rejects_close_patch() {
        let mut b = bank(2, 2);
        b.observe(&[0.0, 0.0]).unwrap();
        b.observe(&[1.0, 0.0]).unwrap();
        let r = b.observe(&[0.4, 0.0]).unwrap();
        assert_eq!(r.action, Action::Rejected);
        assert!((r.d_p - 0.4).abs() < 1e-6);
        assert_eq!(r.d_m, Some(1.0));
    }

    #[test]
    fn replaces_lower_index_of_min_pair() {
        let mut b = bank(2, 2);
        b.observe(&[0.0, 0.0]).unwrap();
        b.observe(&[1.0, 0.0]).unwrap();
        let r = b.observe(&[3.0, 0.0]).unwrap();
        assert_eq!(r.action, Action::Replaced(0));
        assert_eq!(r.d_p, 2.0);
        assert_eq!(r.d_m, Some(1.0));
        assert_eq!(b.members(), &[3.0, 0.0, 1.0, 0.0]);
        assert_eq!(b.d_m(), Some(2.0));
    }

    #[test]
    fn existing_member_is_rejected() {
        let mut b = bank(3, 1);
        for v in [0.0, 2.0, 5.0] {
            b.observe(&[v]).unwrap();
        }
        let r = b.observe(&[2.0]).unwrap();
        assert_eq!(r.d_p, 0.0);
        assert_eq!(r.action, Action::Rejected);
    }

    #[test]
    fn min_pair_examples() {
        let mut b = bank(3, 2);
        assert!(matches!(b.min_pair(), Err(Error::NotFull { .. })));
        for v in [[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]] {
            b.observe(&v).unwrap();
        }
        assert_eq!(b.min_pair().unwrap(), (0, 1, 1.0));

        let mut t = bank(4, 1);
        for v in [10.0, 0.0, 1.0, 11.0] {
            t.observe(&[v]).unwrap();
        }
        // pairs (0,3) and (1,2) both at 1.0
        assert_eq!(t.min_pair().unwrap(), (0, 3, 1.0));
    }

    #[test]
    fn fill_phase_duplicates_are_evicted_first() {
        let mut b = bank(3, 1);
        for v in [4.0, 4.0, 9.0] {
            b.observe(&[v]).unwrap();
        }
        assert_eq!(b.d_m(), Some(0.0));
        assert_eq!(b.observe(&[0.0]).unwrap().action, Action::Replaced(0));
    }

    #[test]
    fn dimension_and_finiteness_checked() {
        let mut b = bank(2, 2);
        assert!(matches!(b.observe(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            b.observe(&[f32::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn nn_distances_match_brute_force_and_chunking() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 5;
        let mut b = bank(16, dim);
        while !b.is_full() {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.observe(&v).unwrap();
        }
        let queries: Vec<f32> = (0..100 * dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let full = nn_distances(&b, &queries, 100).unwrap();
        for cs in [1, 7, 64] {
            assert_eq!(nn_distances(&b, &queries, cs).unwrap(), full);
        }
        for (q, d) in queries.chunks(dim).zip(&full) {
            let mut best = f64::INFINITY;
            for m in b.members().chunks(dim) {
                let s: f64 = q.iter().zip(m).map(|(a, c)| ((a - c) as f64).powi(2)).sum();
                best = best.min(s.sqrt());
            }
            assert!(((*d as f64) - best).abs() <= 1e-6 * best.max(1.0));
        }
        assert_eq!(nn_distances(&b, b.member(3), 1).unwrap(), vec![0.0]);
        assert!(nn_distances(&b, &queries[..3], 1).is_err());
    }

    proptest! {
        #[test]
        fn nearest_matches_first_argmin(
            seed in 0u64..500,
            n in 1usize..40,
            dim in 1usize..11,
        ) {
            // integer coordinates make ties common
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = bank(n, dim);
            for _ in 0..n {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i32..3) as f32).collect();
                b.observe(&v).unwrap();
            }
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.5f32..2.5)).collect();
            let mut want = (0, euclidean(&q, b.member(0)));
            for i in 1..b.fill() {
                let d = euclidean(&q, b.member(i));
                if d < want.1 {
                    want = (i, d);
                }
            }
            prop_assert_eq!(b.nearest(&q), Some(want));
        }

        #[test]
        fn matrix_and_min_pair_stay_consistent(
            seed in 0u64..500,
            capacity in 2usize..12,
            dim in 1usize..5,
            n in 10usize..80,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = bank(capacity, dim);
            let mut last_dm: Option<f32> = None;
            for _ in 0..n {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-3.0f32..3.0).round()).collect();
                let rec = b.observe(&v).unwrap();
                if let Action::Replaced(_) = rec.action {
                    prop_assert!(rec.d_p > rec.d_m.unwrap());
                }
                if b.is_full() {
                    for i in 0..capacity {
                        for j in 0..capacity {
                            let want = if i == j { 0.0 } else { euclidean(b.member(i), b.member(j)) };
                            prop_assert_eq!(b.distance(i, j), want);
                        }
                    }
                    let (i, j, d) = b.min_pair().unwrap();
                    let brute = brute_min_pair(&b);
                    prop_assert_eq!((i, j, d), brute);
                    if let Some(prev) = last_dm {
                        prop_assert!(d >= prev);
                    }
                    last_dm = Some(d);
                }
            }
        }
    }
}
