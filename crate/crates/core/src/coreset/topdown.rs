use super::bank::{BankMetadata, CoresetBank};
use super::euclidean;
use crate::error::{Error, Result};

type Neighbor = (f32, usize);
const NONE: Neighbor = (f32::INFINITY, usize::MAX);

/// Nearest and second-nearest live neighbours of `i`, lowest index on ties.
fn scan(dist: &[f32], alive: &[bool], n: usize, i: usize) -> [Neighbor; 2] {
    let mut best = [NONE, NONE];
    for j in (0..n).filter(|&j| j != i && alive[j]) {
        let d = dist[i * n + j];
        if d < best[0].0 {
            best[1] = best[0];
            best[0] = (d, j);
        } else if d < best[1].0 {
            best[1] = (d, j);
        }
    }
    best
}

/// Offline reduction of a whole collection down to `target` members.
///
/// Repeatedly takes the globally closest pair and drops the member whose
/// removal leaves the larger minimum pairwise distance. Ties go to removing
/// the more crowded member (smaller second-neighbour distance), then the
/// lower index. Needs the full collection in memory; meant as a reference
/// for the streaming bank, not for training.
pub fn reduce_topdown(all: &[f32], dim: usize, target: usize) -> Result<CoresetBank> {
    if dim == 0 || !all.len().is_multiple_of(dim) {
        return Err(Error::Dimension {
            expected: dim,
            found: all.len() % dim.max(1),
        });
    }
    let n = all.len() / dim;
    if target == 0 || n < target {
        return Err(Error::Size {
            available: n,
            target,
        });
    }
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("patch vector"));
    }
    let row = |i: usize| &all[i * dim..(i + 1) * dim];
    let mut dist = vec![0.0f32; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(row(i), row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut alive = vec![true; n];
    let mut nn: Vec<[Neighbor; 2]> = (0..n).map(|i| scan(&dist, &alive, n, i)).collect();

    for _ in target..n {
        let mut pair: Option<(usize, usize, f32)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            if pair.is_none_or(|p| nn[i][0].0 < p.2) {
                pair = Some((i, nn[i][0].1, nn[i][0].0));
            }
        }
        let (a, b, _) = pair.expect("at least two live members");
        let (a, b) = (a.min(b), a.max(b));

        // minimum pairwise distance left if `x` were removed
        let left = |x: usize| -> f32 {
            (0..n)
                .filter(|&r| alive[r] && r != x)
                .map(|r| {
                    if nn[r][0].1 == x {
                        nn[r][1].0
                    } else {
                        nn[r][0].0
                    }
                })
                .fold(f32::INFINITY, f32::min)
        };
        let (la, lb) = (left(a), left(b));
        let remove = if la != lb {
            if la > lb {
                a
            } else {
                b
            }
        } else if nn[b][1].0 < nn[a][1].0 {
            b
        } else {
            a
        };

        alive[remove] = false;
        for r in (0..n).filter(|&r| alive[r]) {
            if nn[r][0].1 == remove || nn[r][1].1 == remove {
                nn[r] = scan(&dist, &alive, n, r);
            }
        }
    }

    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    let members: Vec<f32> = keep.iter().flat_map(|&i| row(i).iter().copied()).collect();
    let mut kept_dist = vec![0.0f32; target * target];
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            kept_dist[a * target + b] = dist[i * n + j];
        }
    }
    Ok(CoresetBank::from_parts(
        target,
        dim,
        members,
        kept_dist,
        BankMetadata::default(),
    ))
}
