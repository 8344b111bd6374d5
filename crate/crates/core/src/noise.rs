//! Seeded gradient noise and jittered grid sampling.
//!
//! Everything here is built on integer hashing and plain IEEE arithmetic
//! (no transcendental functions), so equal seeds give bit-identical fields
//! on every platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Seed of a noise field or a jittered sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseSeed(pub u64);

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a seed together with a lattice coordinate and a stream tag.
#[inline]
pub(crate) fn lattice_hash(seed: u64, ix: i64, iy: i64, stream: u64) -> u64 {
    let mut h = mix64(seed ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = mix64(h ^ (ix as u64));
    mix64(h ^ (iy as u64).rotate_left(32))
}

/// Derives a child seed from a parent seed and an index path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Maps a hash onto the open interval `(0, 1)`.
#[inline]
pub(crate) fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

const DIAG: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Eight unit gradients spaced by 45 degrees.
const GRADIENTS: [Point; 8] = [
    [1.0, 0.0],
    [DIAG, DIAG],
    [0.0, 1.0],
    [-DIAG, DIAG],
    [-1.0, 0.0],
    [-DIAG, -DIAG],
    [0.0, -1.0],
    [DIAG, -DIAG],
];

/// Unit gradients bound 2D Perlin noise by `sqrt(2)/2`; this rescales to `[-1, 1]`.
const NOISE_SCALE: f64 = std::f64::consts::SQRT_2;

const PERLIN_STREAM: u64 = 0x5045_524C;
const JITTER_STREAM: u64 = 0x4A49_5454;

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[inline]
fn corner(seed: u64, ix: i64, iy: i64, dx: f64, dy: f64) -> f64 {
    let g = GRADIENTS[(lattice_hash(seed, ix, iy, PERLIN_STREAM) & 7) as usize];
    g[0] * dx + g[1] * dy
}

/// Classic 2D gradient noise with the quintic fade curve, evaluated at `p * frequency`.
///
/// Returns a value in `[-1, 1]` that vanishes on integer lattice points.
pub fn perlin(p: Point, frequency: f64, seed: NoiseSeed) -> f64 {
    let x = p[0] * frequency;
    let y = p[1] * frequency;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (ix, iy) = (x0 as i64, y0 as i64);
    let s = seed.0;

    let n00 = corner(s, ix, iy, fx, fy);
    let n10 = corner(s, ix + 1, iy, fx - 1.0, fy);
    let n01 = corner(s, ix, iy + 1, fx, fy - 1.0);
    let n11 = corner(s, ix + 1, iy + 1, fx - 1.0, fy - 1.0);

    let u = fade(fx);
    let v = fade(fy);
    let value = lerp(lerp(n00, n10, u), lerp(n01, n11, u), v) * NOISE_SCALE;
    value.clamp(-1.0, 1.0)
}

/// Axis-aligned half-open rectangle `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Point,
    pub max: Point,
}

impl Region {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max[0] > self.min[0] && self.max[1] > self.min[1])
    }
}

/// Jittered sampling: one uniformly placed point per cell of a square grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSampling {
    pub cell_size: f64,
    pub region: Region,
    pub seed: NoiseSeed,
}

/// Integer index of a grid cell.
pub type CellIndex = [i64; 2];

impl GridSampling {
    pub fn cell_of(&self, p: Point) -> CellIndex {
        [
            (p[0] / self.cell_size).floor() as i64,
            (p[1] / self.cell_size).floor() as i64,
        ]
    }

    /// The jittered center of one cell. Depends only on the seed and the
    /// cell index, so centers can be generated lazily and in any order.
    pub fn center_of(&self, cell: CellIndex) -> Point {
        let s = self.seed.0;
        let u = unit_open(lattice_hash(s, cell[0], cell[1], JITTER_STREAM));
        let v = unit_open(lattice_hash(s, cell[0], cell[1], JITTER_STREAM + 1));
        [
            (cell[0] as f64 + u) * self.cell_size,
            (cell[1] as f64 + v) * self.cell_size,
        ]
    }

    fn cell_range(&self, axis: usize) -> std::ops::Range<i64> {
        let lo = (self.region.min[axis] / self.cell_size).floor() as i64;
        let hi = (self.region.max[axis] / self.cell_size).ceil() as i64;
        lo..hi
    }
}

/// Enumerates every cell intersecting the sampling region with its center.
pub fn jitter_centers(sampling: &GridSampling) -> Result<Vec<(CellIndex, Point)>> {
    if !(sampling.cell_size > 0.0) {
        return Err(Error::config("cell size must be positive"));
    }
    if sampling.region.is_degenerate() {
        return Err(Error::config("sampling region is degenerate"));
    }
    let mut out = Vec::new();
    for cy in sampling.cell_range(1) {
        for cx in sampling.cell_range(0) {
            out.push(([cx, cy], sampling.center_of([cx, cy])));
        }
    }
    Ok(out)
}

/// Closest jittered center found by [`nearest_center`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestCenter {
    pub cell: CellIndex,
    pub center: Point,
    pub distance: f64,
}

#[inline]
fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Nearest center among the cell containing `p` and its eight neighbors.
///
/// Any center outside the 3x3 block is farther than one cell size from `p`,
/// so the result is globally exact whenever the returned distance is at most
/// `reach`, provided `reach <= cell_size`. Larger reaches are rejected.
pub fn nearest_center(p: Point, sampling: &GridSampling, reach: f64) -> Result<NearestCenter> {
    if !(sampling.cell_size > 0.0) {
        return Err(Error::config("cell size must be positive"));
    }
    if reach > sampling.cell_size {
        return Err(Error::config(format!(
            "stain reach {reach} exceeds grid cell size {}",
            sampling.cell_size
        )));
    }
    let home = sampling.cell_of(p);
    let mut best: Option<NearestCenter> = None;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let cell = [home[0] + dx, home[1] + dy];
            let center = sampling.center_of(cell);
            let d = dist(p, center);
            if best.is_none_or(|b| d < b.distance) {
                best = Some(NearestCenter {
                    cell,
                    center,
                    distance: d,
                });
            }
        }
    }
    Ok(best.expect("3x3 neighborhood is never empty"))
}
