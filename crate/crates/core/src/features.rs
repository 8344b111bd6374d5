//! Per-patch feature maps: built-in extractors, pooling and concatenation,
//! and the binary feature-file format used to plug in external extractors.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::SampleImage;

/// Maps grid cells onto image pixels: cell `(r, c)` covers the window of
/// side `receptive` whose top-left pixel is `(c * stride, r * stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub stride: usize,
    pub receptive: usize,
}

impl PatchGeometry {
    /// Nearest cell (by window center) to pixel coordinate `pos` along one axis.
    pub fn nearest_cell(&self, pos: f64, cells: usize) -> usize {
        let center0 = self.receptive as f64 / 2.0;
        let idx = ((pos - center0) / self.stride as f64).round();
        idx.clamp(0.0, (cells - 1) as f64) as usize
    }

    fn center(&self, cell: usize) -> f64 {
        (cell * self.stride) as f64 + self.receptive as f64 / 2.0
    }

    fn extent(&self, cells: usize) -> usize {
        (cells - 1) * self.stride + self.receptive
    }
}

/// Grid of feature vectors, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: usize,
    cols: usize,
    dim: usize,
    geometry: PatchGeometry,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        geometry: PatchGeometry,
        data: Vec<f32>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::Geometry("feature map must be non-empty".into()));
        }
        if geometry.stride == 0 || geometry.receptive < geometry.stride {
            return Err(Error::Geometry(format!(
                "receptive field {} must cover stride {}",
                geometry.receptive, geometry.stride
            )));
        }
        if data.len() != rows * cols * dim {
            return Err(Error::Dimension {
                expected: rows * cols * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            geometry,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn geometry(&self) -> PatchGeometry {
        self.geometry
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn vector(&self, r: usize, c: usize) -> &[f32] {
        let start = (r * self.cols + c) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// All patch vectors, concatenated in row-major cell order.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Pixel extent `(width, height)` covered by the grid.
    pub fn covered_extent(&self) -> (usize, usize) {
        (
            self.geometry.extent(self.cols),
            self.geometry.extent(self.rows),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Mean, standard deviation and a 4-bin gradient orientation histogram.
    LocalStats,
    /// Flattened pixel window.
    RawPatch,
    /// Features computed elsewhere and loaded from feature files.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub stride: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub levels: Vec<LevelSpec>,
    #[serde(default = "default_pool_kernel")]
    pub pool_kernel: usize,
}

fn default_pool_kernel() -> usize {
    2
}

impl Default for ExtractorSpec {
    /// Two scales pooled with kernel 2.
    fn default() -> Self {
        Self {
            kind: ExtractorKind::LocalStats,
            levels: vec![
                LevelSpec {
                    stride: 4,
                    window: 8,
                },
                LevelSpec {
                    stride: 8,
                    window: 16,
                },
            ],
            pool_kernel: 2,
        }
    }
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("extractor needs at least one level"));
        }
        if self.pool_kernel == 0 {
            return Err(Error::config("pool kernel must be >= 1"));
        }
        for l in &self.levels {
            if l.stride == 0 || l.window < l.stride {
                return Err(Error::config(format!(
                    "level window {} must be >= stride {} > 0",
                    l.window, l.stride
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding; coresets record it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("serializable"),
        ))
    }
}

pub const LOCAL_STATS_CHANNELS: usize = 6;

fn grid_cells(len: usize, level: LevelSpec) -> usize {
    if len >= level.window {
        (len - level.window) / level.stride + 1
    } else {
        1
    }
}

/// Central-difference gradients with clamped borders.
fn gradients(image: &SampleImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = image.dims();
    let px = |x: usize, y: usize| *image.get(x, y) as f64;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = (px(xr, y) - px(xl, y)) / 2.0;
            gy[y * w + x] = (px(x, yd) - px(x, yu)) / 2.0;
        }
    }
    (gx, gy)
}

/// Orientation bin of an unsigned gradient direction; bin 0 is a horizontal
/// gradient (vertical edge), bin 2 a vertical one.
fn orientation_bin(gx: f64, gy: f64) -> usize {
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};
    let theta = gy.atan2(gx).rem_euclid(PI);
    (((theta + FRAC_PI_8) / FRAC_PI_4).floor() as usize) % 4
}

fn local_stats_level(image: &SampleImage, level: LevelSpec) -> Result<FeatureMap> {
    let (w, h) = image.dims();
    let (cols, rows) = (grid_cells(w, level), grid_cells(h, level));
    let (gx, gy) = gradients(image);
    let mut data = Vec::with_capacity(rows * cols * LOCAL_STATS_CHANNELS);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c * level.stride, r * level.stride);
            let (x1, y1) = ((x0 + level.window).min(w), (y0 + level.window).min(h));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let (mut sum, mut sum2) = (0.0, 0.0);
            let mut hist = [0.0f64; 4];
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = *image.get(x, y) as f64;
                    sum += v;
                    sum2 += v * v;
                    let (a, b) = (gx[y * w + x], gy[y * w + x]);
                    let mag = (a * a + b * b).sqrt();
                    if mag > 0.0 {
                        hist[orientation_bin(a, b)] += mag;
                    }
                }
            }
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0);
            data.push(mean as f32);
            data.push(var.sqrt() as f32);
            data.extend(hist.iter().map(|v| (v / n) as f32));
        }
    }
    FeatureMap::new(
        rows,
        cols,
        LOCAL_STATS_CHANNELS,
        PatchGeometry {
            stride: level.stride,
            receptive: level.window,
        },
        data,
    )
}

fn raw_patch_level(image: &SampleImage, level: LevelSpec) -> Result<FeatureMap> {
    let (w, h) = image.dims();
    if w < level.window || h < level.window {
        return Err(Error::config(format!(
            "raw patch window {} larger than image {w}x{h}",
            level.window
        )));
    }
    let (cols, rows) = (grid_cells(w, level), grid_cells(h, level));
    let dim = level.window * level.window;
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            for y in r * level.stride..r * level.stride + level.window {
                for x in c * level.stride..c * level.stride + level.window {
                    data.push(*image.get(x, y));
                }
            }
        }
    }
    FeatureMap::new(
        rows,
        cols,
        dim,
        PatchGeometry {
            stride: level.stride,
            receptive: level.window,
        },
        data,
    )
}

/// One feature map per configured level, before pooling.
pub fn extract_levels(image: &SampleImage, spec: &ExtractorSpec) -> Result<Vec<FeatureMap>> {
    spec.validate()?;
    if image.is_empty() {
        return Err(Error::config("cannot extract features from an empty image"));
    }
    spec.levels
        .iter()
        .map(|&level| match spec.kind {
            ExtractorKind::LocalStats => local_stats_level(image, level),
            ExtractorKind::RawPatch => raw_patch_level(image, level),
            ExtractorKind::External => Err(Error::config(
                "external extractor: load features with load_external_features",
            )),
        })
        .collect()
}

/// Extracts every level and merges them with [`pool_concat`].
pub fn extract(image: &SampleImage, spec: &ExtractorSpec) -> Result<FeatureMap> {
    pool_concat(&extract_levels(image, spec)?, spec.pool_kernel)
}

/// Non-overlapping average pooling; edge windows average the cells they hold.
pub fn average_pool(map: &FeatureMap, kernel: usize) -> FeatureMap {
    if kernel <= 1 {
        return map.clone();
    }
    let rows = map.rows.div_ceil(kernel);
    let cols = map.cols.div_ceil(kernel);
    let mut data = vec![0.0f32; rows * cols * map.dim];
    let mut acc = vec![0.0f64; map.dim];
    for r in 0..rows {
        for c in 0..cols {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut n = 0usize;
            for rr in r * kernel..((r + 1) * kernel).min(map.rows) {
                for cc in c * kernel..((c + 1) * kernel).min(map.cols) {
                    for (a, v) in acc.iter_mut().zip(map.vector(rr, cc)) {
                        *a += *v as f64;
                    }
                    n += 1;
                }
            }
            let out = &mut data[(r * cols + c) * map.dim..(r * cols + c + 1) * map.dim];
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = (a / n as f64) as f32;
            }
        }
    }
    let g = map.geometry;
    FeatureMap {
        rows,
        cols,
        dim: map.dim,
        geometry: PatchGeometry {
            stride: g.stride * kernel,
            receptive: g.receptive + (kernel - 1) * g.stride,
        },
        data,
    }
}

/// Pools each map, upsamples all of them (nearest window center) onto the
/// finest pooled grid and concatenates channels in input order.
pub fn pool_concat(maps: &[FeatureMap], kernel: usize) -> Result<FeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Geometry("no feature maps to merge".into()))?;
    if kernel == 0 {
        return Err(Error::config("pool kernel must be >= 1"));
    }
    let (ew, eh) = first.covered_extent();
    for m in &maps[1..] {
        let (w, h) = m.covered_extent();
        let tol = m.geometry.stride.max(first.geometry.stride);
        if w.abs_diff(ew) >= tol || h.abs_diff(eh) >= tol {
            return Err(Error::Geometry(format!(
                "feature maps cover {ew}x{eh} and {w}x{h}; not the same image"
            )));
        }
    }
    let pooled: Vec<FeatureMap> = maps.iter().map(|m| average_pool(m, kernel)).collect();
    let finest = pooled
        .iter()
        .min_by_key(|m| m.geometry.stride)
        .expect("non-empty");
    if pooled.len() == 1 {
        return Ok(pooled.into_iter().next().expect("one map"));
    }
    let (rows, cols, geometry) = (finest.rows, finest.cols, finest.geometry);
    let dim: usize = pooled.iter().map(|m| m.dim).sum();
    let mut data = Vec::with_capacity(rows * cols * dim);
    let lookups: Vec<(Vec<usize>, Vec<usize>)> = pooled
        .iter()
        .map(|m| {
            let rs = (0..rows)
                .map(|r| m.geometry.nearest_cell(geometry.center(r), m.rows))
                .collect();
            let cs = (0..cols)
                .map(|c| m.geometry.nearest_cell(geometry.center(c), m.cols))
                .collect();
            (rs, cs)
        })
        .collect();
    for r in 0..rows {
        for c in 0..cols {
            for (m, (rs, cs)) in pooled.iter().zip(&lookups) {
                data.extend_from_slice(m.vector(rs[r], cs[c]));
            }
        }
    }
    FeatureMap::new(rows, cols, dim, geometry, data)
}

const FEATURE_MAGIC: &[u8; 4] = b"SQFM";
pub const FEATURE_FILE_VERSION: u16 = 1;

/// Serializes a map in the `SQFM` binary layout.
pub fn encode_features(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(26 + map.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    for v in [
        map.rows,
        map.cols,
        map.dim,
        map.geometry.stride,
        map.geometry.receptive,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 26 {
        return Err(Error::Format("feature file truncated in header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad feature file magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_FILE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FEATURE_FILE_VERSION,
        });
    }
    let word = |i: usize| {
        let o = 6 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (rows, cols, dim, stride, receptive) = (word(0), word(1), word(2), word(3), word(4));
    let count = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Format("feature shape overflows".into()))?;
    let body = &bytes[26..];
    if body.len() != count * 4 {
        return Err(Error::Format(format!(
            "feature payload has {} bytes, shape needs {}",
            body.len(),
            count * 4
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(
            "feature file contains non-finite values".into(),
        ));
    }
    FeatureMap::new(rows, cols, dim, PatchGeometry { stride, receptive }, data)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_features(map: &FeatureMap, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_features(map))
        .map_err(|e| Error::io(path, e))
}

/// Loads a feature map produced by an external extractor.
pub fn load_external_features(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
