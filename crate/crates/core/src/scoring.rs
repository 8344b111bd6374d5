//! Pixel anomaly maps from patch distances, threshold estimation and
//! binarization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coreset::{nn_distances, CoresetBank};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, PatchGeometry};
use crate::grid::{convolve_separable, gaussian_taps, BinaryMask, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurParams {
    pub sigma: f64,
    /// Kernel side in pixels; 1 disables blurring.
    pub kernel: usize,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            kernel: 16,
        }
    }
}

impl BlurParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) || self.kernel == 0 {
            return Err(Error::config(format!(
                "blur needs sigma > 0 and kernel >= 1, got sigma {} kernel {}",
                self.sigma, self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub scores: Grid<f32>,
    pub coreset_hash: String,
    pub blur: BlurParams,
}

impl AnomalyMap {
    pub fn max(&self) -> f32 {
        self.scores.as_slice().iter().copied().fold(0.0, f32::max)
    }
}

/// Nearest-neighbour distance of every patch in `fm` to the bank.
pub fn patch_scores(fm: &FeatureMap, bank: &CoresetBank, chunk_size: usize) -> Result<Vec<f32>> {
    if fm.dim() != bank.dim() {
        return Err(Error::Dimension {
            expected: bank.dim(),
            found: fm.dim(),
        });
    }
    if !bank.is_full() {
        return Err(Error::NotFull {
            fill: bank.fill(),
            capacity: bank.capacity(),
        });
    }
    nn_distances(bank, fm.as_slice(), chunk_size)
}

/// Spreads a `rows x cols` grid of patch scores over a `width x height`
/// image by nearest window center, then blurs.
pub fn assemble(
    patch: &[f32],
    rows: usize,
    cols: usize,
    geometry: PatchGeometry,
    width: usize,
    height: usize,
    blur: BlurParams,
) -> Result<Grid<f32>> {
    blur.validate()?;
    if patch.len() != rows * cols {
        return Err(Error::Dimension {
            expected: rows * cols,
            found: patch.len(),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Geometry("image size must be non-zero".into()));
    }
    let col_of: Vec<usize> = (0..width)
        .map(|x| geometry.nearest_cell(x as f64 + 0.5, cols))
        .collect();
    let row_of: Vec<usize> = (0..height)
        .map(|y| geometry.nearest_cell(y as f64 + 0.5, rows))
        .collect();
    let up = Grid::from_fn(width, height, |x, y| {
        patch[row_of[y] * cols + col_of[x]] as f64
    });
    let out = if blur.kernel > 1 {
        convolve_separable(&up, &gaussian_taps(blur.sigma, blur.kernel))
    } else {
        up
    };
    Ok(out.map(|&v| v.max(0.0) as f32))
}

/// Full anomaly map for one image of `width x height` pixels.
pub fn score_map(
    fm: &FeatureMap,
    bank: &CoresetBank,
    width: usize,
    height: usize,
    blur: BlurParams,
    chunk_size: usize,
) -> Result<AnomalyMap> {
    let patch = patch_scores(fm, bank, chunk_size)?;
    let scores = assemble(
        &patch,
        fm.rows(),
        fm.cols(),
        fm.geometry(),
        width,
        height,
        blur,
    )?;
    Ok(AnomalyMap {
        scores,
        coreset_hash: bank.content_hash(),
        blur,
    })
}

/// Predicted-positive mask: `score > t`.
pub fn binarize(scores: &Grid<f32>, t: f64) -> BinaryMask {
    scores.map(|&s| s as f64 > t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Every distinct score is a candidate.
    #[default]
    Exhaustive,
    /// At most this many candidates, spread evenly over the sorted distinct
    /// scores.
    Quantiles(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub value: f64,
    pub achieved_f1: f64,
    pub sweep_size: usize,
}

/// Lowest candidate threshold whose binarization maximizes pixel F1 over
/// all validation maps together.
pub fn estimate_threshold(
    maps: &[&Grid<f32>],
    gt: &[&BinaryMask],
    mode: SweepMode,
) -> Result<ThresholdEstimate> {
    if maps.len() != gt.len() {
        return Err(Error::Dimension {
            expected: maps.len(),
            found: gt.len(),
        });
    }
    let mut pixels: Vec<(f32, bool)> = Vec::new();
    for (m, g) in maps.iter().zip(gt) {
        if !m.same_dims(g) {
            return Err(Error::Dimension {
                expected: m.len(),
                found: g.len(),
            });
        }
        if m.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anomaly map"));
        }
        pixels.extend(
            m.as_slice()
                .iter()
                .copied()
                .zip(g.as_slice().iter().copied()),
        );
    }
    let positives = pixels.iter().filter(|p| p.1).count();
    if positives == 0 {
        return Err(Error::EmptyValidation);
    }
    pixels.sort_by(|a, b| a.0.total_cmp(&b.0));

    // distinct[k] = (value, positives and negatives scoring <= value)
    let mut distinct: Vec<(f32, usize, usize)> = Vec::new();
    let (mut pos_le, mut neg_le) = (0, 0);
    for (i, &(s, label)) in pixels.iter().enumerate() {
        if label {
            pos_le += 1;
        } else {
            neg_le += 1;
        }
        if i + 1 == pixels.len() || pixels[i + 1].0 != s {
            distinct.push((s, pos_le, neg_le));
        }
    }
    let negatives = pixels.len() - positives;
    let keep: Vec<usize> = match mode {
        SweepMode::Quantiles(q) if q >= 2 && distinct.len() > q => {
            let mut idx: Vec<usize> = (0..q)
                .map(|k| {
                    ((k as f64 * (distinct.len() - 1) as f64) / (q - 1) as f64).round() as usize
                })
                .collect();
            idx.dedup();
            idx
        }
        SweepMode::Quantiles(q) if q < 2 => {
            return Err(Error::config("quantile sweep needs at least 2 levels"))
        }
        _ => (0..distinct.len()).collect(),
    };

    let f1 = |tp: usize, fp: usize| -> f64 {
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (tp + fp + positives) as f64
        }
    };
    // a threshold below every score predicts everything
    let mut best = ThresholdEstimate {
        value: distinct[0].0 as f64 - 1.0,
        achieved_f1: f1(positives, negatives),
        sweep_size: keep.len() + 1,
    };
    for k in keep {
        let (v, p_le, n_le) = distinct[k];
        let score = f1(positives - p_le, negatives - n_le);
        if score > best.achieved_f1 {
            best.value = v as f64;
            best.achieved_f1 = score;
        }
    }
    Ok(best)
}

const MAP_MAGIC: &[u8; 4] = b"SQAM";
pub const MAP_FILE_VERSION: u16 = 1;

pub fn encode_map(scores: &Grid<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + scores.len() * 4);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(scores.height() as u32).to_le_bytes());
    out.extend_from_slice(&(scores.width() as u32).to_le_bytes());
    for v in scores.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_map(bytes: &[u8]) -> Result<Grid<f32>> {
    if bytes.len() < 14 {
        return Err(Error::Format("map file truncated in header".into()));
    }
    if &bytes[..4] != MAP_MAGIC {
        return Err(Error::Format("bad map file magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MAP_FILE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MAP_FILE_VERSION,
        });
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (height, width) = (word(6), word(10));
    let body = &bytes[14..];
    if Some(body.len()) != width.checked_mul(height).and_then(|n| n.checked_mul(4)) {
        return Err(Error::Format(format!(
            "map payload has {} bytes for {width}x{height}",
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Format(
            "map scores must be finite and non-negative".into(),
        ));
    }
    Grid::from_vec(width, height, data).ok_or_else(|| Error::Format("bad map shape".into()))
}

pub fn save_map(scores: &Grid<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_map(scores)).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: &Path) -> Result<Grid<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes)
}

/// 8-bit preview scaled so that `scale` (or the map maximum) maps to white.
pub fn write_map_png(scores: &Grid<f32>, scale: Option<f32>, path: &Path) -> Result<()> {
    let top = scale.unwrap_or_else(|| scores.as_slice().iter().copied().fold(0.0, f32::max));
    let norm = if top > 0.0 { 1.0 / top } else { 0.0 };
    crate::pngio::write_gray8(path, &scores.map(|&v| v * norm))
}
