//! Sequential coreset anomaly segmentation with a synthetic water-stain
//! dataset generator and the matching evaluation stack.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod coreset;
pub mod error;
pub mod features;
pub mod grid;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod pngio;
pub mod scoring;
pub mod synth;

pub use coreset::{CoresetBank, FitOptions};
pub use error::{Error, Result};
pub use features::{ExtractorSpec, FeatureMap};
pub use grid::{AnnotationMask, BinaryMask, Grid, InstanceMask, SampleImage};
pub use metrics::MetricsReport;
pub use scoring::{AnomalyMap, BlurParams, ThresholdEstimate};
pub use synth::{DatasetConfig, DatasetManifest, PlateSpec};

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
