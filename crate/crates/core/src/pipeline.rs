//! End-to-end stages (synthesize, train, meld, score, evaluate) driven by one
//! JSON configuration. Every stage writes a run record holding the resolved
//! configuration and the hashes of its inputs next to its outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_seed, AugmentDraw, AugmentPolicy};
use crate::coreset::{self, BankMetadata, CoresetBank, FitOptions, FitStats, PatchSource};
use crate::error::{Error, Result};
use crate::features::{self, ExtractorKind, ExtractorSpec, FeatureMap};
use crate::grid::{BinaryMask, Grid, SampleImage};
use crate::metrics::{self, EvalAccumulator, MetricsReport};
use crate::pngio;
use crate::scoring::{self, BlurParams, SweepMode, ThresholdEstimate};
use crate::synth::{
    generate_dataset, DatasetConfig, DatasetManifest, LightVariant, ManifestSample, Split,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoresetConfig {
    pub capacity: usize,
    pub chunk_size: usize,
    pub max_epochs: usize,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        Self {
            capacity: coreset::DEFAULT_CAPACITY,
            chunk_size: coreset::DEFAULT_CHUNK,
            max_epochs: 5,
        }
    }
}

/// Which training twins feed the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSubset {
    #[default]
    All,
    Clean,
    Stained,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub subset: TrainSubset,
    /// Train on every light variant instead of the base one.
    pub domain_randomization: bool,
    pub augmentation: AugmentPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    /// Fixed threshold; when absent it is estimated on `estimate_on`.
    pub value: Option<f64>,
    pub estimate_on: Split,
    pub sweep: SweepMode,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            value: None,
            estimate_on: Split::Validation,
            sweep: SweepMode::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Render true/false positive overlays per image.
    pub overlays: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub augment: u64,
    pub coreset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub coreset: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub extractor: ExtractorSpec,
    pub coreset: CoresetConfig,
    pub train: TrainConfig,
    pub blur: BlurParams,
    pub threshold: ThresholdConfig,
    pub metrics: MetricConfig,
    pub seeds: Seeds,
    pub paths: Paths,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.extractor.validate()?;
        self.train.augmentation.validate()?;
        self.blur.validate()?;
        let c = &self.coreset;
        if c.capacity == 0 || c.chunk_size == 0 || c.max_epochs == 0 {
            return Err(Error::config(
                "coreset capacity, chunk_size and max_epochs must be >= 1",
            ));
        }
        if self.extractor.kind == ExtractorKind::External && !self.train.augmentation.is_identity()
        {
            return Err(Error::config(
                "augmentation needs pixels; it cannot be combined with external features",
            ));
        }
        if let Some(t) = self.threshold.value {
            if !t.is_finite() {
                return Err(Error::config("threshold must be finite"));
            }
        }
        Ok(())
    }
}

/// One machine-parsable line per stage: `stage=<name> key=value ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub stage: &'static str,
    pub fields: Vec<(&'static str, String)>,
}

impl Summary {
    fn new(stage: &'static str) -> Self {
        Self {
            stage,
            fields: Vec::new(),
        }
    }

    fn with(mut self, key: &'static str, value: impl fmt::Display) -> Self {
        self.fields.push((key, value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|f| f.0 == key)
            .map(|f| f.1.as_str())
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={}", self.stage)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    stage: &'a str,
    config: &'a PipelineConfig,
    inputs: BTreeMap<String, String>,
}

fn write_run_record(
    path: &Path,
    stage: &str,
    cfg: &PipelineConfig,
    inputs: &[&Path],
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), file_sha256(p)?);
    }
    crate::write_json(
        path,
        &RunRecord {
            stage,
            config: cfg,
            inputs: hashes,
        },
    )
}

/// `bank.sqcs` -> `bank.run.json`
fn sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or("out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.run.json"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

pub fn synth(cfg: &PipelineConfig, out_dir: &Path) -> Result<Summary> {
    cfg.dataset.validate()?;
    let manifest = generate_dataset(&cfg.dataset, out_dir)?;
    write_run_record(&out_dir.join("run.json"), "synth", cfg, &[])?;
    Ok(Summary::new("synth")
        .with("samples", manifest.samples.len())
        .with("out", out_dir.display()))
}

/// A loaded dataset: its root directory and manifest.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Self {
            root: root.to_path_buf(),
            manifest: DatasetManifest::load(&root.join("manifest.json"))?,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn image(&self, s: &ManifestSample) -> Result<SampleImage> {
        pngio::read_gray8(&self.root.join(&s.image_path))
    }

    pub fn class_mask(&self, s: &ManifestSample) -> Result<Grid<u8>> {
        pngio::read_class_mask(&self.root.join(&s.class_mask_path))
    }

    pub fn instance_mask(&self, s: &ManifestSample) -> Result<Grid<u16>> {
        pngio::read_instance_mask(&self.root.join(&s.instance_mask_path))
    }

    /// Features of one sample. External extractors read
    /// `features/<id>.sqfm` under the dataset root.
    pub fn features(&self, s: &ManifestSample, spec: &ExtractorSpec) -> Result<FeatureMap> {
        if spec.kind == ExtractorKind::External {
            let path = self.root.join("features").join(format!("{}.sqfm", s.id));
            return features::load_external_features(&path);
        }
        features::extract(&self.image(s)?, spec)
    }

    pub fn find(&self, id: &str) -> Option<&ManifestSample> {
        self.manifest.samples.iter().find(|s| s.id == id)
    }
}

/// Training samples selected by `train`, in manifest order.
pub fn training_samples(dataset: &Dataset, train: &TrainConfig) -> Vec<ManifestSample> {
    dataset
        .manifest
        .samples_in(Split::Train)
        .filter(|s| train.domain_randomization || s.light_variant == LightVariant::Base)
        .filter(|s| match train.subset {
            TrainSubset::All => true,
            TrainSubset::Clean => !s.has_stains,
            TrainSubset::Stained => s.has_stains,
        })
        .cloned()
        .collect()
}

/// Streams the training images of a dataset as patch vectors, re-drawing the
/// augmentation of every sample each epoch. Only a bounded group of images
/// is decoded at a time and vectors leave in batches of the requested size.
pub struct DatasetSource<'a> {
    dataset: &'a Dataset,
    samples: Vec<ManifestSample>,
    extractor: &'a ExtractorSpec,
    policy: &'a AugmentPolicy,
    seed: u64,
    dim: usize,
    group: usize,
}

impl<'a> DatasetSource<'a> {
    pub fn new(
        dataset: &'a Dataset,
        samples: Vec<ManifestSample>,
        extractor: &'a ExtractorSpec,
        policy: &'a AugmentPolicy,
        seed: u64,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::config("no training samples match the configuration"))?;
        let dim = dataset.features(first, extractor)?.dim();
        Ok(Self {
            dataset,
            samples,
            extractor,
            policy,
            seed,
            dim,
            group: rayon::current_num_threads().max(1),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl PatchSource for DatasetSource<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn stream(
        &mut self,
        epoch: usize,
        max_batch: usize,
        sink: &mut dyn FnMut(&[f32]) -> Result<()>,
    ) -> Result<()> {
        let mut buf: Vec<f32> = Vec::with_capacity(max_batch * self.dim);
        let indexed: Vec<(usize, &ManifestSample)> = self.samples.iter().enumerate().collect();
        for group in indexed.chunks(self.group) {
            let maps: Vec<FeatureMap> = group
                .par_iter()
                .map(|&(i, s)| {
                    if self.policy.is_identity() {
                        return self.dataset.features(s, self.extractor);
                    }
                    let image = self.dataset.image(s)?;
                    let seed = augment_seed(self.seed, i as u64, epoch as u64);
                    let draw =
                        AugmentDraw::sample(self.policy, seed, image.width(), image.height());
                    features::extract(&draw.apply_image(&image), self.extractor)
                })
                .collect::<Result<_>>()?;
            for m in maps {
                if m.dim() != self.dim {
                    return Err(Error::Dimension {
                        expected: self.dim,
                        found: m.dim(),
                    });
                }
                for v in m.as_slice().chunks_exact(self.dim) {
                    buf.extend_from_slice(v);
                    if buf.len() == max_batch * self.dim {
                        sink(&buf)?;
                        buf.clear();
                    }
                }
            }
        }
        if !buf.is_empty() {
            sink(&buf)?;
        }
        Ok(())
    }
}

/// Fits a bank on the configured training samples. With a checkpoint path,
/// the bank is saved after every epoch and an existing checkpoint is resumed.
pub fn train(
    cfg: &PipelineConfig,
    dataset_dir: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<(CoresetBank, FitStats, Summary)> {
    cfg.validate()?;
    let dataset = Dataset::open(dataset_dir)?;
    let samples = training_samples(&dataset, &cfg.train);
    let n_samples = samples.len();
    let mut source = DatasetSource::new(
        &dataset,
        samples,
        &cfg.extractor,
        &cfg.train.augmentation,
        cfg.seeds.augment,
    )?;
    let extractor_hash = cfg.extractor.hash();
    let mut bank = match checkpoint.filter(|p| p.exists()) {
        Some(p) => {
            let b = coreset::load(p)?;
            if b.metadata.extractor_hash != extractor_hash {
                return Err(Error::MixedExtractor(
                    b.metadata.extractor_hash.clone(),
                    extractor_hash,
                ));
            }
            if b.capacity() != cfg.coreset.capacity || b.dim() != source.dim() {
                return Err(Error::config(format!(
                    "checkpoint {} has capacity {} and dim {}, configuration needs {} and {}",
                    p.display(),
                    b.capacity(),
                    b.dim(),
                    cfg.coreset.capacity,
                    source.dim()
                )));
            }
            log::info!(
                "resuming from {} after {} epochs",
                p.display(),
                b.metadata.epochs.len()
            );
            b
        }
        None => CoresetBank::new(
            cfg.coreset.capacity,
            source.dim(),
            BankMetadata {
                extractor_hash,
                creation_seed: cfg.seeds.coreset,
                ..Default::default()
            },
        )?,
    };

    let options = |max_epochs| FitOptions {
        max_epochs,
        chunk_size: cfg.coreset.chunk_size,
    };
    let mut stats = FitStats {
        epochs: Vec::new(),
        converged: false,
        final_d_m: bank.d_m(),
        peak_resident_vectors: bank.fill(),
    };
    match checkpoint {
        Some(ckpt) => {
            ensure_parent(ckpt)?;
            loop {
                let next = (bank.metadata.epochs.len() + 1).min(cfg.coreset.max_epochs);
                let step = coreset::fit(&mut bank, &mut source, options(next))?;
                let ran = !step.epochs.is_empty();
                stats.epochs.extend(step.epochs);
                stats.converged = step.converged;
                stats.final_d_m = step.final_d_m;
                stats.peak_resident_vectors =
                    stats.peak_resident_vectors.max(step.peak_resident_vectors);
                if ran {
                    coreset::save(&bank, ckpt)?;
                }
                if !ran || step.converged {
                    break;
                }
            }
        }
        None => stats = coreset::fit(&mut bank, &mut source, options(cfg.coreset.max_epochs))?,
    }
    if !bank.is_full() {
        log::warn!(
            "training data filled only {} of {} coreset slots",
            bank.fill(),
            bank.capacity()
        );
    }
    ensure_parent(out)?;
    coreset::save(&bank, out)?;
    write_run_record(&sidecar(out), "train", cfg, &[&dataset.manifest_path()])?;
    let summary = Summary::new("train")
        .with("samples", n_samples)
        .with("epochs", bank.metadata.epochs.len())
        .with("converged", stats.converged)
        .with("fill", bank.fill())
        .with("capacity", bank.capacity())
        .with("d_m", bank.d_m().map_or("none".into(), |d| d.to_string()))
        .with("peak_resident", stats.peak_resident_vectors)
        .with("out", out.display());
    Ok((bank, stats, summary))
}

/// Passes of a meld before giving up on convergence.
pub const MELD_MAX_PASSES: usize = 100;

pub fn meld(
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    size: usize,
    out: &Path,
) -> Result<(CoresetBank, Summary)> {
    let banks: Vec<CoresetBank> = inputs
        .iter()
        .map(|p| coreset::load(p))
        .collect::<Result<_>>()?;
    let refs: Vec<&CoresetBank> = banks.iter().collect();
    let bank = coreset::meld(&refs, size, MELD_MAX_PASSES)?;
    ensure_parent(out)?;
    coreset::save(&bank, out)?;
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_run_record(&sidecar(out), "meld", cfg, &input_refs)?;
    let summary = Summary::new("meld")
        .with("inputs", inputs.len())
        .with("passes", bank.metadata.epochs.len())
        .with("fill", bank.fill())
        .with("d_m", bank.d_m().map_or("none".into(), |d| d.to_string()))
        .with("out", out.display());
    Ok((bank, summary))
}

/// Anomaly scores of one feature map rendered at `width x height`.
pub fn score_features(
    cfg: &PipelineConfig,
    bank: &CoresetBank,
    fm: &FeatureMap,
    width: usize,
    height: usize,
) -> Result<Grid<f32>> {
    Ok(scoring::score_map(fm, bank, width, height, cfg.blur, cfg.coreset.chunk_size)?.scores)
}

fn score_sample(
    cfg: &PipelineConfig,
    bank: &CoresetBank,
    ds: &Dataset,
    s: &ManifestSample,
) -> Result<Grid<f32>> {
    let fm = ds.features(s, &cfg.extractor)?;
    let (w, h) = if cfg.extractor.kind == ExtractorKind::External {
        ds.class_mask(s)?.dims()
    } else {
        ds.image(s)?.dims()
    };
    score_features(cfg, bank, &fm, w, h)
}

fn check_bank(cfg: &PipelineConfig, bank: &CoresetBank) -> Result<()> {
    let want = cfg.extractor.hash();
    if bank.metadata.extractor_hash != want {
        return Err(Error::MixedExtractor(
            bank.metadata.extractor_hash.clone(),
            want,
        ));
    }
    Ok(())
}

/// Estimates the threshold on the defected samples of `split`, taking
/// defect pixels as positives.
pub fn estimate_on(
    cfg: &PipelineConfig,
    bank: &CoresetBank,
    ds: &Dataset,
    split: Split,
) -> Result<ThresholdEstimate> {
    let samples: Vec<&ManifestSample> = ds.manifest.samples_in(split).collect();
    let scored: Vec<(Grid<f32>, BinaryMask)> = samples
        .par_iter()
        .map(|s| {
            Ok((
                score_sample(cfg, bank, ds, s)?,
                metrics::defect_mask(&ds.class_mask(s)?),
            ))
        })
        .collect::<Result<_>>()?;
    let maps: Vec<&Grid<f32>> = scored.iter().map(|p| &p.0).collect();
    let gt: Vec<&BinaryMask> = scored.iter().map(|p| &p.1).collect();
    scoring::estimate_threshold(&maps, &gt, cfg.threshold.sweep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub map_path: String,
    pub mask_path: String,
    pub preview_path: String,
}

/// `scores.json`: what was scored, with which bank and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreIndex {
    pub coreset_hash: String,
    pub threshold: f64,
    pub estimate: Option<ThresholdEstimate>,
    pub blur: BlurParams,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreIndex {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Scores every sample of `split` and writes maps (`.sqam` and preview
/// PNG), binary masks and `scores.json` into `out_dir`.
pub fn score(
    cfg: &PipelineConfig,
    coreset_path: &Path,
    dataset_dir: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<(ScoreIndex, Summary)> {
    cfg.validate()?;
    let bank = coreset::load(coreset_path)?;
    check_bank(cfg, &bank)?;
    let ds = Dataset::open(dataset_dir)?;
    let (threshold, estimate) = match cfg.threshold.value {
        Some(t) => (t, None),
        None => {
            let e = estimate_on(cfg, &bank, &ds, cfg.threshold.estimate_on)?;
            (e.value, Some(e))
        }
    };
    let samples: Vec<&ManifestSample> = ds.manifest.samples_in(split).collect();
    let named: Vec<(String, Result<Grid<f32>>)> = samples
        .par_iter()
        .map(|s| (s.id.clone(), score_sample(cfg, &bank, &ds, s)))
        .collect();
    let index = write_scores(cfg, &bank, named, threshold, estimate, out_dir)?;
    write_run_record(
        &out_dir.join("run.json"),
        "score",
        cfg,
        &[coreset_path, &ds.manifest_path()],
    )?;
    let summary = Summary::new("score")
        .with("images", index.entries.len())
        .with("threshold", threshold)
        .with(
            "f1_validation",
            estimate.map_or("none".into(), |e| e.achieved_f1.to_string()),
        )
        .with("out", out_dir.display());
    Ok((index, summary))
}

/// Scores standalone grayscale PNGs with a fixed threshold; entries are
/// named by file stem.
pub fn score_images(
    cfg: &PipelineConfig,
    coreset_path: &Path,
    images: &[PathBuf],
    threshold: f64,
    out_dir: &Path,
) -> Result<(ScoreIndex, Summary)> {
    cfg.validate()?;
    let bank = coreset::load(coreset_path)?;
    check_bank(cfg, &bank)?;
    let named: Vec<(String, Result<Grid<f32>>)> = images
        .par_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map_or("image".into(), |s| s.to_string_lossy().into_owned());
            let scores = pngio::read_gray8(p).and_then(|img| {
                let fm = features::extract(&img, &cfg.extractor)?;
                score_features(cfg, &bank, &fm, img.width(), img.height())
            });
            (id, scores)
        })
        .collect();
    let index = write_scores(cfg, &bank, named, threshold, None, out_dir)?;
    let mut inputs: Vec<&Path> = vec![coreset_path];
    inputs.extend(images.iter().map(PathBuf::as_path));
    write_run_record(&out_dir.join("run.json"), "score", cfg, &inputs)?;
    let summary = Summary::new("score")
        .with("images", index.entries.len())
        .with("threshold", threshold)
        .with("out", out_dir.display());
    Ok((index, summary))
}

fn write_scores(
    cfg: &PipelineConfig,
    bank: &CoresetBank,
    named: Vec<(String, Result<Grid<f32>>)>,
    threshold: f64,
    estimate: Option<ThresholdEstimate>,
    out_dir: &Path,
) -> Result<ScoreIndex> {
    for sub in ["maps", "masks", "previews"] {
        ensure_dir(&out_dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(named.len());
    for (id, scores) in named {
        let scores = scores?;
        let e = ScoreEntry {
            map_path: format!("maps/{id}.sqam"),
            mask_path: format!("masks/{id}.png"),
            preview_path: format!("previews/{id}.png"),
            id,
        };
        scoring::save_map(&scores, &out_dir.join(&e.map_path))?;
        pngio::write_binary_mask(
            &out_dir.join(&e.mask_path),
            &scoring::binarize(&scores, threshold),
        )?;
        scoring::write_map_png(&scores, None, &out_dir.join(&e.preview_path))?;
        entries.push(e);
    }
    let index = ScoreIndex {
        coreset_hash: bank.content_hash(),
        threshold,
        estimate,
        blur: cfg.blur,
        entries,
    };
    crate::write_json(&out_dir.join("scores.json"), &index)?;
    Ok(index)
}

/// Evaluates the masks listed in `scores_dir/scores.json` against the
/// dataset annotations and writes `report.json` and `report.csv`.
pub fn eval(
    cfg: &PipelineConfig,
    scores_dir: &Path,
    dataset_dir: &Path,
    out_dir: &Path,
) -> Result<(MetricsReport, Summary)> {
    let index_path = scores_dir.join("scores.json");
    let index = ScoreIndex::load(&index_path)?;
    let ds = Dataset::open(dataset_dir)?;
    ensure_dir(out_dir)?;
    if cfg.metrics.overlays {
        ensure_dir(&out_dir.join("overlays"))?;
    }
    let parts: Vec<EvalAccumulator> = index
        .entries
        .par_iter()
        .map(|e| {
            let s = ds
                .find(&e.id)
                .ok_or_else(|| Error::Format(format!("{} is not in the dataset manifest", e.id)))?;
            let pred = pngio::read_binary_mask(&scores_dir.join(&e.mask_path))?;
            let classes = ds.class_mask(s)?;
            let mut acc = EvalAccumulator::default();
            acc.add_image(&pred, &classes, &ds.instance_mask(s)?)?;
            if cfg.metrics.overlays {
                let img = ds.image(s)?;
                let o = metrics::overlay(Some(&img), &pred, &metrics::defect_mask(&classes))?;
                pngio::write_rgb8(&out_dir.join("overlays").join(format!("{}.png", e.id)), &o)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = EvalAccumulator::default();
    for p in &parts {
        total.merge(p);
    }
    let report = total.report();
    report.write(&out_dir.join("report.json"), &out_dir.join("report.csv"))?;
    write_run_record(
        &out_dir.join("run.json"),
        "eval",
        cfg,
        &[&index_path, &ds.manifest_path()],
    )?;
    let fmt_opt = |v: Option<f64>| v.map_or("none".into(), |v| format!("{v:.6}"));
    let summary = Summary::new("eval")
        .with("images", report.images)
        .with("p_px", format!("{:.6}", report.p_px))
        .with("r_px", format!("{:.6}", report.r_px))
        .with("f1_px", format!("{:.6}", report.f1_px))
        .with("mr_dw", fmt_opt(report.mr_dw))
        .with("out", out_dir.display());
    Ok((report, summary))
}
