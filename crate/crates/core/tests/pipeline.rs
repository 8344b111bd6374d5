#![allow(clippy::field_reassign_with_default)]

use std::fs;
use std::path::Path;

use seqpatch::coreset;
use seqpatch::features::{self, save_features, ExtractorKind};
use seqpatch::metrics::defect_mask;
use seqpatch::pipeline::{self, Dataset, PipelineConfig, ScoreIndex, TrainSubset};
use seqpatch::scoring::{self, load_map, SweepMode};
use seqpatch::synth::{DatasetConfig, Split};
use seqpatch::{Error, Grid};

fn config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.dataset = DatasetConfig {
        seed: 5,
        count: 6,
        validation_count: 3,
        test_count: 3,
        paired: true,
        width: 48,
        height: 48,
        ..Default::default()
    };
    cfg.coreset.capacity = 40;
    cfg.coreset.chunk_size = 25;
    cfg.coreset.max_epochs = 4;
    cfg
}

fn synth(cfg: &PipelineConfig, root: &Path) -> std::path::PathBuf {
    let data = root.join("data");
    pipeline::synth(cfg, &data).unwrap();
    data
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.train.augmentation = seqpatch::augment::AugmentPolicy::standard();
    let data = synth(&cfg, dir.path());

    let straight = dir.path().join("straight.sqcs");
    pipeline::train(&cfg, &data, &straight, None).unwrap();

    // stop after two epochs, then resume from the checkpoint
    let ckpt = dir.path().join("ckpt.sqcs");
    let mut short = cfg.clone();
    short.coreset.max_epochs = 2;
    pipeline::train(&short, &data, &dir.path().join("partial.sqcs"), Some(&ckpt)).unwrap();
    assert_eq!(coreset::load(&ckpt).unwrap().metadata.epochs.len(), 2);
    let resumed = dir.path().join("resumed.sqcs");
    pipeline::train(&cfg, &data, &resumed, Some(&ckpt)).unwrap();

    assert_eq!(fs::read(&straight).unwrap(), fs::read(&resumed).unwrap());
}

#[test]
fn retraining_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let data = synth(&cfg, dir.path());
    let (a, b) = (dir.path().join("a.sqcs"), dir.path().join("b.sqcs"));
    let (_, stats, summary) = pipeline::train(&cfg, &data, &a, None).unwrap();
    pipeline::train(&cfg, &data, &b, None).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(stats.peak_resident_vectors <= cfg.coreset.capacity + cfg.coreset.chunk_size);
    assert_eq!(summary.stage, "train");
    assert!(summary.to_string().starts_with("stage=train samples=12 "));
    assert!(dir.path().join("a.run.json").exists());
}

#[test]
fn subsets_select_twins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let data = synth(&cfg, dir.path());
    let ds = Dataset::open(&data).unwrap();
    let mut train = cfg.train.clone();
    assert_eq!(pipeline::training_samples(&ds, &train).len(), 12);
    train.subset = TrainSubset::Clean;
    let clean = pipeline::training_samples(&ds, &train);
    assert_eq!(clean.len(), 6);
    assert!(clean
        .iter()
        .all(|s| !s.has_stains && s.split == Split::Train));
    train.subset = TrainSubset::Stained;
    assert!(pipeline::training_samples(&ds, &train)
        .iter()
        .all(|s| s.has_stains));
}

#[test]
fn meld_then_score_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.threshold.value = Some(0.05);
    let data = synth(&cfg, dir.path());
    let a = dir.path().join("a.sqcs");
    pipeline::train(&cfg, &data, &a, None).unwrap();
    cfg.train.subset = TrainSubset::Stained;
    let b = dir.path().join("b.sqcs");
    pipeline::train(&cfg, &data, &b, None).unwrap();
    let m = dir.path().join("m.sqcs");
    pipeline::meld(&cfg, &[a.clone(), b.clone()], 40, &m).unwrap();

    let in_process = coreset::meld(
        &[&coreset::load(&a).unwrap(), &coreset::load(&b).unwrap()],
        40,
        pipeline::MELD_MAX_PASSES,
    )
    .unwrap();
    assert_eq!(coreset::load(&m).unwrap(), in_process);

    let out = dir.path().join("scores");
    let (index, _) = pipeline::score(&cfg, &m, &data, Split::Test, &out).unwrap();
    let ds = Dataset::open(&data).unwrap();
    for e in &index.entries {
        let s = ds.find(&e.id).unwrap();
        let fm = features::extract(&ds.image(s).unwrap(), &cfg.extractor).unwrap();
        let direct = scoring::score_map(&fm, &in_process, 48, 48, cfg.blur, 7).unwrap();
        assert_eq!(load_map(&out.join(&e.map_path)).unwrap(), direct.scores);
    }
}

#[test]
fn estimated_threshold_matches_direct_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let data = synth(&cfg, dir.path());
    let bank_path = dir.path().join("a.sqcs");
    let (bank, _, _) = pipeline::train(&cfg, &data, &bank_path, None).unwrap();
    let out = dir.path().join("scores");
    let (index, summary) = pipeline::score(&cfg, &bank_path, &data, Split::Test, &out).unwrap();
    assert_eq!(ScoreIndex::load(&out.join("scores.json")).unwrap(), index);
    assert!(summary.get("f1_validation").is_some());

    let ds = Dataset::open(&data).unwrap();
    let mut maps = Vec::new();
    let mut gts = Vec::new();
    for s in ds.manifest.samples_in(Split::Validation) {
        let fm = features::extract(&ds.image(s).unwrap(), &cfg.extractor).unwrap();
        maps.push(
            scoring::score_map(&fm, &bank, 48, 48, cfg.blur, 1)
                .unwrap()
                .scores,
        );
        gts.push(defect_mask(&ds.class_mask(s).unwrap()));
    }
    let m: Vec<&Grid<f32>> = maps.iter().collect();
    let g: Vec<&Grid<bool>> = gts.iter().collect();
    let direct = scoring::estimate_threshold(&m, &g, SweepMode::Exhaustive).unwrap();
    assert_eq!(index.estimate, Some(direct));
    assert_eq!(index.threshold, direct.value);

    let (report, _) = pipeline::eval(&cfg, &out, &data, &dir.path().join("eval")).unwrap();
    assert_eq!(report.images, 3);
    assert!(dir.path().join("eval/report.csv").exists());
    assert!(report.mr_dw.is_some());
}

#[test]
fn external_features_are_read_from_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.threshold.value = Some(0.1);
    let data = synth(&cfg, dir.path());
    let ds = Dataset::open(&data).unwrap();
    fs::create_dir_all(data.join("features")).unwrap();
    let builtin = cfg.extractor.clone();
    for s in &ds.manifest.samples {
        let fm = features::extract(&ds.image(s).unwrap(), &builtin).unwrap();
        save_features(&fm, &data.join("features").join(format!("{}.sqfm", s.id))).unwrap();
    }
    let mut ext = cfg.clone();
    ext.extractor.kind = ExtractorKind::External;
    let bank = dir.path().join("ext.sqcs");
    pipeline::train(&ext, &data, &bank, None).unwrap();
    let (index, _) =
        pipeline::score(&ext, &bank, &data, Split::Test, &dir.path().join("s")).unwrap();
    assert_eq!(index.entries.len(), 3);

    // the built-in extractor produces the same vectors, but the hash differs
    let err = pipeline::score(&cfg, &bank, &data, Split::Test, &dir.path().join("s2")).unwrap_err();
    assert!(matches!(err, Error::MixedExtractor(..)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn config_validation() {
    assert!(matches!(
        PipelineConfig::from_json(br#"{"coreset": {"capacity": 4, "bogus": 1}}"#),
        Err(Error::Config(_))
    ));
    let cfg = PipelineConfig::from_json(br#"{"coreset": {"capacity": 4}}"#).unwrap();
    assert_eq!(cfg.coreset.capacity, 4);
    assert_eq!(
        cfg.coreset.chunk_size,
        PipelineConfig::default().coreset.chunk_size
    );
    cfg.validate().unwrap();

    let mut bad = cfg.clone();
    bad.extractor.kind = ExtractorKind::External;
    bad.train.augmentation = seqpatch::augment::AugmentPolicy::standard();
    assert!(matches!(bad.validate(), Err(Error::Config(_))));

    let mut bad = cfg;
    bad.coreset.chunk_size = 0;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn missing_dataset_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline::train(
        &config(),
        &dir.path().join("nope"),
        &dir.path().join("x.sqcs"),
        None,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
