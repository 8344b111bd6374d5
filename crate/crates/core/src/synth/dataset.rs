//! Seeded dataset generation: splits, clean/stained twins and light variants.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{render_sample, BrushedTexture, Defect, Illumination, PlateSpec, StainField};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoiseSeed};
use crate::pngio;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split '{other}'"))),
        }
    }
}

/// Light-source perturbations used for domain randomization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightVariant {
    Base,
    Rotated90,
    Scaled2,
}

impl LightVariant {
    pub const ALL: [LightVariant; 3] = [
        LightVariant::Base,
        LightVariant::Rotated90,
        LightVariant::Scaled2,
    ];

    pub fn apply(self, light: &Illumination) -> Illumination {
        match self {
            LightVariant::Base => *light,
            LightVariant::Rotated90 => Illumination {
                rotation_deg: light.rotation_deg + 90.0,
                ..*light
            },
            LightVariant::Scaled2 => Illumination {
                scale: light.scale * 2.0,
                ..*light
            },
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }

    fn name(self) -> &'static str {
        match self {
            LightVariant::Base => "base",
            LightVariant::Rotated90 => "rot90",
            LightVariant::Scaled2 => "scale2",
        }
    }
}

type Range = [f64; 2];

fn draw(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn check_range(name: &str, r: Range) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::config(format!("invalid range for {name}: {r:?}")));
    }
    Ok(())
}

/// Per-sample randomization ranges of the brushed texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureRanges {
    pub direction_deg: Range,
    pub streak_frequency: Range,
    pub contrast: Range,
    pub base: Range,
    pub grain: Range,
}

impl Default for TextureRanges {
    fn default() -> Self {
        Self {
            direction_deg: [-4.0, 4.0],
            streak_frequency: [0.5, 0.7],
            contrast: [0.04, 0.08],
            base: [0.5, 0.6],
            grain: [0.015, 0.025],
        }
    }
}

/// Per-sample randomization ranges of the stain field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StainRanges {
    pub radius: Range,
    pub amplitude: Range,
    pub frequency: Range,
    pub gamma: Range,
    pub alpha: Range,
    pub cell_size: f64,
}

impl Default for StainRanges {
    fn default() -> Self {
        Self {
            radius: [5.0, 8.0],
            amplitude: [1.0, 2.5],
            frequency: [0.1, 0.2],
            gamma: [1.5, 3.0],
            alpha: [-0.5, -0.3],
            cell_size: 24.0,
        }
    }
}

/// Injected test defects per validation/test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefectRanges {
    pub per_image: [usize; 2],
    pub scratch_length: Range,
    pub scratch_width: Range,
    pub scratch_delta: Range,
    pub dent_radius: Range,
    pub dent_depth: Range,
    pub bump_radius: Range,
    pub bump_height: Range,
}

impl Default for DefectRanges {
    fn default() -> Self {
        Self {
            per_image: [1, 3],
            scratch_length: [15.0, 35.0],
            scratch_width: [1.5, 3.0],
            scratch_delta: [0.25, 0.4],
            dent_radius: [3.0, 6.0],
            dent_depth: [0.3, 0.5],
            bump_radius: [3.0, 6.0],
            bump_height: [0.3, 0.5],
        }
    }
}

/// Dataset descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub version: u32,
    pub seed: u64,
    /// Number of nominal training samples.
    pub count: usize,
    /// Defected samples for threshold estimation.
    pub validation_count: usize,
    /// Defected samples for evaluation.
    pub test_count: usize,
    /// Emit clean and stained twins of every training sample.
    pub paired: bool,
    /// Add water stains (training split, and validation/test).
    pub stains: bool,
    /// Emit the three light variants per sample.
    pub domain_randomization: bool,
    pub width: usize,
    pub height: usize,
    pub texel_scale: f64,
    pub border_margin: usize,
    pub texture: TextureRanges,
    pub light: Illumination,
    pub stain: StainRanges,
    pub defects: DefectRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            seed: 0,
            count: 80,
            validation_count: 0,
            test_count: 0,
            paired: false,
            stains: false,
            domain_randomization: false,
            width: 96,
            height: 96,
            texel_scale: 1.0,
            border_margin: 0,
            texture: TextureRanges::default(),
            light: Illumination::default(),
            stain: StainRanges::default(),
            defects: DefectRanges::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "dataset config version {} unsupported",
                self.version
            )));
        }
        if self.width == 0 || self.height == 0 || !(self.texel_scale > 0.0) {
            return Err(Error::config("image size and texel scale must be positive"));
        }
        let t = &self.texture;
        for (n, r) in [
            ("texture.direction_deg", t.direction_deg),
            ("texture.streak_frequency", t.streak_frequency),
            ("texture.contrast", t.contrast),
            ("texture.base", t.base),
            ("texture.grain", t.grain),
        ] {
            check_range(n, r)?;
        }
        let s = &self.stain;
        for (n, r) in [
            ("stain.radius", s.radius),
            ("stain.amplitude", s.amplitude),
            ("stain.frequency", s.frequency),
            ("stain.gamma", s.gamma),
            ("stain.alpha", s.alpha),
        ] {
            check_range(n, r)?;
        }
        if self.stains || self.paired {
            // the extreme draw must still satisfy every per-field invariant
            StainField {
                radius: s.radius[0].min(s.radius[1]),
                frequency: s.frequency[0],
                amplitude: s.amplitude[0],
                gamma: s.gamma[0],
                alpha: s.alpha[0],
                cell_size: s.cell_size,
                seed: NoiseSeed(0),
                center: None,
            }
            .validate()?;
            if s.radius[1] + s.amplitude[1] > s.cell_size {
                return Err(Error::config(format!(
                    "stain radius + amplitude ({}) exceeds grid cell size ({})",
                    s.radius[1] + s.amplitude[1],
                    s.cell_size
                )));
            }
        }
        let d = &self.defects;
        if d.per_image[0] > d.per_image[1] {
            return Err(Error::config("defects.per_image must be [min, max]"));
        }
        for (n, r) in [
            ("defects.scratch_length", d.scratch_length),
            ("defects.scratch_width", d.scratch_width),
            ("defects.scratch_delta", d.scratch_delta),
            ("defects.dent_radius", d.dent_radius),
            ("defects.dent_depth", d.dent_depth),
            ("defects.bump_radius", d.bump_radius),
            ("defects.bump_height", d.bump_height),
        ] {
            check_range(n, r)?;
        }
        Ok(())
    }

    fn split_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.count,
            Split::Validation => self.validation_count,
            Split::Test => self.test_count,
        }
    }

    fn variants(&self) -> &'static [LightVariant] {
        if self.domain_randomization {
            &LightVariant::ALL
        } else {
            &LightVariant::ALL[..1]
        }
    }

    fn stain_modes(&self, split: Split) -> &'static [bool] {
        match (split, self.paired) {
            (Split::Train, true) => &[false, true],
            (Split::Train, false) => {
                if self.stains {
                    &[true]
                } else {
                    &[false]
                }
            }
            _ => {
                if self.stains || self.paired {
                    &[true]
                } else {
                    &[false]
                }
            }
        }
    }
}

const TEXTURE_STREAM: u64 = 1;
const STAIN_STREAM: u64 = 2;
const DEFECT_STREAM: u64 = 3;

/// Seed shared by every twin of one (split, index, light variant) sample.
pub fn sample_seed(
    config: &DatasetConfig,
    split: Split,
    index: usize,
    variant: LightVariant,
) -> u64 {
    derive_seed(config.seed, &[split.tag(), index as u64, variant.tag()])
}

/// Builds the plate spec of one dataset sample. Twins differ only in `stains`.
pub fn render_dataset_sample(
    config: &DatasetConfig,
    split: Split,
    index: usize,
    variant: LightVariant,
    stained: bool,
) -> PlateSpec {
    let seed = sample_seed(config, split, index, variant);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TEXTURE_STREAM]));
    let t = &config.texture;
    let texture = BrushedTexture {
        direction_deg: draw(&mut rng, t.direction_deg),
        streak_frequency: draw(&mut rng, t.streak_frequency),
        contrast: draw(&mut rng, t.contrast),
        base: draw(&mut rng, t.base),
        grain: draw(&mut rng, t.grain),
        seed: NoiseSeed(rng.random()),
    };

    let stains = stained.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STAIN_STREAM]));
        let s = &config.stain;
        StainField {
            radius: draw(&mut rng, s.radius),
            amplitude: draw(&mut rng, s.amplitude),
            frequency: draw(&mut rng, s.frequency),
            gamma: draw(&mut rng, s.gamma),
            alpha: draw(&mut rng, s.alpha),
            cell_size: s.cell_size,
            seed: NoiseSeed(rng.random()),
            center: None,
        }
    });

    let defects = if split == Split::Train {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[DEFECT_STREAM]));
        plan_defects(config, &mut rng)
    };

    PlateSpec {
        width: config.width,
        height: config.height,
        texel_scale: config.texel_scale,
        texture,
        light: variant.apply(&config.light),
        stains,
        defects,
        border_margin: config.border_margin,
    }
}

fn plan_defects(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> Vec<Defect> {
    let d = &config.defects;
    let n = rng.random_range(d.per_image[0]..=d.per_image[1]);
    let extent = [
        config.width as f64 * config.texel_scale,
        config.height as f64 * config.texel_scale,
    ];
    let inset = 0.12;
    let place = |rng: &mut ChaCha8Rng| {
        [
            rng.random_range(extent[0] * inset..extent[0] * (1.0 - inset)),
            rng.random_range(extent[1] * inset..extent[1] * (1.0 - inset)),
        ]
    };
    (0..n)
        .map(|_| match rng.random_range(0..3u8) {
            0 => {
                let from = place(rng);
                let len = draw(rng, d.scratch_length);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let to = [
                    (from[0] + len * angle.cos()).clamp(0.0, extent[0]),
                    (from[1] + len * angle.sin()).clamp(0.0, extent[1]),
                ];
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Defect::Scratch {
                    from,
                    to,
                    width: draw(rng, d.scratch_width),
                    delta: sign * draw(rng, d.scratch_delta),
                }
            }
            1 => Defect::Dent {
                center: place(rng),
                radius: draw(rng, d.dent_radius),
                depth: draw(rng, d.dent_depth),
            },
            _ => Defect::Bump {
                center: place(rng),
                radius: draw(rng, d.bump_radius),
                height: draw(rng, d.bump_height),
            },
        })
        .collect()
}

/// One emitted sample; paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub split: Split,
    pub image_path: String,
    pub class_mask_path: String,
    pub instance_mask_path: String,
    pub light_variant: LightVariant,
    pub has_stains: bool,
    pub seed: u64,
    pub spec_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub samples: Vec<ManifestSample>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: m.version as u16,
                expected: MANIFEST_VERSION as u16,
            });
        }
        Ok(m)
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

struct Planned {
    sample: ManifestSample,
    spec: PlateSpec,
}

fn plan(config: &DatasetConfig) -> Vec<Planned> {
    let mut out = Vec::new();
    for split in Split::ALL {
        for index in 0..config.split_count(split) {
            for &variant in config.variants() {
                for &stained in config.stain_modes(split) {
                    let spec = render_dataset_sample(config, split, index, variant, stained);
                    let id = format!(
                        "{split}_{index:04}_{}_{}",
                        variant.name(),
                        if stained { "ws" } else { "clean" }
                    );
                    out.push(Planned {
                        sample: ManifestSample {
                            image_path: format!("images/{id}.png"),
                            class_mask_path: format!("class_masks/{id}.png"),
                            instance_mask_path: format!("instance_masks/{id}.png"),
                            split,
                            light_variant: variant,
                            has_stains: stained,
                            seed: sample_seed(config, split, index, variant),
                            spec_hash: spec.hash(),
                            id,
                        },
                        spec,
                    });
                }
            }
        }
    }
    out
}

/// Renders every sample of `config` into `out_dir` and writes `manifest.json`
/// plus the resolved `dataset_config.json`.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    for sub in ["images", "class_masks", "instance_masks"] {
        let d: PathBuf = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let planned = plan(config);
    planned.par_iter().try_for_each(|p| -> Result<()> {
        let r = render_sample(&p.spec)?;
        pngio::write_gray8(&out_dir.join(&p.sample.image_path), &r.image)?;
        pngio::write_class_mask(&out_dir.join(&p.sample.class_mask_path), &r.class_mask)?;
        pngio::write_instance_mask(
            &out_dir.join(&p.sample.instance_mask_path),
            &r.instance_mask,
        )
    })?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        samples: planned.into_iter().map(|p| p.sample).collect(),
    };
    crate::write_json(&out_dir.join("dataset_config.json"), config)?;
    crate::write_json(&out_dir.join("manifest.json"), &manifest)?;
    log::info!(
        "generated {} samples into {}",
        manifest.samples.len(),
        out_dir.display()
    );
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> DatasetConfig {
        DatasetConfig {
            count,
            width: 32,
            height: 32,
            ..Default::default()
        }
    }

    #[test]
    fn paired_mode_emits_twins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            paired: true,
            ..small(4)
        };
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.samples.len(), 8);
        assert_eq!(m.samples.iter().filter(|s| s.has_stains).count(), 4);
        for idx in 0..4 {
            let a = render_dataset_sample(&cfg, Split::Train, idx, LightVariant::Base, false);
            let b = render_dataset_sample(&cfg, Split::Train, idx, LightVariant::Base, true);
            assert_ne!(a.hash(), b.hash());
            assert_eq!(a, PlateSpec { stains: None, ..b });
        }
        for s in &m.samples {
            assert!(dir.path().join(&s.image_path).exists());
        }
    }

    #[test]
    fn domain_randomization_emits_three_variants() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            domain_randomization: true,
            ..small(2)
        };
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.samples.len(), 6);
        let rot = m
            .samples
            .iter()
            .filter(|s| s.light_variant == LightVariant::Rotated90)
            .count();
        assert_eq!(rot, 2);
    }

    #[test]
    fn regeneration_is_identical() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = DatasetConfig {
            stains: true,
            test_count: 1,
            ..small(2)
        };
        let m1 = generate_dataset(&cfg, d1.path()).unwrap();
        let m2 = generate_dataset(&cfg, d2.path()).unwrap();
        assert_eq!(m1, m2);
        for s in &m1.samples {
            for p in [&s.image_path, &s.class_mask_path, &s.instance_mask_path] {
                assert_eq!(
                    fs::read(d1.path().join(p)).unwrap(),
                    fs::read(d2.path().join(p)).unwrap()
                );
            }
        }
        let loaded = DatasetManifest::load(&d1.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, m1);
    }

    #[test]
    fn oversized_stains_rejected() {
        let cfg = DatasetConfig {
            stains: true,
            stain: StainRanges {
                radius: [10.0, 22.0],
                amplitude: [1.0, 3.0],
                cell_size: 24.0,
                ..Default::default()
            },
            ..small(1)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn test_split_has_defects_and_stains() {
        let cfg = DatasetConfig {
            stains: true,
            test_count: 3,
            ..small(0)
        };
        for i in 0..3 {
            let spec = render_dataset_sample(&cfg, Split::Test, i, LightVariant::Base, true);
            assert!(!spec.defects.is_empty());
            assert!(spec.stains.is_some());
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<DatasetConfig, _> =
            serde_json::from_str(r#"{"count": 3, "bogus": 1}"#);
        assert!(r.is_err());
    }
}
