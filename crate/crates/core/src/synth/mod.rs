//! Synthetic plate rendering with water stains and pixel-precise annotations.

mod dataset;
mod defects;
mod stain;
mod surface;

pub use dataset::{
    generate_dataset, render_dataset_sample, sample_seed, DatasetConfig, DatasetManifest,
    DefectRanges, LightVariant, ManifestSample, Split, StainRanges, TextureRanges,
    MANIFEST_VERSION,
};
pub use defects::Defect;
pub use stain::{stain_reflectance, StainField, StainSample};
pub use surface::{BrushedTexture, Illumination, LightPattern};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{AnnotationMask, Grid, InstanceMask, SampleImage};
use crate::noise::Point;

/// Annotation class ids.
pub mod classes {
    pub const BACKGROUND: u8 = 0;
    pub const WATER_STAIN: u8 = 1;
    pub const SCRATCH: u8 = 2;
    pub const BUMP: u8 = 3;
    pub const DENT: u8 = 4;
    pub const FINGERPRINT: u8 = 5;
    pub const STICKER: u8 = 6;

    pub const DEFECTS: [u8; 3] = [SCRATCH, BUMP, DENT];
    pub const IMPURITIES: [u8; 3] = [WATER_STAIN, FINGERPRINT, STICKER];

    pub fn is_defect(class: u8) -> bool {
        DEFECTS.contains(&class)
    }

    pub fn name(class: u8) -> &'static str {
        match class {
            BACKGROUND => "background",
            WATER_STAIN => "water_stain",
            SCRATCH => "scratch",
            BUMP => "bump",
            DENT => "dent",
            FINGERPRINT => "fingerprint",
            STICKER => "sticker",
            _ => "unknown",
        }
    }
}

/// Full description of one rendered plate image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSpec {
    pub width: usize,
    pub height: usize,
    /// Texture units per pixel.
    pub texel_scale: f64,
    pub texture: BrushedTexture,
    pub light: Illumination,
    #[serde(default)]
    pub stains: Option<StainField>,
    #[serde(default)]
    pub defects: Vec<Defect>,
    /// Pixels along each border rendered black and unannotated.
    #[serde(default)]
    pub border_margin: usize,
}

impl PlateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if !(self.texel_scale > 0.0 && self.texel_scale.is_finite()) {
            return Err(Error::config("texel scale must be positive"));
        }
        if !(self.light.scale > 0.0) {
            return Err(Error::config("light scale must be positive"));
        }
        if let Some(s) = &self.stains {
            s.validate()?;
        }
        Ok(())
    }

    /// Surface point of pixel `(x, y)` in texture units (pixel centers).
    pub fn surface_point(&self, x: usize, y: usize) -> Point {
        [
            (x as f64 + 0.5) * self.texel_scale,
            (y as f64 + 0.5) * self.texel_scale,
        ]
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Output of [`render_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: SampleImage,
    pub class_mask: AnnotationMask,
    pub instance_mask: InstanceMask,
}

/// Renders a plate: texture reflectance, then stains, then defects, then
/// illumination and clamping. All seeds live inside the spec.
pub fn render_sample(spec: &PlateSpec) -> Result<Rendered> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut image = Grid::<f32>::new(w, h);
    let mut class_mask = Grid::<u8>::new(w, h);
    // 1-based index of the defect owning each pixel
    let mut defect_owner = Grid::<u16>::new(w, h);
    let margin = spec.border_margin;

    for y in 0..h {
        for x in 0..w {
            if x < margin || y < margin || x + margin >= w || y + margin >= h {
                continue;
            }
            let p = spec.surface_point(x, y);
            let mut reflectance = spec.texture.reflectance(p);
            let mut class = classes::BACKGROUND;
            if let Some(field) = &spec.stains {
                let s = stain_reflectance(p, reflectance, field)?;
                reflectance = s.reflectance;
                if s.inside {
                    class = classes::WATER_STAIN;
                }
            }
            for (k, defect) in spec.defects.iter().enumerate() {
                if let Some(r) = defect.apply(p, reflectance) {
                    reflectance = r;
                    class = defect.class_id();
                    *defect_owner.get_mut(x, y) = (k + 1) as u16;
                }
            }
            let gain = spec.light.gain(x as f64 + 0.5, y as f64 + 0.5, w, h);
            *image.get_mut(x, y) = (reflectance * gain).clamp(0.0, 1.0) as f32;
            *class_mask.get_mut(x, y) = class;
        }
    }

    let instance_mask = label_instances(&class_mask, &defect_owner, spec.defects.len())?;
    Ok(Rendered {
        image,
        class_mask,
        instance_mask,
    })
}

/// Stain instances are 8-connected components of the stain class; each
/// defect is one instance. Ids are assigned stains first, then defects.
fn label_instances(
    class_mask: &AnnotationMask,
    defect_owner: &Grid<u16>,
    defect_count: usize,
) -> Result<InstanceMask> {
    let stains = class_mask.map(|&c| c == classes::WATER_STAIN);
    let (mut labels, count) = connected_components(&stains);
    let mut next = count;
    let mut remap = vec![0u16; defect_count + 1];
    for (px, &owner) in defect_owner.as_slice().iter().enumerate() {
        if owner == 0 {
            continue;
        }
        let slot = &mut remap[owner as usize];
        if *slot == 0 {
            next += 1;
            *slot = u16::try_from(next)
                .map_err(|_| Error::config("more than 65535 instances in one image"))?;
        }
        labels.as_mut_slice()[px] = *slot;
    }
    Ok(labels)
}

/// 8-connected component labelling; returns labels (0 = unset) and the count.
pub fn connected_components(mask: &Grid<bool>) -> (InstanceMask, usize) {
    let (w, h) = mask.dims();
    let mut labels = Grid::<u16>::new(w, h);
    let mut count = 0usize;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.as_slice()[start] || labels.as_slice()[start] != 0 {
            continue;
        }
        count += 1;
        let id = count.min(u16::MAX as usize) as u16;
        labels.as_mut_slice()[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.as_slice()[j] && labels.as_slice()[j] == 0 {
                        labels.as_mut_slice()[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, count)
}
