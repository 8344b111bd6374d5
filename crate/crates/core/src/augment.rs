//! Seeded training-time augmentation.
//!
//! A policy is first realized into an [`AugmentDraw`] for one (sample, epoch)
//! seed; the draw is then applied to the image and to any number of masks.
//! Geometric operations hit image and masks alike, photometric ones only the
//! image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid, SampleImage};
use crate::noise::derive_seed;

/// Inclusive-exclusive sampling range `[lo, hi)`; `lo == hi` is a constant.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionMaskPolicy {
    pub probability: f64,
    /// Strip depth as a fraction of the image side.
    pub size: Range,
}

/// Augmentation policy. `Default` disables everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Additive brightness shift.
    pub brightness: Option<Range>,
    /// Contrast factor applied around the image mean.
    pub contrast: Option<Range>,
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    pub blur_sigma: Option<Range>,
    pub noise_std: Option<Range>,
    /// Black strip along a random border, simulating the plate edge.
    pub region_mask: Option<RegionMaskPolicy>,
}

impl AugmentPolicy {
    /// Brightness/contrast increase, flips on both axes, blur, noise and an
    /// always-on border mask-out.
    pub fn standard() -> Self {
        Self {
            brightness: Some([0.0, 0.1]),
            contrast: Some([1.0, 1.25]),
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            blur_sigma: Some([0.3, 1.0]),
            noise_std: Some([0.0, 0.02]),
            region_mask: Some(RegionMaskPolicy {
                probability: 1.0,
                size: [0.05, 0.3],
            }),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: &Option<Range>| {
            r.is_none_or(|r| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1])
        };
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if ![
            &self.brightness,
            &self.contrast,
            &self.blur_sigma,
            &self.noise_std,
        ]
        .into_iter()
        .all(range_ok)
        {
            return Err(Error::config("augmentation ranges must be finite [lo, hi]"));
        }
        if !prob_ok(self.flip_horizontal) || !prob_ok(self.flip_vertical) {
            return Err(Error::config("flip probabilities must lie in [0, 1]"));
        }
        if self.blur_sigma.is_some_and(|r| r[0] <= 0.0) {
            return Err(Error::config("blur sigma must be positive"));
        }
        if self.noise_std.is_some_and(|r| r[0] < 0.0) {
            return Err(Error::config("noise stddev must be non-negative"));
        }
        if let Some(m) = &self.region_mask {
            if !prob_ok(m.probability)
                || !range_ok(&Some(m.size))
                || m.size[0] < 0.0
                || m.size[1] > 1.0
            {
                return Err(Error::config("invalid region mask policy"));
            }
        }
        Ok(())
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One realization of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub blur_sigma: Option<f64>,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub mask_rect: Option<Rect>,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            flip_horizontal: false,
            flip_vertical: false,
            brightness: 0.0,
            contrast: 1.0,
            blur_sigma: None,
            noise_std: 0.0,
            noise_seed: 0,
            mask_rect: None,
        }
    }

    pub fn sample(policy: &AugmentPolicy, seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = |r: Option<Range>, default: f64, rng: &mut ChaCha8Rng| match r {
            None => default,
            Some([lo, hi]) if lo == hi => lo,
            Some([lo, hi]) => rng.random_range(lo..hi),
        };
        let flip_horizontal = rng.random_bool(policy.flip_horizontal);
        let flip_vertical = rng.random_bool(policy.flip_vertical);
        let brightness = range(policy.brightness, 0.0, &mut rng);
        let contrast = range(policy.contrast, 1.0, &mut rng);
        let blur_sigma = policy.blur_sigma.map(|r| range(Some(r), 0.0, &mut rng));
        let noise_std = range(policy.noise_std, 0.0, &mut rng);
        let noise_seed = rng.random();
        let mask_rect = policy.region_mask.as_ref().and_then(|m| {
            if !rng.random_bool(m.probability) {
                return None;
            }
            let frac = range(Some(m.size), 0.0, &mut rng);
            let side = rng.random_range(0..4u8);
            let depth_x = ((width as f64 * frac).round() as usize).min(width);
            let depth_y = ((height as f64 * frac).round() as usize).min(height);
            Some(match side {
                0 => Rect {
                    x0: 0,
                    y0: 0,
                    x1: depth_x,
                    y1: height,
                },
                1 => Rect {
                    x0: width - depth_x,
                    y0: 0,
                    x1: width,
                    y1: height,
                },
                2 => Rect {
                    x0: 0,
                    y0: 0,
                    x1: width,
                    y1: depth_y,
                },
                _ => Rect {
                    x0: 0,
                    y0: height - depth_y,
                    x1: width,
                    y1: height,
                },
            })
        });
        Self {
            flip_horizontal,
            flip_vertical,
            brightness,
            contrast,
            blur_sigma,
            noise_std,
            noise_seed,
            mask_rect,
        }
    }

    fn geometric<T: Clone>(&self, g: &Grid<T>) -> Grid<T> {
        let mut out = g.clone();
        if self.flip_horizontal {
            out = out.flipped_horizontal();
        }
        if self.flip_vertical {
            out = out.flipped_vertical();
        }
        out
    }

    pub fn apply_image(&self, image: &SampleImage) -> SampleImage {
        let flipped = self.geometric(image);
        let photometric = self.brightness != 0.0
            || self.contrast != 1.0
            || self.blur_sigma.is_some()
            || self.noise_std > 0.0;
        let mut out = if photometric {
            self.photometric(&flipped)
        } else {
            flipped
        };
        if let Some(r) = self.mask_rect {
            zero_rect(&mut out, r);
        }
        out
    }

    fn photometric(&self, image: &SampleImage) -> SampleImage {
        let mut work: Grid<f64> = image.map(|&v| v as f64);
        let mean = work.as_slice().iter().sum::<f64>() / work.len().max(1) as f64;
        for v in work.as_mut_slice() {
            *v = (*v - mean) * self.contrast + mean + self.brightness;
        }
        if let Some(sigma) = self.blur_sigma {
            work = grid::gaussian_blur(&work, sigma);
        }
        if self.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.noise_std).expect("finite stddev");
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            for v in work.as_mut_slice() {
                *v += normal.sample(&mut rng);
            }
        }
        work.map(|&v| v.clamp(0.0, 1.0) as f32)
    }

    pub fn apply_mask<T: Clone + Default>(&self, mask: &Grid<T>) -> Grid<T> {
        let mut out = self.geometric(mask);
        if let Some(r) = self.mask_rect {
            zero_rect(&mut out, r);
        }
        out
    }
}

fn zero_rect<T: Clone + Default>(g: &mut Grid<T>, r: Rect) {
    for y in r.y0..r.y1.min(g.height()) {
        for x in r.x0..r.x1.min(g.width()) {
            *g.get_mut(x, y) = T::default();
        }
    }
}

/// Seed of the augmentation draw for one sample in one epoch.
pub fn augment_seed(base: u64, sample: u64, epoch: u64) -> u64 {
    derive_seed(base, &[0x0041_5547, sample, epoch])
}

/// Realizes `policy` for `seed` and applies it to the image and every mask.
pub fn augment<T: Clone + Default>(
    image: &SampleImage,
    masks: &[Grid<T>],
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<(SampleImage, Vec<Grid<T>>)> {
    if let Some(m) = masks.iter().find(|m| !m.same_dims(image)) {
        return Err(Error::Dimension {
            expected: image.len(),
            found: m.len(),
        });
    }
    let draw = AugmentDraw::sample(policy, seed, image.width(), image.height());
    Ok((
        draw.apply_image(image),
        masks.iter().map(|m| draw.apply_mask(m)).collect(),
    ))
}
