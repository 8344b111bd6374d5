//! Procedural brushed-metal reflectance and ring-light illumination.

use serde::{Deserialize, Serialize};

use crate::noise::{self, NoiseSeed, Point};

/// Directional streak texture of a brushed plate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrushedTexture {
    /// Brushing direction in degrees from the x axis.
    pub direction_deg: f64,
    /// Streak frequency across the brushing direction (cycles per texture unit).
    pub streak_frequency: f64,
    /// Amplitude of the streak pattern.
    pub contrast: f64,
    /// Mean reflectance.
    pub base: f64,
    /// Amplitude of isotropic fine grain.
    pub grain: f64,
    pub seed: NoiseSeed,
}

impl Default for BrushedTexture {
    fn default() -> Self {
        Self {
            direction_deg: 0.0,
            streak_frequency: 0.6,
            contrast: 0.06,
            base: 0.55,
            grain: 0.02,
            seed: NoiseSeed(0),
        }
    }
}

/// Streaks are stretched this much along the brushing direction.
const STREAK_ELONGATION: f64 = 40.0;

impl BrushedTexture {
    pub fn reflectance(&self, p: Point) -> f64 {
        let (s, c) = self.direction_deg.to_radians().sin_cos();
        let along = p[0] * c + p[1] * s;
        let across = -p[0] * s + p[1] * c;
        let f = self.streak_frequency;
        let streak_seed = NoiseSeed(noise::derive_seed(self.seed.0, &[1]));
        let fine_seed = NoiseSeed(noise::derive_seed(self.seed.0, &[2]));
        let grain_seed = NoiseSeed(noise::derive_seed(self.seed.0, &[3]));
        let q = [across * f, along * f / STREAK_ELONGATION];
        let streak = 0.7 * noise::perlin(q, 1.0, streak_seed)
            + 0.3 * noise::perlin([q[0] * 2.3, q[1] * 2.3], 1.0, fine_seed);
        let grain = noise::perlin(p, 0.9, grain_seed);
        (self.base + self.contrast * streak + self.grain * grain).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightPattern {
    Ring,
    Hexagonal,
}

/// Reflection of a ring light seen on a flat plate: a bright annulus over a
/// dimmer ambient level, optionally hexagonal, capped at an overexposure level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Illumination {
    pub pattern: LightPattern,
    /// Rotation of the hexagonal outline, degrees.
    pub rotation_deg: f64,
    /// Size multiplier of the light outline.
    pub scale: f64,
    pub ambient: f64,
    /// Peak gain added on the reflected ring.
    pub intensity: f64,
    /// Ring radius as a fraction of the smaller image side.
    pub ring_radius: f64,
    /// Gaussian width of the ring in normalized radius units.
    pub ring_width: f64,
    /// Illumination cap; values above produce a flat overexposed plateau.
    pub overexposure: f64,
}

impl Default for Illumination {
    fn default() -> Self {
        Self {
            pattern: LightPattern::Hexagonal,
            rotation_deg: 0.0,
            scale: 1.0,
            ambient: 0.9,
            intensity: 0.5,
            ring_radius: 0.45,
            ring_width: 0.18,
            overexposure: 1.6,
        }
    }
}

impl Illumination {
    /// Illumination gain at pixel coordinates `(x, y)` of a `width x height` image.
    pub fn gain(&self, x: f64, y: f64, width: usize, height: usize) -> f64 {
        let dx = x - width as f64 / 2.0;
        let dy = y - height as f64 / 2.0;
        let dist = (dx * dx + dy * dy).sqrt();
        let mut outline = self.ring_radius * width.min(height) as f64 * self.scale;
        if self.pattern == LightPattern::Hexagonal {
            use std::f64::consts::{FRAC_PI_3, FRAC_PI_6};
            let phi = dy.atan2(dx) - self.rotation_deg.to_radians();
            let sector = phi.rem_euclid(FRAC_PI_3) - FRAC_PI_6;
            outline *= FRAC_PI_6.cos() / sector.cos();
        }
        let rho = if outline > 0.0 { dist / outline } else { 0.0 };
        let t = (rho - 1.0) / self.ring_width;
        let gain = self.ambient + self.intensity * (-0.5 * t * t).exp();
        gain.min(self.overexposure)
    }
}
