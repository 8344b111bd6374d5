//! Water-stain reflectance model.
//!
//! A stain is a disk whose radius is perturbed by gradient noise. Inside the
//! outline the reflectance is shifted by `alpha * pow(d / r', gamma)`, so the
//! center keeps the surface reflectance and the rim shows the full shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{self, GridSampling, NoiseSeed, Point, Region};

/// Parameters of one water-stain field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StainField {
    /// Base radius in texture units.
    pub radius: f64,
    /// Frequency of the outline perturbation noise.
    pub frequency: f64,
    /// Amplitude of the outline perturbation, texture units.
    pub amplitude: f64,
    /// Decay exponent, > 0.
    pub gamma: f64,
    /// Reflectance shift at the outline; negative darkens the rim.
    pub alpha: f64,
    /// Jittered grid cell size; one stain per cell.
    pub cell_size: f64,
    pub seed: NoiseSeed,
    /// Single-stain mode: when set, the only stain is centered here and the
    /// grid is not consulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Point>,
}

impl Default for StainField {
    fn default() -> Self {
        Self {
            radius: 6.0,
            frequency: 0.15,
            amplitude: 2.5,
            gamma: 2.0,
            alpha: -0.3,
            cell_size: 24.0,
            seed: NoiseSeed(0),
            center: None,
        }
    }
}

/// Result of evaluating the stain model at one surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainSample {
    /// Output reflectance.
    pub reflectance: f64,
    pub inside: bool,
    /// Distance to the nearest stain center.
    pub distance: f64,
    /// Perturbed radius at this point.
    pub perturbed_radius: f64,
}

const RADIUS_NOISE_STREAM: u64 = 0x5241_4449;

impl StainField {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.radius,
            self.frequency,
            self.amplitude,
            self.gamma,
            self.alpha,
            self.cell_size,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("stain parameters must be finite"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::config("stain radius must be positive"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("stain decay exponent must be positive"));
        }
        if self.amplitude < 0.0 {
            return Err(Error::config("stain amplitude must be non-negative"));
        }
        if !(self.frequency > 0.0) {
            return Err(Error::config("stain noise frequency must be positive"));
        }
        if self.radius + self.amplitude > self.cell_size {
            return Err(Error::config(format!(
                "stain radius + amplitude ({}) exceeds grid cell size ({})",
                self.radius + self.amplitude,
                self.cell_size
            )));
        }
        Ok(())
    }

    /// Largest distance from a center at which a point can be inside a stain.
    pub fn reach(&self) -> f64 {
        self.radius + self.amplitude
    }

    pub fn sampling(&self) -> GridSampling {
        GridSampling {
            cell_size: self.cell_size,
            region: Region::new([0.0, 0.0], [self.cell_size, self.cell_size]),
            seed: self.seed,
        }
    }

    pub fn radius_noise_seed(&self) -> NoiseSeed {
        NoiseSeed(noise::derive_seed(self.seed.0, &[RADIUS_NOISE_STREAM]))
    }

    /// Perturbed radius `r + perlin(p, f) * A`.
    pub fn perturbed_radius(&self, p: Point) -> f64 {
        self.radius + noise::perlin(p, self.frequency, self.radius_noise_seed()) * self.amplitude
    }
}

/// Applies the stain model to an input reflectance at surface point `p`.
pub fn stain_reflectance(p: Point, reflectance: f64, field: &StainField) -> Result<StainSample> {
    let perturbed_radius = field.perturbed_radius(p);
    let distance = match field.center {
        Some(c) => ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt(),
        None => noise::nearest_center(p, &field.sampling(), field.reach())?.distance,
    };
    // r' can collapse to zero when the amplitude reaches the base radius;
    // such points are treated as outside
    let inside = perturbed_radius > 0.0 && distance <= perturbed_radius;
    let reflectance = if inside {
        let normalized = distance / perturbed_radius;
        reflectance + normalized.powf(field.gamma) * field.alpha
    } else {
        reflectance
    };
    Ok(StainSample {
        reflectance,
        inside,
        distance,
        perturbed_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(center: Point, amplitude: f64) -> StainField {
        StainField {
            radius: 5.0,
            amplitude,
            alpha: -0.3,
            gamma: 2.0,
            center: Some(center),
            ..StainField::default()
        }
    }

    #[test]
    fn center_keeps_reflectance() {
        let f = single([10.0, 10.0], 1.0);
        let s = stain_reflectance([10.0, 10.0], 0.6, &f).unwrap();
        assert!(s.inside);
        assert_eq!(s.reflectance, 0.6);
    }

    #[test]
    fn rim_gets_full_shift() {
        let f = single([0.0, 0.0], 0.0);
        let s = stain_reflectance([5.0, 0.0], 0.6, &f).unwrap();
        assert!(s.inside);
        assert!((s.reflectance - 0.3).abs() < 1e-9);
    }

    #[test]
    fn outside_is_untouched() {
        let f = single([0.0, 0.0], 0.0);
        let s = stain_reflectance([5.0001, 0.0], 0.6, &f).unwrap();
        assert!(!s.inside);
        assert_eq!(s.reflectance, 0.6);
    }

    #[test]
    fn zero_amplitude_gives_exact_disk() {
        let f = single([0.3, -0.2], 0.0);
        for i in 0..400 {
            let a = i as f64 * 0.1;
            let rr = (i % 13) as f64 * 0.5;
            let p = [0.3 + rr * a.cos(), -0.2 + rr * a.sin()];
            let s = stain_reflectance(p, 0.5, &f).unwrap();
            assert_eq!(s.inside, s.distance <= 5.0);
        }
    }

    #[test]
    fn reflectance_non_increasing_in_normalized_distance() {
        let f = single([0.0, 0.0], 0.0);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let s = stain_reflectance([i as f64 * 0.05, 0.0], 0.7, &f).unwrap();
            assert!(s.reflectance <= prev);
            prev = s.reflectance;
        }
    }

    #[test]
    fn validation_rules() {
        let ok = StainField::default();
        ok.validate().unwrap();
        for bad in [
            StainField { gamma: 0.0, ..ok },
            StainField { radius: 0.0, ..ok },
            StainField {
                amplitude: -1.0,
                ..ok
            },
            StainField {
                radius: 20.0,
                amplitude: 5.0,
                ..ok
            },
            StainField {
                alpha: f64::NAN,
                ..ok
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn grid_mode_rejects_oversized_reach() {
        let f = StainField {
            radius: 20.0,
            amplitude: 5.0,
            ..StainField::default()
        };
        assert!(stain_reflectance([1.0, 1.0], 0.5, &f).is_err());
    }
}
