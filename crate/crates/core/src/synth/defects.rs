//! Parametric surface defects injected into test and validation renders.
//!
//! These are simple stand-ins used to exercise the evaluation stack, not a
//! physical defect model.

use serde::{Deserialize, Serialize};

use crate::noise::Point;

use super::classes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Defect {
    /// Thin straight groove with a reflectance shift.
    Scratch {
        from: Point,
        to: Point,
        width: f64,
        delta: f64,
    },
    /// Depression shaded as if lit from the +x side.
    Dent {
        center: Point,
        radius: f64,
        depth: f64,
    },
    /// Raised blob, shaded opposite to a dent.
    Bump {
        center: Point,
        radius: f64,
        height: f64,
    },
}

impl Defect {
    pub fn class_id(&self) -> u8 {
        match self {
            Defect::Scratch { .. } => classes::SCRATCH,
            Defect::Dent { .. } => classes::DENT,
            Defect::Bump { .. } => classes::BUMP,
        }
    }

    /// New reflectance at `p`, or `None` if `p` lies outside the defect.
    pub fn apply(&self, p: Point, reflectance: f64) -> Option<f64> {
        match *self {
            Defect::Scratch {
                from,
                to,
                width,
                delta,
            } => {
                let (vx, vy) = (to[0] - from[0], to[1] - from[1]);
                let len2 = vx * vx + vy * vy;
                let t = if len2 > 0.0 {
                    (((p[0] - from[0]) * vx + (p[1] - from[1]) * vy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (from[0] + t * vx, from[1] + t * vy);
                let d = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
                (d <= width / 2.0).then_some(reflectance + delta)
            }
            Defect::Dent {
                center,
                radius,
                depth,
            } => shade(p, center, radius, depth).map(|s| reflectance + s),
            Defect::Bump {
                center,
                radius,
                height,
            } => shade(p, center, radius, -height).map(|s| reflectance + 0.6 * s),
        }
    }
}

fn shade(p: Point, center: Point, radius: f64, depth: f64) -> Option<f64> {
    let dx = (p[0] - center[0]) / radius;
    let dy = (p[1] - center[1]) / radius;
    let rho2 = dx * dx + dy * dy;
    // Dark far wall, bright near wall, darkened floor.
    (rho2 <= 1.0).then_some(depth * (dx - 0.5 * (1.0 - rho2)))
}
