//! Cylindrical no-fly zones and the soft penalty the optimizer uses to stay
//! out of them.
//!
//! A point violates a cylinder when it is simultaneously inside the lateral
//! surface and below the cap height. Both conditions are expressed as
//! inequality residuals that are positive when violated, and the scalar
//! violation is the product of their positive parts, so it is zero everywhere
//! outside the solid and grows smoothly with penetration depth inside it.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Vertical cylinder standing on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderObstacle {
    /// Center x, m.
    pub x: f64,
    /// Center y, m.
    pub y: f64,
    /// Radius, m.
    pub radius: f64,
    /// Cap height: the obstacle occupies `z <= height`, m.
    pub height: f64,
}

impl CylinderObstacle {
    /// Same cylinder with the radius grown by `margin` meters. The planner
    /// uses inflated copies; metrics always measure the literal geometry.
    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            radius: self.radius + margin,
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.radius.is_finite() && self.height.is_finite()
    }
}

/// Lateral residual, m^2: positive inside the cylinder wall.
pub fn h_cylinder(p: &Vector3<f64>, obs: &CylinderObstacle) -> f64 {
    let dx = p.x - obs.x;
    let dy = p.y - obs.y;
    obs.radius * obs.radius - dx * dx - dy * dy
}

/// Vertical residual, m: positive below the cap height.
pub fn h_zmax(p: &Vector3<f64>, obs: &CylinderObstacle) -> f64 {
    obs.height - p.z
}

/// Product of the positive parts of both residuals: zero outside the solid,
/// positive inside.
pub fn violation(p: &Vector3<f64>, obs: &CylinderObstacle) -> f64 {
    let hc = h_cylinder(p, obs).max(0.0);
    let hz = h_zmax(p, obs).max(0.0);
    hc * hz
}

/// Gradient of [`violation`] with respect to the position. The positive-part
/// hinge contributes a zero derivative on its flat side and at the kink
/// itself, so the gradient is nonzero only strictly inside the solid.
pub fn violation_gradient(p: &Vector3<f64>, obs: &CylinderObstacle) -> Vector3<f64> {
    let hc = h_cylinder(p, obs);
    let hz = h_zmax(p, obs);
    if hc <= 0.0 || hz <= 0.0 {
        return Vector3::zeros();
    }
    Vector3::new(
        -2.0 * (p.x - obs.x) * hz,
        -2.0 * (p.y - obs.y) * hz,
        -hc,
    )
}

/// Total violation accumulated over a sequence of points and a set of
/// obstacles. This is the unscaled collision measure a trajectory is
/// penalized with.
pub fn trajectory_penalty(points: &[Vector3<f64>], obstacles: &[CylinderObstacle]) -> f64 {
    let mut total = 0.0;
    for p in points {
        for obs in obstacles {
            total += violation(p, obs);
        }
    }
    total
}

/// Signed horizontal distance from `p` to the lateral surface, m: negative
/// inside. `None` when `p` is at or above the cap height, where the cylinder
/// cannot be hit laterally.
pub fn signed_clearance(p: &Vector3<f64>, obs: &CylinderObstacle) -> Option<f64> {
    if p.z >= obs.height {
        return None;
    }
    let dx = p.x - obs.x;
    let dy = p.y - obs.y;
    Some((dx * dx + dy * dy).sqrt() - obs.radius)
}
