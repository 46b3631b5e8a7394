//! Map-frame to render-frame similarity transform.
//!
//! A rendered map point is `s * Rz(yaw) * p + origin`. Rotation is about +Z only so
//! heights above the anchor scale by `s` and never mix with horizontal axes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Vec3};

/// Scale applied when a console first connects (5 x 6 m map -> 25 x 30 cm footprint).
pub const DEFAULT_SCALE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapFrameTransform {
    scale: f64,
    yaw: f64,
    origin: Vec3,
}

impl Default for MapFrameTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl MapFrameTransform {
    pub fn new(scale: f64, yaw: f64, origin: Vec3) -> Result<Self, FrameError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(FrameError::InvalidScale(scale));
        }
        Ok(Self {
            scale,
            yaw: normalize_angle(yaw),
            origin,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            yaw: 0.0,
            origin: Vec3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn map_to_world(&self, p: &Vec3) -> Vec3 {
        let (sin, cos) = self.yaw.sin_cos();
        let rotated = Vec3::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y, p.z);
        rotated * self.scale + self.origin
    }

    pub fn world_to_map(&self, p: &Vec3) -> Vec3 {
        let (sin, cos) = self.yaw.sin_cos();
        let local = (p - self.origin) / self.scale;
        Vec3::new(cos * local.x + sin * local.y, -sin * local.x + cos * local.y, local.z)
    }

    /// Re-anchors the rendered map. Map-frame geometry is untouched; everything is
    /// simply re-projected through the returned transform.
    pub fn retarget_anchor(&self, new_origin: Vec3, new_yaw: f64, new_scale: f64) -> Result<Self, FrameError> {
        Self::new(new_scale, new_yaw, new_origin)
    }
}

pub fn map_to_world(p: &Vec3, t: &MapFrameTransform) -> Vec3 {
    t.map_to_world(p)
}

pub fn world_to_map(p: &Vec3, t: &MapFrameTransform) -> Vec3 {
    t.world_to_map(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn identity_forward() {
        let t = MapFrameTransform::identity();
        assert_eq!(t.map_to_world(&Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(t.world_to_map(&Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn scale_and_offset() {
        let t = MapFrameTransform::new(0.1, 0.0, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(close(t.map_to_world(&Vec3::new(1.0, 2.0, 3.0)), Vec3::new(0.1, 0.2, 1.3), 1e-12));
    }

    #[test]
    fn quarter_turn_and_inverse() {
        let t = MapFrameTransform::new(0.5, FRAC_PI_2, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(close(t.map_to_world(&Vec3::new(1.0, 0.0, 0.0)), Vec3::new(1.0, 0.5, 0.0), 1e-12));
        assert!(close(t.world_to_map(&Vec3::new(1.0, 0.5, 0.0)), Vec3::new(1.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn invalid_scale_rejected() {
        let t = MapFrameTransform::identity();
        assert_eq!(t.retarget_anchor(Vec3::zeros(), 0.0, 0.0), Err(FrameError::InvalidScale(0.0)));
        assert!(t.retarget_anchor(Vec3::zeros(), 0.0, -1.0).is_err());
        assert!(MapFrameTransform::new(f64::NAN, 0.0, Vec3::zeros()).is_err());
    }

    #[test]
    fn yaw_is_normalized() {
        let t = MapFrameTransform::new(1.0, 3.0 * std::f64::consts::PI, Vec3::zeros()).unwrap();
        assert!(t.yaw() > -std::f64::consts::PI && t.yaw() <= std::f64::consts::PI);
    }

    fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn reanchor_scales_pairwise_distances(a in vec3(10.0), b in vec3(10.0), s in 0.01f64..5.0, yaw in -4.0f64..4.0, o in vec3(3.0)) {
            let t = MapFrameTransform::identity().retarget_anchor(o, yaw, s).unwrap();
            let d_map = (a - b).norm();
            let d_world = (t.map_to_world(&a) - t.map_to_world(&b)).norm();
            prop_assert!((d_world - s * d_map).abs() < 1e-9 * (1.0 + d_map));
        }

        #[test]
        fn yaw_change_preserves_heights(p in vec3(10.0), yaw1 in -4.0f64..4.0, yaw2 in -4.0f64..4.0, o in vec3(3.0), s in 0.01f64..5.0) {
            let t1 = MapFrameTransform::new(s, yaw1, o).unwrap();
            let t2 = t1.retarget_anchor(o, yaw2, s).unwrap();
            let z1 = t1.map_to_world(&p).z - o.z;
            let z2 = t2.map_to_world(&p).z - o.z;
            prop_assert!((z1 - z2).abs() < 1e-12);
        }
    }
}
