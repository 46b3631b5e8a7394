//! Shared geometric primitives: vectors, axis-aligned boxes and ray/box tests.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Right-handed, Z-up, meters.
pub type Vec3 = Vector3<f64>;

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: impl Into<Vec3>, max: impl Into<Vec3>) -> Self {
        Self {
            min: min.into(),
            max: max.into(),
        }
    }

    pub fn from_arrays(min: [f64; 3], max: [f64; 3]) -> Self {
        Self::new(Vec3::from(min), Vec3::from(max))
    }

    pub fn is_well_formed(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Closed containment.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Closed-set intersection test.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    /// Euclidean distance from `p` to the box; zero inside.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let mut sq = 0.0;
        for i in 0..3 {
            let d = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            sq += d * d;
        }
        sq.sqrt()
    }

    /// Slab test. Returns the entry parameter `t >= 0` along `origin + t * dir`,
    /// or `None` when the ray misses. A ray starting inside the box hits at `t = 0`.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let mut t_near = 0.0_f64;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        Some(t_near)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Serde helper for `[x, y, z]` arrays.
pub fn vec3_from_array(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ray_entry_hits_front_face() {
        let b = Aabb::from_arrays([1.0, -1.0, -1.0], [2.0, 1.0, 1.0]);
        let t = b.ray_entry(&Vec3::zeros(), &Vec3::x()).unwrap();
        assert_eq!(t, 1.0);
        assert!(b.ray_entry(&Vec3::zeros(), &-Vec3::x()).is_none());
        assert!(b.ray_entry(&Vec3::new(0.0, 2.0, 0.0), &Vec3::x()).is_none());
    }

    #[test]
    fn ray_from_inside_hits_at_zero() {
        let b = Aabb::from_arrays([-1.0; 3], [1.0; 3]);
        assert_eq!(b.ray_entry(&Vec3::zeros(), &Vec3::y()), Some(0.0));
    }

    #[test]
    fn distance_to_box() {
        let b = Aabb::from_arrays([0.0; 3], [1.0; 3]);
        assert_eq!(b.distance_to(&Vec3::new(0.5, 0.5, 0.5)), 0.0);
        assert!((b.distance_to(&Vec3::new(2.0, 2.0, 0.5)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-9);
        assert!((normalize_angle(0.25) - 0.25).abs() < 1e-15);
        for k in -20..20 {
            let a = normalize_angle(k as f64 * 0.7);
            assert!(a > -PI && a <= PI);
        }
    }
}
