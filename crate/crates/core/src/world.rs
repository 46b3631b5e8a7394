//! Ground-truth world description and the simulated depth sensor.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Aabb, Vec3};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot read world file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse world file: {0}")]
    Parse(String),
    #[error("invalid world: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<BoxSpec> for Aabb {
    fn from(b: BoxSpec) -> Self {
        Aabb::from_arrays(b.min, b.max)
    }
}

impl From<&Aabb> for BoxSpec {
    fn from(b: &Aabb) -> Self {
        Self {
            min: b.min.into(),
            max: b.max.into(),
        }
    }
}

/// On-disk world document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub bounds: BoxSpec,
    #[serde(default)]
    pub obstacles: Vec<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub bounds: Aabb,
    pub obstacles: Vec<Aabb>,
    pub resolution: f64,
    pub start: Vec3,
}

impl WorldModel {
    pub fn new(bounds: Aabb, obstacles: Vec<Aabb>, resolution: f64, start: Vec3) -> Result<Self, WorldError> {
        if !bounds.is_well_formed() || bounds.volume() <= 0.0 {
            return Err(WorldError::Invalid("bounds must have positive volume".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::Invalid(format!("resolution must be positive, got {resolution}")));
        }
        for (i, o) in obstacles.iter().enumerate() {
            if !o.is_well_formed() {
                return Err(WorldError::Invalid(format!("obstacle {i} has min > max or non-finite corners")));
            }
            if !o.intersects(&bounds) {
                return Err(WorldError::Invalid(format!("obstacle {i} does not intersect the world bounds")));
            }
        }
        let world = Self {
            bounds,
            obstacles,
            resolution,
            start,
        };
        if !bounds.contains(&start) {
            return Err(WorldError::Invalid("start lies outside the world bounds".into()));
        }
        if world.clearance(&start) <= 0.0 {
            return Err(WorldError::Invalid("start lies inside an obstacle".into()));
        }
        Ok(world)
    }

    pub fn from_file_doc(doc: WorldFile) -> Result<Self, WorldError> {
        let bounds: Aabb = doc.bounds.into();
        let start = doc.start.map(Vec3::from).unwrap_or_else(|| {
            let c = bounds.center();
            Vec3::new(bounds.min.x + 0.6, bounds.min.y + 0.6, c.z)
        });
        Self::new(
            bounds,
            doc.obstacles.into_iter().map(Aabb::from).collect(),
            doc.resolution.unwrap_or(crate::occupancy::DEFAULT_RESOLUTION),
            start,
        )
    }

    pub fn to_file_doc(&self) -> WorldFile {
        WorldFile {
            bounds: (&self.bounds).into(),
            obstacles: self.obstacles.iter().map(BoxSpec::from).collect(),
            resolution: Some(self.resolution),
            start: Some(self.start.into()),
        }
    }

    /// Parses JSON, or YAML when the text does not look like JSON.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let doc: WorldFile = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?
        } else {
            serde_yaml::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?
        };
        Self::from_file_doc(doc)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Distance from `p` to the nearest obstacle box.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn in_bounds(&self, p: &Vec3) -> bool {
        self.bounds.contains(p)
    }

    /// Nearest obstacle hit along a unit ray, if closer than `max_range`.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<f64> {
        self.obstacles
            .iter()
            .filter_map(|o| o.ray_entry(origin, dir))
            .filter(|&t| t < max_range)
            .min_by(f64::total_cmp)
    }

    /// The 5 x 6 x 3 m enclosed room used for reference missions.
    pub fn reference() -> Self {
        let b = |min: [f64; 3], max: [f64; 3]| Aabb::from_arrays(min, max);
        let obstacles = vec![
            // enclosure
            b([-0.2, -0.2, -0.2], [5.2, 6.2, 0.0]),
            b([-0.2, -0.2, 3.0], [5.2, 6.2, 3.2]),
            b([-0.2, -0.2, 0.0], [0.0, 6.2, 3.0]),
            b([5.0, -0.2, 0.0], [5.2, 6.2, 3.0]),
            b([0.0, -0.2, 0.0], [5.0, 0.0, 3.0]),
            b([0.0, 6.0, 0.0], [5.0, 6.2, 3.0]),
            // furniture
            b([1.2, 1.6, 0.0], [1.8, 2.2, 3.0]),
            b([3.2, 3.6, 0.0], [3.9, 4.3, 3.0]),
            b([2.6, 0.9, 0.0], [3.6, 1.8, 0.8]),
            b([0.4, 4.4, 0.0], [1.4, 5.4, 1.6]),
            b([3.8, 1.0, 1.9], [4.6, 2.4, 2.3]),
        ];
        Self::new(
            b([0.0, 0.0, 0.0], [5.0, 6.0, 3.0]),
            obstacles,
            0.1,
            Vec3::new(0.6, 0.6, 1.2),
        )
        .expect("reference world is valid")
    }

    /// Random axis-aligned clutter inside `bounds`; the start is moved to a clear spot.
    pub fn random<R: Rng>(rng: &mut R, bounds: Aabb, count: usize, resolution: f64, start_clearance: f64) -> Self {
        let size = bounds.size();
        let mut obstacles = Vec::with_capacity(count);
        for _ in 0..count {
            let extent: [f64; 3] = std::array::from_fn(|i| rng.gen_range(0.1..0.45) * size[i]);
            let min: [f64; 3] = std::array::from_fn(|i| bounds.min[i] + rng.gen_range(0.0..(size[i] - extent[i])));
            let max: [f64; 3] = std::array::from_fn(|i| min[i] + extent[i]);
            obstacles.push(Aabb::from_arrays(min, max));
        }
        let clear = |p: &Vec3| obstacles.iter().map(|o| o.distance_to(p)).fold(f64::INFINITY, f64::min);
        let mut start = bounds.center();
        for _ in 0..1000 {
            let p = Vec3::from_fn(|i, _| bounds.min[i] + rng.gen_range(0.1..0.9) * size[i]);
            if clear(&p) > start_clearance {
                start = p;
                break;
            }
        }
        if clear(&start) <= 0.0 {
            obstacles.clear();
        }
        Self::new(bounds, obstacles, resolution, start).expect("generated world is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DronePose {
    pub position: Vec3,
    /// Radians, in (-pi, pi].
    pub yaw: f64,
    /// Simulation clock, seconds.
    pub timestamp: f64,
}

impl Default for DronePose {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            yaw: 0.0,
            timestamp: 0.0,
        }
    }
}

impl DronePose {
    pub fn new(position: Vec3, yaw: f64, timestamp: f64) -> Self {
        Self {
            position,
            yaw: normalize_angle(yaw),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthHit {
    pub direction: Vec3,
    /// Equal to the scan's `max_range` when nothing was hit.
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthScan {
    pub origin: Vec3,
    pub max_range: f64,
    pub hits: Vec<DepthHit>,
}

impl DepthScan {
    pub fn is_hit(&self, hit: &DepthHit) -> bool {
        hit.range < self.max_range
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub horizontal_rays: usize,
    pub vertical_rays: usize,
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub max_range: f64,
    pub rate_hz: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            horizontal_rays: 64,
            vertical_rays: 16,
            horizontal_fov: PI / 2.0,
            vertical_fov: PI / 3.0,
            max_range: 4.0,
            rate_hz: 10.0,
        }
    }
}

impl SensorConfig {
    /// Unit ray directions for a drone facing `yaw`.
    pub fn directions(&self, yaw: f64) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.horizontal_rays * self.vertical_rays);
        for j in 0..self.vertical_rays {
            let el = -self.vertical_fov / 2.0 + (j as f64 + 0.5) * self.vertical_fov / self.vertical_rays as f64;
            for i in 0..self.horizontal_rays {
                let az = yaw - self.horizontal_fov / 2.0
                    + (i as f64 + 0.5) * self.horizontal_fov / self.horizontal_rays as f64;
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()).normalize());
            }
        }
        out
    }
}

/// Casts the sensor fan from `pose` into `world`.
pub fn sense(world: &WorldModel, sensor: &SensorConfig, pose: &DronePose) -> DepthScan {
    let hits = sensor
        .directions(pose.yaw)
        .into_iter()
        .map(|direction| {
            let range = world
                .raycast(&pose.position, &direction, sensor.max_range)
                .map(|t| t.max(f64::MIN_POSITIVE))
                .unwrap_or(sensor.max_range);
            DepthHit { direction, range }
        })
        .collect();
    DepthScan {
        origin: pose.position,
        max_range: sensor.max_range,
        hits,
    }
}
