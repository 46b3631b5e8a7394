//! Sparse log-odds occupancy grid updated by raycasting depth scans.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Vec3};
use crate::world::{DepthScan, DronePose};

pub const DEFAULT_RESOLUTION: f64 = 0.1;

/// Integer voxel index. The resolution is a property of the owning grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelCoord {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    /// Voxel containing `p` (floor semantics on every axis).
    pub fn containing(p: &Vec3, resolution: f64) -> Self {
        Self::new(
            (p.x / resolution).floor() as i32,
            (p.y / resolution).floor() as i32,
            (p.z / resolution).floor() as i32,
        )
    }

    pub fn center(&self, resolution: f64) -> Vec3 {
        Vec3::new(
            (self.ix as f64 + 0.5) * resolution,
            (self.iy as f64 + 0.5) * resolution,
            (self.iz as f64 + 0.5) * resolution,
        )
    }

    pub fn as_array(&self) -> [i32; 3] {
        [self.ix, self.iy, self.iz]
    }

    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> Self {
        Self::new(self.ix + dx, self.iy + dy, self.iz + dz)
    }

    pub fn axis(&self, axis: usize) -> i32 {
        match axis {
            0 => self.ix,
            1 => self.iy,
            _ => self.iz,
        }
    }

    fn axis_mut(&mut self, axis: usize) -> &mut i32 {
        match axis {
            0 => &mut self.ix,
            1 => &mut self.iy,
            _ => &mut self.iz,
        }
    }
}

impl From<[i32; 3]> for VoxelCoord {
    fn from(a: [i32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Log-odds update model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOddsParams {
    pub hit: f64,
    pub miss: f64,
    pub min: f64,
    pub max: f64,
    pub occupied_threshold: f64,
    pub free_threshold: f64,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        Self {
            hit: 0.85,
            miss: -0.4,
            min: -3.5,
            max: 3.5,
            occupied_threshold: 0.0,
            free_threshold: -0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// Voxels visited by the segment `start -> end`, in traversal order.
///
/// Incremental voxel stepping: the first voxel contains `start`, the last contains
/// `end`, and each step crosses exactly one face. When the segment crosses an edge or
/// corner exactly, the lower axis (x, then y, then z) is stepped first.
pub fn traverse(start: &Vec3, end: &Vec3, resolution: f64) -> Vec<VoxelCoord> {
    let a = start / resolution;
    let b = end / resolution;
    let mut cur = VoxelCoord::new(a.x.floor() as i32, a.y.floor() as i32, a.z.floor() as i32);
    let last = VoxelCoord::new(b.x.floor() as i32, b.y.floor() as i32, b.z.floor() as i32);

    let mut step = [0i32; 3];
    let mut remaining = [0u32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for axis in 0..3 {
        let d = b[axis] - a[axis];
        let from = cur.axis(axis);
        let to = last.axis(axis);
        remaining[axis] = from.abs_diff(to);
        if remaining[axis] == 0 {
            continue;
        }
        step[axis] = if to > from { 1 } else { -1 };
        t_delta[axis] = 1.0 / d.abs();
        let boundary = if step[axis] > 0 { from as f64 + 1.0 } else { from as f64 };
        t_max[axis] = (boundary - a[axis]) / d;
    }

    let total: u32 = remaining.iter().sum();
    let mut out = Vec::with_capacity(total as usize + 1);
    out.push(cur);
    for _ in 0..total {
        let mut axis = usize::MAX;
        for candidate in 0..3 {
            if remaining[candidate] == 0 {
                continue;
            }
            if axis == usize::MAX || t_max[candidate] < t_max[axis] {
                axis = candidate;
            }
        }
        *cur.axis_mut(axis) += step[axis];
        remaining[axis] -= 1;
        t_max[axis] += t_delta[axis];
        out.push(cur);
    }
    debug_assert_eq!(cur, last);
    out
}

/// All voxels whose cell overlaps the closed box. Degenerate extents still yield one layer.
pub fn voxelize_box(aabb: &Aabb, resolution: f64) -> impl Iterator<Item = VoxelCoord> {
    // The epsilon absorbs decimal-meter representation error (0.3 / 0.1 != 3).
    let lo: [i32; 3] = std::array::from_fn(|i| (aabb.min[i] / resolution + 1e-9).floor() as i32);
    let hi: [i32; 3] = std::array::from_fn(|i| {
        let upper = (aabb.max[i] / resolution - 1e-9).ceil() as i32 - 1;
        upper.max(lo[i])
    });
    (lo[0]..=hi[0]).flat_map(move |x| {
        (lo[1]..=hi[1]).flat_map(move |y| (lo[2]..=hi[2]).map(move |z| VoxelCoord::new(x, y, z)))
    })
}

/// Immutable copy of the occupied voxels at one revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelSnapshot {
    pub resolution: f64,
    /// Sorted, unique.
    pub voxels: Vec<VoxelCoord>,
    pub revision: u64,
    pub pose: DronePose,
}

impl VoxelSnapshot {
    pub fn empty(resolution: f64) -> Self {
        Self {
            resolution,
            voxels: Vec::new(),
            revision: 0,
            pose: DronePose::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    resolution: f64,
    params: LogOddsParams,
    cells: HashMap<VoxelCoord, f64>,
    revision: u64,
    last_pose: DronePose,
}

impl OccupancyGrid {
    pub fn new(resolution: f64) -> Self {
        Self::with_params(resolution, LogOddsParams::default())
    }

    pub fn with_params(resolution: f64, params: LogOddsParams) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        assert!(params.free_threshold < params.occupied_threshold);
        Self {
            resolution,
            params,
            cells: HashMap::new(),
            revision: 0,
            last_pose: DronePose::default(),
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn params(&self) -> &LogOddsParams {
        &self.params
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Number of touched voxels.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn log_odds(&self, v: &VoxelCoord) -> Option<f64> {
        self.cells.get(v).copied()
    }

    pub fn classify(&self, v: &VoxelCoord) -> CellState {
        match self.cells.get(v) {
            None => CellState::Unknown,
            Some(&l) if l >= self.params.occupied_threshold => CellState::Occupied,
            Some(&l) if l <= self.params.free_threshold => CellState::Free,
            Some(_) => CellState::Unknown,
        }
    }

    pub fn is_free(&self, v: &VoxelCoord) -> bool {
        self.classify(v) == CellState::Free
    }

    pub fn is_touched(&self, v: &VoxelCoord) -> bool {
        self.cells.contains_key(v)
    }

    pub fn touched(&self) -> impl Iterator<Item = (&VoxelCoord, &f64)> {
        self.cells.iter()
    }

    /// Raycasts every ray of `scan` and applies one update per voxel: hit voxels
    /// are incremented, voxels traversed before a hit (or along a max-range ray)
    /// are decremented. A voxel that is both hit and traversed counts as hit.
    pub fn integrate_scan(&mut self, scan: &DepthScan, pose: &DronePose) -> u64 {
        debug_assert!((scan.origin - pose.position).norm() < 1e-9);
        let mut free = HashSet::new();
        let mut hits = HashSet::new();
        for ray in &scan.hits {
            let end = scan.origin + ray.direction * ray.range;
            let mut visited = traverse(&scan.origin, &end, self.resolution);
            if ray.range < scan.max_range {
                if let Some(hit) = visited.pop() {
                    hits.insert(hit);
                }
            }
            free.extend(visited);
        }
        for v in &free {
            if !hits.contains(v) {
                self.update(*v, self.params.miss);
            }
        }
        for v in hits {
            self.update(v, self.params.hit);
        }
        self.last_pose = *pose;
        self.revision += 1;
        self.revision
    }

    /// Marks every voxel of `voxels` as hit once; used to seed priors in tests and tools.
    pub fn mark_occupied<I: IntoIterator<Item = VoxelCoord>>(&mut self, voxels: I) -> u64 {
        for v in voxels {
            self.update(v, self.params.hit);
        }
        self.revision += 1;
        self.revision
    }

    /// Marks every voxel of `voxels` as traversed once.
    pub fn mark_free<I: IntoIterator<Item = VoxelCoord>>(&mut self, voxels: I) -> u64 {
        for v in voxels {
            self.update(v, self.params.miss);
        }
        self.revision += 1;
        self.revision
    }

    fn update(&mut self, v: VoxelCoord, delta: f64) {
        let cell = self.cells.entry(v).or_insert(0.0);
        *cell = (*cell + delta).clamp(self.params.min, self.params.max);
    }

    pub fn occupied_voxels(&self) -> Vec<VoxelCoord> {
        let mut out: Vec<VoxelCoord> = self
            .cells
            .iter()
            .filter(|(_, &l)| l >= self.params.occupied_threshold)
            .map(|(v, _)| *v)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn snapshot(&self) -> VoxelSnapshot {
        VoxelSnapshot {
            resolution: self.resolution,
            voxels: self.occupied_voxels(),
            revision: self.revision,
            pose: self.last_pose,
        }
    }
}

pub type Rgb = [f64; 3];

/// Ground color of the height gradient.
pub const GRADIENT_LOW: Rgb = [0.0, 0.0, 1.0];
/// Top color of the height gradient.
pub const GRADIENT_HIGH: Rgb = [1.0, 0.0, 0.0];

/// Linear blue-to-red gradient on the voxel center height, clamped to `[z_min, z_max]`.
pub fn height_color(v: &VoxelCoord, resolution: f64, z_min: f64, z_max: f64) -> Rgb {
    debug_assert!(z_min < z_max);
    let z = v.center(resolution).z.clamp(z_min, z_max);
    let t = (z - z_min) / (z_max - z_min);
    std::array::from_fn(|i| GRADIENT_LOW[i] + t * (GRADIENT_HIGH[i] - GRADIENT_LOW[i]))
}

/// 8-bit variant used for mesh vertex colors.
pub fn height_color_u8(v: &VoxelCoord, resolution: f64, z_min: f64, z_max: f64) -> [u8; 3] {
    height_color(v, resolution, z_min, z_max).map(|c| (c * 255.0).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::DepthHit;

    fn scan_one(origin: Vec3, dir: Vec3, range: f64, max_range: f64) -> DepthScan {
        DepthScan {
            origin,
            max_range,
            hits: vec![DepthHit {
                direction: dir.normalize(),
                range,
            }],
        }
    }

    fn pose_at(p: Vec3) -> DronePose {
        DronePose {
            position: p,
            ..DronePose::default()
        }
    }

    #[test]
    fn axis_aligned_hit() {
        let mut grid = OccupancyGrid::new(0.1);
        let scan = scan_one(Vec3::zeros(), Vec3::x(), 0.35, 4.0);
        grid.integrate_scan(&scan, &pose_at(Vec3::zeros()));
        let p = *grid.params();
        for ix in 0..3 {
            assert_eq!(grid.log_odds(&VoxelCoord::new(ix, 0, 0)), Some(p.miss));
        }
        assert_eq!(grid.log_odds(&VoxelCoord::new(3, 0, 0)), Some(p.hit));
        assert_eq!(grid.len(), 4);
    }

    #[test]
    fn max_range_ray_only_decrements() {
        let mut grid = OccupancyGrid::new(0.1);
        let scan = scan_one(Vec3::new(0.05, 0.05, 0.05), Vec3::y(), 4.0, 4.0);
        grid.integrate_scan(&scan, &pose_at(scan.origin));
        assert!(grid.touched().all(|(_, &l)| l < 0.0));
        assert_eq!(grid.len(), 41);
        assert!(grid.snapshot().is_empty());
    }

    #[test]
    fn fresh_snapshot_is_empty() {
        let grid = OccupancyGrid::new(0.1);
        let snap = grid.snapshot();
        assert!(snap.voxels.is_empty());
        assert_eq!(snap.revision, 0);
    }

    #[test]
    fn single_hit_crosses_threshold() {
        let mut grid = OccupancyGrid::new(0.1);
        // Origin and hit in the same voxel: nothing traversed before the hit.
        let scan = scan_one(Vec3::new(0.01, 0.01, 0.01), Vec3::x(), 0.05, 4.0);
        grid.integrate_scan(&scan, &pose_at(scan.origin));
        let snap = grid.snapshot();
        assert_eq!(snap.voxels, vec![VoxelCoord::new(0, 0, 0)]);
        assert_eq!(snap.revision, 1);
    }

    #[test]
    fn log_odds_stay_clamped() {
        let mut grid = OccupancyGrid::new(0.1);
        let scan = scan_one(Vec3::new(0.05, 0.05, 0.05), Vec3::x(), 0.5, 4.0);
        for _ in 0..50 {
            grid.integrate_scan(&scan, &pose_at(scan.origin));
        }
        let p = *grid.params();
        for (_, &l) in grid.touched() {
            assert!(l >= p.min && l <= p.max);
        }
        assert_eq!(grid.log_odds(&VoxelCoord::new(5, 0, 0)), Some(p.max));
        assert_eq!(grid.log_odds(&VoxelCoord::new(0, 0, 0)), Some(p.min));
        assert_eq!(grid.revision(), 50);
    }

    #[test]
    fn classification_thresholds() {
        let mut grid = OccupancyGrid::new(0.1);
        let v = VoxelCoord::new(1, 2, 3);
        assert_eq!(grid.classify(&v), CellState::Unknown);
        grid.mark_free([v]);
        assert_eq!(grid.classify(&v), CellState::Free);
        grid.mark_occupied([v]);
        // -0.4 + 0.85 = 0.45 >= 0.0
        assert_eq!(grid.classify(&v), CellState::Occupied);
        grid.mark_free([v]);
        // 0.05 is still >= 0.0
        assert_eq!(grid.classify(&v), CellState::Occupied);
        grid.mark_free([v]);
        // -0.35 <= -0.2
        assert_eq!(grid.classify(&v), CellState::Free);
    }

    #[test]
    fn traverse_negative_direction_and_same_voxel() {
        let r = 0.1;
        let path = traverse(&Vec3::new(0.05, 0.05, 0.05), &Vec3::new(-0.25, 0.05, 0.05), r);
        let xs: Vec<i32> = path.iter().map(|v| v.ix).collect();
        assert_eq!(xs, vec![0, -1, -2, -3]);
        let single = traverse(&Vec3::new(0.01, 0.02, 0.03), &Vec3::new(0.02, 0.03, 0.04), r);
        assert_eq!(single, vec![VoxelCoord::new(0, 0, 0)]);
    }

    #[test]
    fn traverse_exact_diagonal_steps_lower_axis_first() {
        let path = traverse(&Vec3::new(0.05, 0.05, 0.0), &Vec3::new(0.15, 0.15, 0.0), 0.1);
        assert_eq!(
            path,
            vec![VoxelCoord::new(0, 0, 0), VoxelCoord::new(1, 0, 0), VoxelCoord::new(1, 1, 0)]
        );
    }

    #[test]
    fn height_color_endpoints_and_midpoint() {
        let r = 0.1;
        let low = VoxelCoord::new(0, 0, 0); // center z = 0.05
        let high = VoxelCoord::new(0, 0, 9); // center z = 0.95
        assert_eq!(height_color(&low, r, 0.05, 0.95), GRADIENT_LOW);
        assert_eq!(height_color(&high, r, 0.05, 0.95), GRADIENT_HIGH);
        let mid = VoxelCoord::new(0, 0, 4); // center z = 0.45
        let c = height_color(&mid, r, 0.05, 0.85);
        for i in 0..3 {
            let expected = 0.5 * (GRADIENT_LOW[i] + GRADIENT_HIGH[i]);
            assert!((c[i] - expected).abs() < 1e-12);
        }
        // clamping
        assert_eq!(height_color(&VoxelCoord::new(0, 0, -40), r, 0.0, 1.0), GRADIENT_LOW);
        assert_eq!(height_color(&VoxelCoord::new(0, 0, 40), r, 0.0, 1.0), GRADIENT_HIGH);
    }

    #[test]
    fn voxelize_aligned_box() {
        let b = Aabb::from_arrays([0.0, 0.0, 0.0], [0.2, 0.1, 0.3]);
        let vs: Vec<_> = voxelize_box(&b, 0.1).collect();
        assert_eq!(vs.len(), 2 * 3);
    }
}
