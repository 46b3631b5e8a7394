//! Grid A* over the distance field followed by shortcut and corner-cut smoothing.
//!
//! A voxel is traversable when it is known free and its ESDF value is at least the
//! requested clearance plus a discretization margin of `(sqrt(3) - 1/2) * resolution`.
//! The margin covers the gap between center-to-center ESDF values and the continuous
//! distance from any point in the voxel to the true obstacle surface, so every point
//! of a returned path is at least `clearance - resolution / 2` away from the boxes that
//! produced the occupied voxels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::esdf::{EsdfGrid, IndexBox};
use crate::geometry::Vec3;
use crate::occupancy::{traverse, CellState, OccupancyGrid, VoxelCoord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no path within known free space")]
    Unreachable,
    #[error("goal lies in unknown space and no known free voxel is closer to it")]
    GoalUnknown,
    #[error("start {0:?} lies outside the planning region")]
    StartOutsideRegion(VoxelCoord),
}

/// Source of per-voxel knowledge for the planner.
pub trait FreeSpace {
    fn state(&self, v: &VoxelCoord) -> CellState;
}

/// Every voxel is known; obstacles come from the ESDF alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullyKnown;

impl FreeSpace for FullyKnown {
    fn state(&self, _: &VoxelCoord) -> CellState {
        CellState::Free
    }
}

impl FreeSpace for OccupancyGrid {
    fn state(&self, v: &VoxelCoord) -> CellState {
        self.classify(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Weight of the soft repulsion term.
    pub lambda: f64,
    pub clearance_soft: f64,
    /// Cruise speed used for timestamps.
    pub speed: f64,
    pub smoothing_rounds: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            clearance_soft: 0.6,
            speed: 1.0,
            smoothing_rounds: 2,
        }
    }
}

pub struct PlanRequest<'a> {
    pub start: Vec3,
    pub goal: Vec3,
    pub clearance: f64,
    pub esdf: &'a EsdfGrid,
    pub free_space: &'a dyn FreeSpace,
    pub params: PlannerParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Vec3>,
    pub timestamps: Vec<f64>,
    pub length: f64,
}

impl Trajectory {
    /// Constant-speed parametrization; coincident consecutive points are merged.
    pub fn from_waypoints(points: Vec<Vec3>, speed: f64) -> Self {
        let mut waypoints: Vec<Vec3> = Vec::with_capacity(points.len());
        for p in points {
            if waypoints.last().is_none_or(|q| (p - q).norm() > 1e-12) {
                waypoints.push(p);
            }
        }
        let mut timestamps = Vec::with_capacity(waypoints.len());
        let mut length = 0.0;
        for (i, p) in waypoints.iter().enumerate() {
            if i > 0 {
                length += (p - waypoints[i - 1]).norm();
            }
            timestamps.push(length / speed);
        }
        Self {
            waypoints,
            timestamps,
            length,
        }
    }

    pub fn start(&self) -> Option<&Vec3> {
        self.waypoints.first()
    }

    pub fn end(&self) -> Option<&Vec3> {
        self.waypoints.last()
    }

    pub fn duration(&self) -> f64 {
        self.timestamps.last().copied().unwrap_or(0.0)
    }

    /// Points along the path no more than `spacing` apart, endpoints included.
    pub fn dense_samples(&self, spacing: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        if let Some(first) = self.waypoints.first() {
            out.push(*first);
        }
        for w in self.waypoints.windows(2) {
            let n = ((w[1] - w[0]).norm() / spacing).ceil().max(1.0) as usize;
            for i in 1..=n {
                out.push(w[0] + (w[1] - w[0]) * (i as f64 / n as f64));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// Trajectory ends at the requested goal.
    Goal,
    /// Goal is in unknown space; trajectory ends at the reachable known-free voxel nearest to it.
    FrontierHop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub kind: PlanKind,
}

/// ESDF threshold actually enforced for a requested clearance.
pub fn effective_clearance(clearance: f64, resolution: f64) -> f64 {
    clearance + (3f64.sqrt() - 0.5) * resolution
}

/// Dense traversability over the ESDF region.
struct SearchSpace<'a> {
    region: IndexBox,
    esdf: &'a EsdfGrid,
    free: Vec<bool>,
    resolution: f64,
}

impl<'a> SearchSpace<'a> {
    fn new(esdf: &'a EsdfGrid, free_space: &dyn FreeSpace, clearance: f64) -> Self {
        let region = *esdf.region();
        let threshold = effective_clearance(clearance, esdf.resolution());
        let free = region
            .iter()
            .zip(esdf.distances())
            .map(|(v, &d)| d >= threshold && free_space.state(&v) == CellState::Free)
            .collect();
        Self {
            region,
            esdf,
            free,
            resolution: esdf.resolution(),
        }
    }

    fn ok(&self, v: &VoxelCoord) -> bool {
        self.region.index_of(v).is_some_and(|i| self.free[i])
    }

    /// A move is allowed only if every voxel in the move's bounding box is traversable,
    /// so the straight segment never clips an untraversable edge or corner.
    fn move_allowed(&self, from: &VoxelCoord, d: [i32; 3]) -> bool {
        for mx in 0..=d[0].abs() {
            for my in 0..=d[1].abs() {
                for mz in 0..=d[2].abs() {
                    if mx == 0 && my == 0 && mz == 0 {
                        continue;
                    }
                    let v = from.offset(mx * d[0].signum(), my * d[1].signum(), mz * d[2].signum());
                    if !self.ok(&v) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Every voxel the segment intersects is traversable, except voxels equal to `exempt`.
    fn segment_ok(&self, a: &Vec3, b: &Vec3, exempt: Option<VoxelCoord>) -> bool {
        traverse(a, b, self.resolution)
            .iter()
            .all(|v| Some(*v) == exempt || self.ok(v))
    }
}

#[derive(Clone, Copy)]
struct Open {
    f: f64,
    h: f64,
    voxel: VoxelCoord,
    index: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.voxel.cmp(&self.voxel))
    }
}

pub(crate) const NEIGHBORS: [[i32; 3]; 26] = {
    let mut out = [[0; 3]; 26];
    let mut n = 0;
    let mut dx = -1;
    while dx <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dz = -1;
            while dz <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dz += 1;
            }
            dy += 1;
        }
        dx += 1;
    }
    out
};

struct SearchResult {
    parent: Vec<usize>,
    g: Vec<f64>,
    closed: Vec<bool>,
    reached: Option<usize>,
}

/// Best-first search from `start`. With `goal = None` it runs as plain Dijkstra over
/// the whole reachable set.
fn search(space: &SearchSpace, params: &PlannerParams, start: VoxelCoord, goal: Option<VoxelCoord>) -> SearchResult {
    let n = space.region.volume();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let res = space.resolution;
    let heuristic = |v: &VoxelCoord| match goal {
        Some(goal) => (v.center(res) - goal.center(res)).norm(),
        None => 0.0,
    };

    let start_index = space.region.index_of(&start).expect("start inside region");
    g[start_index] = 0.0;
    let mut open = BinaryHeap::new();
    let h0 = heuristic(&start);
    open.push(Open {
        f: h0,
        h: h0,
        voxel: start,
        index: start_index,
    });

    let mut reached = None;
    while let Some(Open { voxel, index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if Some(voxel) == goal {
            reached = Some(index);
            break;
        }
        for d in NEIGHBORS {
            let next = voxel.offset(d[0], d[1], d[2]);
            let Some(next_index) = space.region.index_of(&next) else {
                continue;
            };
            if closed[next_index] || !space.free[next_index] || !space.move_allowed(&voxel, d) {
                continue;
            }
            let step = res * ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt();
            let esdf = space.esdf.distances()[next_index];
            let penalty = params.lambda * (params.clearance_soft - esdf).max(0.0) * step;
            let candidate = g[index] + step + penalty;
            if candidate < g[next_index] {
                g[next_index] = candidate;
                parent[next_index] = index;
                let h = heuristic(&next);
                open.push(Open {
                    f: candidate + h,
                    h,
                    voxel: next,
                    index: next_index,
                });
            }
        }
    }
    SearchResult {
        parent,
        g,
        closed,
        reached,
    }
}

fn unwind(space: &SearchSpace, parent: &[usize], mut index: usize) -> Vec<VoxelCoord> {
    let mut path = vec![space.region.coord_of(index)];
    while parent[index] != usize::MAX {
        index = parent[index];
        path.push(space.region.coord_of(index));
    }
    path.reverse();
    path
}

/// Search cost of the path found for `req`, for comparison against other solvers.
pub fn path_cost(req: &PlanRequest) -> Option<f64> {
    let space = SearchSpace::new(req.esdf, req.free_space, req.clearance);
    let res = req.esdf.resolution();
    let start = VoxelCoord::containing(&req.start, res);
    let goal = VoxelCoord::containing(&req.goal, res);
    if space.region.index_of(&start).is_none() || !space.ok(&goal) {
        return None;
    }
    let result = search(&space, &req.params, start, Some(goal));
    result.reached.map(|i| result.g[i])
}

/// Plans from `req.start` to `req.goal` and smooths the result.
pub fn plan(req: &PlanRequest) -> Result<Plan, PlanError> {
    let raw = plan_raw(req)?;
    let trajectory = smooth_in(&raw.trajectory, req.esdf, req.clearance, req.free_space, &req.params, &req.start);
    Ok(Plan {
        trajectory,
        kind: raw.kind,
    })
}

/// Grid search only: waypoints are the start point, the voxel centers of the path,
/// and (for a goal plan) the goal point.
pub fn plan_raw(req: &PlanRequest) -> Result<Plan, PlanError> {
    let res = req.esdf.resolution();
    let start = VoxelCoord::containing(&req.start, res);
    let goal = VoxelCoord::containing(&req.goal, res);
    let space = SearchSpace::new(req.esdf, req.free_space, req.clearance);
    if space.region.index_of(&start).is_none() {
        return Err(PlanError::StartOutsideRegion(start));
    }
    let speed = req.params.speed;

    if start == goal {
        let points = vec![req.start, req.goal];
        return Ok(Plan {
            trajectory: Trajectory::from_waypoints(points, speed),
            kind: PlanKind::Goal,
        });
    }

    let goal_known = space.region.contains(&goal) && req.free_space.state(&goal) != CellState::Unknown;
    if goal_known {
        if !space.ok(&goal) {
            return Err(PlanError::Unreachable);
        }
        let result = search(&space, &req.params, start, Some(goal));
        let Some(end) = result.reached else {
            return Err(PlanError::Unreachable);
        };
        let mut points = vec![req.start];
        points.extend(unwind(&space, &result.parent, end).iter().map(|v| v.center(res)));
        points.push(req.goal);
        return Ok(Plan {
            trajectory: Trajectory::from_waypoints(points, speed),
            kind: PlanKind::Goal,
        });
    }

    // Frontier hop: reachable known-free voxel closest to the goal.
    let result = search(&space, &req.params, start, None);
    let mut best: Option<(f64, VoxelCoord, usize)> = None;
    for (index, _) in result.closed.iter().enumerate().filter(|(_, &c)| c) {
        let v = space.region.coord_of(index);
        let d = (v.center(res) - req.goal).norm();
        let better = match best {
            None => true,
            Some((bd, bv, _)) => d < bd || (d == bd && v < bv),
        };
        if better {
            best = Some((d, v, index));
        }
    }
    let (best_d, best_v, best_index) = best.ok_or(PlanError::GoalUnknown)?;
    let start_d = (req.start - req.goal).norm();
    if best_v == start || best_d + 0.5 * res >= start_d {
        return Err(PlanError::GoalUnknown);
    }
    let mut points = vec![req.start];
    points.extend(unwind(&space, &result.parent, best_index).iter().map(|v| v.center(res)));
    Ok(Plan {
        trajectory: Trajectory::from_waypoints(points, speed),
        kind: PlanKind::FrontierHop,
    })
}

/// Nearest traversable voxel center within `radius` of `goal` (ties: lexicographic voxel order).
pub fn snap_goal(goal: &Vec3, esdf: &EsdfGrid, free_space: &dyn FreeSpace, clearance: f64, radius: f64) -> Option<Vec3> {
    let res = esdf.resolution();
    let threshold = effective_clearance(clearance, res);
    let center = VoxelCoord::containing(goal, res);
    let reach = (radius / res).ceil() as i32 + 1;
    let mut best: Option<(f64, VoxelCoord)> = None;
    for dx in -reach..=reach {
        for dy in -reach..=reach {
            for dz in -reach..=reach {
                let v = center.offset(dx, dy, dz);
                let d = (v.center(res) - goal).norm();
                if d > radius {
                    continue;
                }
                let clear = esdf.distance(&v).is_some_and(|e| e >= threshold);
                if !clear || free_space.state(&v) != CellState::Free {
                    continue;
                }
                if best.is_none_or(|(bd, bv)| d < bd || (d == bd && v < bv)) {
                    best = Some((d, v));
                }
            }
        }
    }
    best.map(|(_, v)| v.center(res))
}

/// Shortcut and corner-cut smoothing assuming every voxel is known.
pub fn smooth(traj: &Trajectory, esdf: &EsdfGrid, clearance: f64) -> Trajectory {
    let start = traj.start().copied().unwrap_or_else(Vec3::zeros);
    smooth_in(traj, esdf, clearance, &FullyKnown, &PlannerParams::default(), &start)
}

/// Smoothing that also respects voxel knowledge. The voxel containing `start` is exempt
/// from the clearance test so a drone that begins inside a tight spot can still leave it.
pub fn smooth_in(
    traj: &Trajectory,
    esdf: &EsdfGrid,
    clearance: f64,
    free_space: &dyn FreeSpace,
    params: &PlannerParams,
    start: &Vec3,
) -> Trajectory {
    if traj.waypoints.len() < 3 {
        return traj.clone();
    }
    let space = SearchSpace::new(esdf, free_space, clearance);
    let exempt = Some(VoxelCoord::containing(start, esdf.resolution()));
    let safe = |a: &Vec3, b: &Vec3| space.segment_ok(a, b, exempt);

    // Greedy shortcut: from each kept point jump to the farthest visible waypoint.
    let pts = &traj.waypoints;
    let mut kept = vec![pts[0]];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut next = i + 1;
        for j in (i + 2..pts.len()).rev() {
            if safe(&pts[i], &pts[j]) {
                next = j;
                break;
            }
        }
        kept.push(pts[next]);
        i = next;
    }

    // Corner cutting: replace a corner by two points a quarter of the way along each leg.
    for _ in 0..params.smoothing_rounds {
        if kept.len() < 3 {
            break;
        }
        let mut out = vec![kept[0]];
        for k in 1..kept.len() - 1 {
            let (a, b, c) = (*out.last().unwrap(), kept[k], kept[k + 1]);
            let q1 = b + (a - b) * 0.25;
            let q2 = b + (c - b) * 0.25;
            if safe(&q1, &q2) && safe(&a, &q1) && safe(&q2, &c) {
                out.push(q1);
                out.push(q2);
            } else {
                out.push(b);
            }
        }
        out.push(*kept.last().unwrap());
        kept = out;
    }

    let smoothed = Trajectory::from_waypoints(kept, params.speed);
    if smoothed.length <= traj.length {
        smoothed
    } else {
        traj.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esdf::build_from_voxels;

    fn open_box(n: i32) -> IndexBox {
        IndexBox::new(VoxelCoord::new(0, 0, 0), VoxelCoord::new(n - 1, n - 1, n - 1))
    }

    fn request<'a>(esdf: &'a EsdfGrid, start: Vec3, goal: Vec3) -> PlanRequest<'a> {
        PlanRequest {
            start,
            goal,
            clearance: 0.0,
            esdf,
            free_space: &FullyKnown,
            params: PlannerParams::default(),
        }
    }

    #[test]
    fn start_equals_goal_is_single_waypoint() {
        let esdf = build_from_voxels(&[], 0.1, open_box(10), 2.0, 0).unwrap();
        let p = VoxelCoord::new(3, 3, 3).center(0.1);
        let plan = plan(&request(&esdf, p, p)).unwrap();
        assert_eq!(plan.trajectory.waypoints, vec![p]);
        assert_eq!(plan.trajectory.length, 0.0);
        assert_eq!(plan.trajectory.timestamps, vec![0.0]);
    }

    #[test]
    fn open_space_corner_to_corner_is_near_straight() {
        let esdf = build_from_voxels(&[], 0.1, open_box(10), 2.0, 0).unwrap();
        let a = VoxelCoord::new(0, 0, 0).center(0.1);
        let b = VoxelCoord::new(9, 9, 9).center(0.1);
        let raw = plan_raw(&request(&esdf, a, b)).unwrap();
        let straight = (b - a).norm();
        assert!(raw.trajectory.length <= straight * 1.05, "{}", raw.trajectory.length);
        for w in raw.trajectory.waypoints.windows(2) {
            assert!((w[1] - w[0]).norm() <= 0.1 * 3f64.sqrt() + 1e-12);
        }
        assert!(raw.trajectory.timestamps.windows(2).all(|t| t[1] > t[0]));
    }

    #[test]
    fn l_shaped_path_gets_shorter() {
        let esdf = build_from_voxels(&[], 0.1, open_box(12), 2.0, 0).unwrap();
        let c = |x, y| VoxelCoord::new(x, y, 5).center(0.1);
        let mut pts: Vec<Vec3> = (1..=10).map(|x| c(x, 1)).collect();
        pts.extend((2..=10).map(|y| c(10, y)));
        let l = Trajectory::from_waypoints(pts, 1.0);
        let s = smooth(&l, &esdf, 0.0);
        assert!(s.length < l.length);
        assert!(s.length <= (c(10, 10) - c(1, 1)).norm() * 1.01);
    }

    #[test]
    fn straight_line_is_unchanged_in_length() {
        let esdf = build_from_voxels(&[], 0.1, open_box(12), 2.0, 0).unwrap();
        let pts: Vec<Vec3> = (1..=10).map(|x| VoxelCoord::new(x, 5, 5).center(0.1)).collect();
        let t = Trajectory::from_waypoints(pts, 1.0);
        let s = smooth(&t, &esdf, 0.0);
        assert!((s.length - t.length).abs() < 1e-12);
        assert_eq!(s.start(), t.start());
        assert_eq!(s.end(), t.end());
    }

    #[test]
    fn blocked_goal_is_unreachable() {
        // Wall x = 5 spanning the whole region.
        let wall: Vec<_> = open_box(10).iter().filter(|v| v.ix == 5).collect();
        let esdf = build_from_voxels(&wall, 0.1, open_box(10), 2.0, 0).unwrap();
        let a = VoxelCoord::new(1, 5, 5).center(0.1);
        let b = VoxelCoord::new(8, 5, 5).center(0.1);
        assert_eq!(plan(&request(&esdf, a, b)), Err(PlanError::Unreachable));
    }

    #[test]
    fn unknown_goal_hops_to_frontier() {
        let res = 0.1;
        let region = open_box(20);
        let esdf = build_from_voxels(&[], res, region, 2.0, 0).unwrap();
        let mut grid = OccupancyGrid::new(res);
        grid.mark_free(region.iter().filter(|v| v.ix < 10));
        let start = VoxelCoord::new(2, 10, 10).center(res);
        let goal = VoxelCoord::new(18, 10, 10).center(res);
        let req = PlanRequest {
            start,
            goal,
            clearance: 0.0,
            esdf: &esdf,
            free_space: &grid,
            params: PlannerParams::default(),
        };
        let plan = plan(&req).unwrap();
        assert_eq!(plan.kind, PlanKind::FrontierHop);
        let end = plan.trajectory.end().unwrap();
        assert_eq!(VoxelCoord::containing(end, res), VoxelCoord::new(9, 10, 10));

        // Nothing known beyond the start voxel: no progress possible.
        let mut tiny = OccupancyGrid::new(res);
        tiny.mark_free([VoxelCoord::new(2, 10, 10)]);
        let req = PlanRequest { free_space: &tiny, ..req };
        assert_eq!(plan_raw(&req), Err(PlanError::GoalUnknown));
    }

    #[test]
    fn snap_finds_nearest_clear_voxel() {
        let res = 0.1;
        let region = open_box(20);
        let block: Vec<_> = region
            .iter()
            .filter(|v| (8..=11).contains(&v.ix) && (8..=11).contains(&v.iy) && (8..=11).contains(&v.iz))
            .collect();
        let esdf = build_from_voxels(&block, res, region, 2.0, 0).unwrap();
        let goal = VoxelCoord::new(10, 10, 10).center(res);
        let snapped = snap_goal(&goal, &esdf, &FullyKnown, 0.0, 0.6).unwrap();
        let thr = effective_clearance(0.0, res);
        assert!(esdf.distance_at(&snapped).unwrap() >= thr);
        // Brute force over the whole region.
        let best = region
            .iter()
            .filter(|v| esdf.distance(v).unwrap() >= thr)
            .map(|v| (v.center(res) - goal).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(((snapped - goal).norm() - best).abs() < 1e-12);
        assert!(snap_goal(&goal, &esdf, &FullyKnown, 0.0, 0.15).is_none());
    }
}
