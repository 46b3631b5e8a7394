use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxbridge_core::esdf::{self, EsdfGrid, IndexBox};
use voxbridge_core::geometry::{Aabb, Vec3};
use voxbridge_core::occupancy::{OccupancyGrid, VoxelCoord};
use voxbridge_core::planner::{self, effective_clearance, FullyKnown, PlanRequest, PlannerParams};
use voxbridge_core::sim::{ground_truth_voxels, planning_region, seed_ground_truth};
use voxbridge_core::world::WorldModel;
use voxbridge_testkit as oracle;

/// Independent search graph: brute-force distances, explicit no-corner-cutting rule.
struct OracleGraph {
    lo: [i32; 3],
    hi: [i32; 3],
    dist: Vec<f64>,
    threshold: f64,
    res: f64,
    params: PlannerParams,
    penalize: bool,
}

impl OracleGraph {
    fn new(region: &IndexBox, occupied: &[VoxelCoord], res: f64, clearance: f64, penalize: bool) -> Self {
        let lo = region.min.as_array();
        let hi = region.max.as_array();
        let raw: Vec<[i32; 3]> = occupied.iter().map(|v| v.as_array()).collect();
        Self {
            lo,
            hi,
            dist: oracle::brute_force_edt(lo, hi, &raw, res, 2.0),
            threshold: effective_clearance(clearance, res),
            res,
            params: PlannerParams::default(),
            penalize,
        }
    }

    fn distance(&self, v: [i32; 3]) -> Option<f64> {
        if (0..3).any(|i| v[i] < self.lo[i] || v[i] > self.hi[i]) {
            return None;
        }
        let nx = (self.hi[0] - self.lo[0] + 1) as usize;
        let ny = (self.hi[1] - self.lo[1] + 1) as usize;
        let i = (v[0] - self.lo[0]) as usize + nx * ((v[1] - self.lo[1]) as usize + ny * (v[2] - self.lo[2]) as usize);
        Some(self.dist[i])
    }

    fn traversable(&self, v: [i32; 3]) -> bool {
        self.distance(v).is_some_and(|d| d >= self.threshold)
    }

    fn edges(&self, v: [i32; 3]) -> Vec<([i32; 3], f64)> {
        let mut out = Vec::new();
        for d in oracle::offsets26() {
            let n = [v[0] + d[0], v[1] + d[1], v[2] + d[2]];
            let mut clear = true;
            for mx in 0..=d[0].abs() {
                for my in 0..=d[1].abs() {
                    for mz in 0..=d[2].abs() {
                        if (mx, my, mz) != (0, 0, 0) {
                            clear &= self.traversable([v[0] + mx * d[0], v[1] + my * d[1], v[2] + mz * d[2]]);
                        }
                    }
                }
            }
            if !clear {
                continue;
            }
            let step = self.res * ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt();
            let penalty = if self.penalize {
                self.params.lambda * (self.params.clearance_soft - self.distance(n).unwrap()).max(0.0) * step
            } else {
                0.0
            };
            out.push((n, step + penalty));
        }
        out
    }

    fn shortest(&self, a: [i32; 3], b: [i32; 3]) -> Option<f64> {
        oracle::dijkstra(a, b, |v| self.edges(v))
    }
}

fn hole_wall() -> (IndexBox, Vec<VoxelCoord>) {
    let region = IndexBox::new(VoxelCoord::new(0, 0, 0), VoxelCoord::new(29, 29, 29));
    let wall = (0..30)
        .flat_map(|y| (0..30).map(move |z| VoxelCoord::new(15, y, z)))
        .filter(|v| !((14..=16).contains(&v.iy) && (14..=16).contains(&v.iz)))
        .collect();
    (region, wall)
}

#[test]
fn path_threads_the_hole_and_matches_dijkstra_length() {
    let res = 0.1;
    let clearance = 0.06;
    let (region, wall) = hole_wall();
    let esdf = esdf::build_from_voxels(&wall, res, region, 2.0, 0).unwrap();
    let start = VoxelCoord::new(5, 5, 5);
    let goal = VoxelCoord::new(25, 24, 23);
    let req = PlanRequest {
        start: start.center(res),
        goal: goal.center(res),
        clearance,
        esdf: &esdf,
        free_space: &FullyKnown,
        params: PlannerParams::default(),
    };
    let plan = planner::plan(&req).unwrap();
    let traj = &plan.trajectory;

    for p in traj.dense_samples(res / 4.0) {
        if p.x >= 1.5 && p.x < 1.6 {
            assert!(p.y >= 1.4 && p.y < 1.7 && p.z >= 1.4 && p.z < 1.7, "crossed the wall at {p:?}");
        }
    }

    let euclid = OracleGraph::new(&region, &wall, res, clearance, false);
    let shortest = euclid.shortest(start.as_array(), goal.as_array()).unwrap();
    assert!(traj.length <= 1.10 * shortest, "{} vs {shortest}", traj.length);
    let through_hole = (Vec3::new(1.55, 1.55, 1.55) - req.start).norm() + (req.goal - Vec3::new(1.55, 1.55, 1.55)).norm();
    assert!(traj.length >= through_hole - 1e-9);

    let weighted = OracleGraph::new(&region, &wall, res, clearance, true);
    let best = weighted.shortest(start.as_array(), goal.as_array()).unwrap();
    let astar = planner::path_cost(&req).unwrap();
    assert!(astar <= best + 1e-9, "{astar} vs {best}");
}

#[test]
fn closed_hole_is_unreachable() {
    let res = 0.1;
    let region = IndexBox::new(VoxelCoord::new(0, 0, 0), VoxelCoord::new(29, 29, 29));
    let wall: Vec<VoxelCoord> = (0..30).flat_map(|y| (0..30).map(move |z| VoxelCoord::new(15, y, z))).collect();
    let esdf = esdf::build_from_voxels(&wall, res, region, 2.0, 0).unwrap();
    let req = PlanRequest {
        start: Vec3::new(0.55, 0.55, 0.55),
        goal: Vec3::new(2.55, 2.55, 2.55),
        clearance: 0.06,
        esdf: &esdf,
        free_space: &FullyKnown,
        params: PlannerParams::default(),
    };
    assert_eq!(planner::plan(&req).unwrap_err(), planner::PlanError::Unreachable);
}

fn random_world(rng: &mut ChaCha8Rng) -> WorldModel {
    WorldModel::random(rng, Aabb::from_arrays([0.0, 0.0, 0.0], [3.0, 3.0, 2.0]), 6, 0.1, 0.5)
}

fn traversable_voxels(esdf: &EsdfGrid, map: &OccupancyGrid, clearance: f64) -> Vec<VoxelCoord> {
    let t = effective_clearance(clearance, esdf.resolution());
    esdf.region()
        .iter()
        .filter(|v| esdf.distance(v).unwrap() >= t && map.is_free(v))
        .collect()
}

#[test]
fn astar_cost_never_exceeds_dijkstra_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let clearance = 0.3;
    let mut compared = 0;
    for _ in 0..10 {
        let world = random_world(&mut rng);
        let region = planning_region(&world);
        let occupied = ground_truth_voxels(&world);
        let esdf = esdf::build_from_voxels(&occupied, world.resolution, region, 2.0, 0).unwrap();
        let mut map = OccupancyGrid::new(world.resolution);
        seed_ground_truth(&mut map, &world);
        let candidates = traversable_voxels(&esdf, &map, clearance);
        if candidates.len() < 2 {
            continue;
        }
        let graph = OracleGraph::new(&region, &occupied, world.resolution, clearance, true);
        for _ in 0..3 {
            let a = candidates[rng.gen_range(0..candidates.len())];
            let b = candidates[rng.gen_range(0..candidates.len())];
            let req = PlanRequest {
                start: a.center(world.resolution),
                goal: b.center(world.resolution),
                clearance,
                esdf: &esdf,
                free_space: &map,
                params: PlannerParams::default(),
            };
            let expected = graph.shortest(a.as_array(), b.as_array());
            let got = planner::path_cost(&req);
            assert_eq!(got.is_some(), expected.is_some(), "reachability disagrees for {a:?} -> {b:?}");
            if let (Some(got), Some(expected)) = (got, expected) {
                assert!(got <= expected + 1e-9, "{got} vs {expected}");
                compared += 1;
            }
        }
    }
    assert!(compared >= 10);
}

#[test]
fn smoothed_paths_stay_clear_in_random_worlds() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clearance = 0.3;
    let mut planned = 0;
    for _ in 0..50 {
        let world = random_world(&mut rng);
        let res = world.resolution;
        let esdf = esdf::build_from_voxels(&ground_truth_voxels(&world), res, planning_region(&world), 2.0, 0).unwrap();
        let mut map = OccupancyGrid::new(res);
        seed_ground_truth(&mut map, &world);
        let candidates = traversable_voxels(&esdf, &map, clearance);
        if candidates.is_empty() {
            continue;
        }
        let start = candidates[rng.gen_range(0..candidates.len())].center(res);
        let jitter = Vec3::new(rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04));
        let goal = candidates[rng.gen_range(0..candidates.len())].center(res) + jitter;
        let req = PlanRequest {
            start,
            goal,
            clearance,
            esdf: &esdf,
            free_space: &map,
            params: PlannerParams::default(),
        };
        let Ok(plan) = planner::plan(&req) else { continue };
        planned += 1;
        let raw = planner::plan_raw(&req).unwrap();
        assert!(plan.trajectory.length <= raw.trajectory.length + 1e-9);
        assert!(plan.trajectory.timestamps.windows(2).all(|w| w[0] < w[1]));
        for p in plan.trajectory.dense_samples(res / 2.0) {
            let e = esdf.distance_at(&p).unwrap();
            assert!(e >= clearance, "esdf {e} at {p:?}");
            let gt = world
                .obstacles
                .iter()
                .map(|o| oracle::box_distance(&[p.x, p.y, p.z], &[o.min.x, o.min.y, o.min.z], &[o.max.x, o.max.y, o.max.z]))
                .fold(f64::INFINITY, f64::min);
            assert!(gt >= clearance - 0.5 * res, "ground truth distance {gt} at {p:?}");
        }
    }
    assert!(planned >= 25, "only {planned} plans succeeded");
}
