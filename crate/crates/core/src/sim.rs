//! Simulated drone: kinematic point, depth sensing, and a target-following executive.
//!
//! One tick loop owns the simulator. Each [`Simulator::step`] advances the clock,
//! moves the drone along the active trajectory, integrates due sensor scans into the
//! occupancy map and queues [`SimEvent`]s for the caller to publish.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::esdf::{self, EsdfGrid, IndexBox};
use crate::geometry::{normalize_angle, Vec3};
use crate::occupancy::{voxelize_box, CellState, OccupancyGrid, VoxelCoord};
use crate::planner::{self, FreeSpace, PlanError, PlanKind, PlanRequest, PlannerParams, Trajectory};
use crate::protocol::TargetCommand;
use crate::world::{sense, DronePose, SensorConfig, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionState {
    Idle,
    Planning,
    Flying,
    Reached,
    Blocked,
}

impl MissionState {
    /// Reached, blocked or idle: nothing left to do for the last target.
    pub fn is_settled(&self) -> bool {
        matches!(self, MissionState::Idle | MissionState::Reached | MissionState::Blocked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionStatus {
    pub state: MissionState,
    pub active_target: Option<TargetCommand>,
    pub progress: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("target {0:?} lies outside the world bounds")]
    OutOfBounds(Vec3),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub v_max: f64,
    pub drone_radius: f64,
    pub clearance: f64,
    pub tick_rate_hz: f64,
    pub sensor: SensorConfig,
    /// Standard deviation of published-position noise, meters. Zero disables it.
    pub odometry_noise: f64,
    pub snap_radius: f64,
    pub d_max: f64,
    pub planner: PlannerParams,
    /// Legs (plans) allowed per target before giving up.
    pub max_legs: u32,
    /// Scan in four directions before the first tick.
    pub initial_survey: bool,
    /// Start with the ground truth already mapped (planner experiments).
    pub known_map: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            drone_radius: 0.2,
            clearance: 0.3,
            tick_rate_hz: 50.0,
            sensor: SensorConfig::default(),
            odometry_noise: 0.0,
            snap_radius: 0.8,
            d_max: esdf::DEFAULT_D_MAX,
            planner: PlannerParams::default(),
            max_legs: 60,
            initial_survey: true,
            known_map: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    /// A sensor period elapsed; carries the published (possibly noisy) odometry.
    Scan { odometry: DronePose },
    Status(MissionStatus),
    Trajectory(Trajectory),
}

#[derive(Debug, Clone)]
struct ActiveLeg {
    trajectory: Trajectory,
    kind: PlanKind,
    travelled: f64,
}

pub struct Simulator {
    world: WorldModel,
    cfg: SimConfig,
    pose: DronePose,
    map: OccupancyGrid,
    state: MissionState,
    target: Option<TargetCommand>,
    /// Where the drone actually aims (target, or its snapped replacement).
    goal: Option<Vec3>,
    target_origin: Vec3,
    leg: Option<ActiveLeg>,
    legs: u32,
    planning_after_scan: u64,
    scans: u64,
    next_scan: f64,
    received_commands: u64,
    guard_trips: u64,
    min_clearance: f64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    events: VecDeque<SimEvent>,
}

impl Simulator {
    pub fn new(world: WorldModel, cfg: SimConfig) -> Self {
        let period = 1.0 / cfg.sensor.rate_hz;
        let mut map = OccupancyGrid::new(world.resolution);
        if cfg.known_map {
            seed_ground_truth(&mut map, &world);
        }
        let noise = (cfg.odometry_noise > 0.0).then(|| Normal::new(0.0, cfg.odometry_noise).expect("valid std"));
        let pose = DronePose::new(world.start, 0.0, 0.0);
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            min_clearance: world.clearance(&world.start),
            world,
            pose,
            map,
            state: MissionState::Idle,
            target: None,
            goal: None,
            target_origin: pose.position,
            leg: None,
            legs: 0,
            planning_after_scan: 0,
            scans: 0,
            next_scan: period,
            received_commands: 0,
            guard_trips: 0,
            noise,
            events: VecDeque::new(),
            cfg,
        };
        if sim.cfg.initial_survey {
            for k in 0..4 {
                let yaw = normalize_angle(k as f64 * std::f64::consts::FRAC_PI_2);
                let look = DronePose::new(sim.pose.position, yaw, 0.0);
                let scan = sense(&sim.world, &sim.cfg.sensor, &look);
                sim.map.integrate_scan(&scan, &look);
            }
        }
        sim
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn pose(&self) -> &DronePose {
        &self.pose
    }

    pub fn time(&self) -> f64 {
        self.pose.timestamp
    }

    pub fn map(&self) -> &OccupancyGrid {
        &self.map
    }

    pub fn received_commands(&self) -> u64 {
        self.received_commands
    }

    pub fn scans(&self) -> u64 {
        self.scans
    }

    /// Smallest ground-truth obstacle distance seen by the drone so far.
    pub fn min_clearance(&self) -> f64 {
        self.min_clearance
    }

    /// Times the ground-truth safety check stopped the drone.
    pub fn guard_trips(&self) -> u64 {
        self.guard_trips
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.leg.as_ref().map(|l| &l.trajectory)
    }

    pub fn status(&self) -> MissionStatus {
        let progress = match (self.state, self.goal) {
            (MissionState::Reached, _) => 1.0,
            (MissionState::Planning | MissionState::Flying, Some(goal)) => {
                let total = (goal - self.target_origin).norm();
                if total <= 0.0 {
                    1.0
                } else {
                    (1.0 - (goal - self.pose.position).norm() / total).clamp(0.0, 1.0)
                }
            }
            _ => 0.0,
        };
        MissionStatus {
            state: self.state,
            active_target: self.target.clone(),
            progress,
        }
    }

    pub fn drain_events(&mut self) -> impl Iterator<Item = SimEvent> + '_ {
        self.events.drain(..)
    }

    /// Latest-wins target ingestion.
    pub fn accept_target(&mut self, cmd: TargetCommand) -> Result<MissionStatus, SimError> {
        self.received_commands += 1;
        if !self.world.in_bounds(&cmd.position) {
            return Err(SimError::OutOfBounds(cmd.position));
        }
        self.leg = None;
        self.legs = 0;
        self.target_origin = self.pose.position;
        self.goal = Some(cmd.position);
        if (cmd.position - self.pose.position).norm() <= 1e-6 {
            self.target = None;
            self.goal = None;
            self.state = MissionState::Reached;
        } else {
            let d = cmd.position - self.pose.position;
            if d.x.abs() + d.y.abs() > 1e-9 {
                self.pose.yaw = normalize_angle(d.y.atan2(d.x));
            }
            self.target = Some(cmd);
            self.enter_planning();
        }
        let status = self.status();
        self.events.push_back(SimEvent::Status(status.clone()));
        Ok(status)
    }

    fn enter_planning(&mut self) {
        self.state = MissionState::Planning;
        self.planning_after_scan = self.scans;
    }

    fn settle(&mut self, state: MissionState) {
        self.state = state;
        self.target = None;
        self.goal = None;
        self.leg = None;
        let status = self.status();
        self.events.push_back(SimEvent::Status(status));
    }

    /// Advances the simulation clock by `dt` seconds.
    pub fn step(&mut self, dt: f64) -> DronePose {
        assert!(dt > 0.0);
        self.pose.timestamp += dt;

        match self.state {
            MissionState::Planning if self.scans > self.planning_after_scan => self.plan_leg(),
            MissionState::Flying => self.advance(dt),
            _ => {}
        }

        let period = 1.0 / self.cfg.sensor.rate_hz;
        while self.pose.timestamp + 1e-9 >= self.next_scan {
            self.next_scan += period;
            let scan = sense(&self.world, &self.cfg.sensor, &self.pose);
            self.map.integrate_scan(&scan, &self.pose);
            self.scans += 1;
            let mut odometry = self.pose;
            if let Some(noise) = &self.noise {
                for i in 0..3 {
                    odometry.position[i] += noise.sample(&mut self.rng);
                }
            }
            self.events.push_back(SimEvent::Scan { odometry });
        }
        self.pose
    }

    fn advance(&mut self, dt: f64) {
        let Some(leg) = self.leg.as_mut() else {
            self.enter_planning();
            return;
        };
        let target_s = (leg.travelled + self.cfg.v_max * dt).min(leg.trajectory.length);
        let next = point_along(&leg.trajectory, target_s);
        let clearance = self.world.clearance(&next);
        if clearance < self.cfg.drone_radius || !self.world.in_bounds(&next) {
            // The mapped world disagreed with the ground truth; stop and replan.
            self.guard_trips += 1;
            self.leg = None;
            self.legs += 1;
            if self.legs > self.cfg.max_legs {
                self.settle(MissionState::Blocked);
            } else {
                self.enter_planning();
            }
            return;
        }
        let motion = next - self.pose.position;
        if motion.x.abs() + motion.y.abs() > 1e-9 {
            self.pose.yaw = normalize_angle(motion.y.atan2(motion.x));
        }
        self.pose.position = next;
        self.min_clearance = self.min_clearance.min(clearance);
        leg.travelled = target_s;
        if target_s >= leg.trajectory.length {
            match leg.kind {
                PlanKind::Goal => self.settle(MissionState::Reached),
                PlanKind::FrontierHop => {
                    self.leg = None;
                    if let Some(goal) = self.goal {
                        let d = goal - self.pose.position;
                        if d.x.abs() + d.y.abs() > 1e-9 {
                            self.pose.yaw = normalize_angle(d.y.atan2(d.x));
                        }
                    }
                    self.enter_planning();
                }
            }
        }
    }

    /// ESDF over the world bounds from the current map.
    pub fn build_esdf(&self) -> EsdfGrid {
        let region = planning_region(&self.world);
        let snapshot = self.map.snapshot();
        esdf::build(&snapshot, region, self.cfg.d_max).expect("world region is non-empty")
    }

    fn plan_leg(&mut self) {
        let Some(goal) = self.goal else {
            self.settle(MissionState::Idle);
            return;
        };
        self.legs += 1;
        if self.legs > self.cfg.max_legs {
            self.settle(MissionState::Blocked);
            return;
        }
        let esdf = self.build_esdf();
        match plan_to_target(&self.pose.position, &goal, &esdf, &self.map, &self.cfg) {
            Ok((plan, goal)) => {
                self.goal = Some(goal);
                if plan.trajectory.length <= 0.0 {
                    self.pose.position = goal;
                    self.settle(MissionState::Reached);
                    return;
                }
                self.events.push_back(SimEvent::Trajectory(plan.trajectory.clone()));
                self.leg = Some(ActiveLeg {
                    trajectory: plan.trajectory,
                    kind: plan.kind,
                    travelled: 0.0,
                });
                if self.state != MissionState::Flying {
                    self.state = MissionState::Flying;
                    let status = self.status();
                    self.events.push_back(SimEvent::Status(status));
                }
            }
            Err(_) => self.settle(MissionState::Blocked),
        }
    }
}

/// Snaps the goal when it is known but not clear, plans, and falls back to snapping
/// when the goal is unknown and no frontier hop makes progress. Returns the plan and
/// the goal it leads to.
pub fn plan_to_target(
    start: &Vec3,
    goal: &Vec3,
    esdf: &EsdfGrid,
    free_space: &dyn FreeSpace,
    cfg: &SimConfig,
) -> Result<(planner::Plan, Vec3), PlanError> {
    let res = esdf.resolution();
    let threshold = planner::effective_clearance(cfg.clearance, res);
    let goal_voxel = VoxelCoord::containing(goal, res);
    let known = free_space.state(&goal_voxel) != CellState::Unknown;
    let clear = free_space.state(&goal_voxel) == CellState::Free
        && esdf.distance(&goal_voxel).is_some_and(|d| d >= threshold);
    let snap = || planner::snap_goal(goal, esdf, free_space, cfg.clearance, cfg.snap_radius);
    let request = |target: Vec3| PlanRequest {
        start: *start,
        goal: target,
        clearance: cfg.clearance,
        esdf,
        free_space,
        params: cfg.planner,
    };

    let target = if known && !clear { snap().ok_or(PlanError::Unreachable)? } else { *goal };
    match planner::plan(&request(target)) {
        Err(PlanError::GoalUnknown) => {
            let snapped = snap().ok_or(PlanError::GoalUnknown)?;
            planner::plan(&request(snapped)).map(|p| (p, snapped))
        }
        other => other.map(|p| (p, target)),
    }
}

/// Voxels whose centers lie in the world bounds.
pub fn planning_region(world: &WorldModel) -> IndexBox {
    IndexBox::covering(&world.bounds.min, &world.bounds.max, world.resolution)
}

/// Marks the whole planning region as observed ground truth.
pub fn seed_ground_truth(map: &mut OccupancyGrid, world: &WorldModel) {
    let occupied = ground_truth_voxels(world);
    let region = planning_region(world).expanded(1);
    map.mark_free(region.iter().filter(|v| occupied.binary_search(v).is_err()));
    map.mark_occupied(occupied);
}

/// Sorted voxelization of every obstacle box.
pub fn ground_truth_voxels(world: &WorldModel) -> Vec<VoxelCoord> {
    let mut out: Vec<VoxelCoord> = world
        .obstacles
        .iter()
        .flat_map(|o| voxelize_box(o, world.resolution).collect::<Vec<_>>())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Position at arc length `s` along the polyline.
pub fn point_along(traj: &Trajectory, s: f64) -> Vec3 {
    let mut remaining = s;
    for w in traj.waypoints.windows(2) {
        let len = (w[1] - w[0]).norm();
        if remaining <= len {
            return if len > 0.0 { w[0] + (w[1] - w[0]) * (remaining / len) } else { w[1] };
        }
        remaining -= len;
    }
    traj.waypoints.last().copied().unwrap_or_else(Vec3::zeros)
}
