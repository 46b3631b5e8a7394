//! Scripted-operator missions: a command script drives the simulator while the runner
//! turns simulator events into wire frames, meters bandwidth and records the session.
//!
//! The runner is synchronous and clock-agnostic. Fast mode calls [`MissionRunner::tick`]
//! in a loop; the websocket server paces the same calls against the wall clock.

use std::collections::{HashSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::frames::{MapFrameTransform, DEFAULT_SCALE};
use crate::geometry::Vec3;
use crate::metrics::{EventKind, SessionLog};
use crate::occupancy::{CellState, OccupancyGrid, VoxelCoord, VoxelSnapshot};
use crate::planner::NEIGHBORS;
use crate::protocol::{
    chunk_snapshot, publish_frame, BandwidthMeter, BandwidthReport, FpvModel, MapThrottle, TargetCommand, Topic,
    MAP_RATE_HZ, MAX_VOXELS_PER_MESSAGE,
};
use crate::sim::{planning_region, MissionState, SimConfig, SimEvent, Simulator};
use crate::world::WorldModel;

const REFERENCE_SCRIPT: &str = include_str!("../assets/reference_mission.yaml");

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("step {index}: {message}")]
    Invalid { index: usize, message: String },
}

/// What a script step does when it fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Target { position: [f64; 3] },
    TaskBegin,
    TaskEnd,
    Anchor { scale: f64, yaw: f64, origin: [f64; 3] },
}

/// One operator action. `at` fires at an absolute simulated time; `after_settle` fires
/// that many seconds after the mission settled (reached, blocked or idle) and after the
/// previous step. A step with neither waits for the mission to settle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_settle: Option<f64>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Script {
    pub steps: Vec<ScriptStep>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let script: Script = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?
        } else {
            serde_yaml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?
        };
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The 28-command exploration of [`WorldModel::reference`].
    pub fn reference() -> Self {
        Self::parse(REFERENCE_SCRIPT).expect("bundled script is valid")
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        for (index, step) in self.steps.iter().enumerate() {
            let invalid = |message: &str| ScriptError::Invalid {
                index,
                message: message.to_owned(),
            };
            if step.at.is_some() && step.after_settle.is_some() {
                return Err(invalid("use either `at` or `after_settle`, not both"));
            }
            let times_ok = step.at.is_none_or(|t| t.is_finite() && t >= 0.0)
                && step.after_settle.is_none_or(|t| t.is_finite() && t >= 0.0);
            if !times_ok {
                return Err(invalid("times must be finite and non-negative"));
            }
            match &step.action {
                Action::Target { position } if position.iter().any(|c| !c.is_finite()) => {
                    return Err(invalid("target position must be finite"));
                }
                Action::Anchor { scale, .. } if !(*scale > 0.0 && scale.is_finite()) => {
                    return Err(invalid("anchor scale must be positive"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn target_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.action, Action::Target { .. })).count()
    }

    /// Rebuilds a time-triggered script from a recorded session so a fresh simulator
    /// receives the same commands on the same ticks.
    pub fn from_session(log: &SessionLog) -> Self {
        let steps = log
            .events()
            .iter()
            .filter_map(|e| {
                let action = match e.kind {
                    EventKind::TargetCommand => {
                        let cmd: TargetCommand = serde_json::from_value(e.payload.clone()).ok()?;
                        Action::Target {
                            position: cmd.position.into(),
                        }
                    }
                    EventKind::TaskBegin => Action::TaskBegin,
                    EventKind::TaskEnd => Action::TaskEnd,
                    EventKind::AnchorChange => {
                        let t: MapFrameTransform = serde_json::from_value(e.payload.clone()).ok()?;
                        Action::Anchor {
                            scale: t.scale(),
                            yaw: t.yaw(),
                            origin: t.origin().into(),
                        }
                    }
                    _ => return None,
                };
                Some(ScriptStep {
                    at: Some(e.stamp),
                    after_settle: None,
                    action,
                })
            })
            .collect();
        Script { steps }
    }
}

/// Runner settings that are not simulator physics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub map_rate_hz: f64,
    pub max_voxels: usize,
    /// Hard stop on simulated time.
    pub max_duration: f64,
    /// End the run once the script is exhausted and the drone has settled.
    pub finish_when_settled: bool,
    pub fpv: FpvModel,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            map_rate_hz: MAP_RATE_HZ,
            max_voxels: MAX_VOXELS_PER_MESSAGE,
            max_duration: 600.0,
            finish_when_settled: true,
            fpv: FpvModel::default(),
        }
    }
}

/// A serialized publish ready for every subscriber of `topic`.
#[derive(Debug, Clone)]
pub struct OutboundFrame {
    pub topic: Topic,
    pub seq: u64,
    pub stamp: f64,
    /// Map revision for /occupancy_map chunks.
    pub revision: Option<u64>,
    pub text: Arc<str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    Running,
    Finished,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub reachable: usize,
    pub observed: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.reachable == 0 {
            1.0
        } else {
            self.observed as f64 / self.reachable as f64
        }
    }
}

/// Free voxels whose centers the drone body fits in (ground-truth clearance at least
/// `min_clearance`), 26-connected to the start voxel.
pub fn reachable_free_voxels(world: &WorldModel, min_clearance: f64) -> Vec<VoxelCoord> {
    let res = world.resolution;
    let region = planning_region(world);
    let fits = |v: &VoxelCoord| region.contains(v) && world.clearance(&v.center(res)) >= min_clearance;
    let start = VoxelCoord::containing(&world.start, res);
    if !fits(&start) {
        return Vec::new();
    }
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for d in NEIGHBORS.iter() {
            let n = v.offset(d[0], d[1], d[2]);
            if !seen.contains(&n) && fits(&n) {
                seen.insert(n);
                queue.push_back(n);
            }
        }
    }
    let mut out: Vec<_> = seen.into_iter().collect();
    out.sort_unstable();
    out
}

/// Share of `reachable` voxels the map has classified (free or occupied).
pub fn coverage(reachable: &[VoxelCoord], map: &OccupancyGrid) -> Coverage {
    Coverage {
        reachable: reachable.len(),
        observed: reachable.iter().filter(|v| map.classify(v) != CellState::Unknown).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub phase: RunPhase,
    pub sim_duration: f64,
    pub ticks: u64,
    pub commands: u64,
    pub reached: u64,
    pub blocked: u64,
    pub coverage: Coverage,
    pub coverage_fraction: f64,
    pub min_clearance: f64,
    pub collisions: u64,
    pub guard_trips: u64,
    pub final_revision: u64,
    pub final_voxels: usize,
    pub map_publishes: u64,
    pub bandwidth: BandwidthReport,
}

pub struct MissionRunner {
    sim: Simulator,
    cfg: RunnerConfig,
    dt: f64,
    script: Vec<ScriptStep>,
    cursor: usize,
    last_fire: f64,
    settled_since: Option<f64>,
    transform: MapFrameTransform,
    task_index: u32,
    target_seq: u64,
    topic_seq: [u64; 6],
    throttle: MapThrottle,
    map_dirty: bool,
    map_publishes: u64,
    last_map: Option<Arc<VoxelSnapshot>>,
    meter: BandwidthMeter,
    log: SessionLog,
    outbox: Vec<OutboundFrame>,
    phase: RunPhase,
    ticks: u64,
    reached: u64,
    blocked: u64,
    collisions: u64,
}

fn topic_slot(topic: Topic) -> usize {
    match topic {
        Topic::OccupancyMap => 0,
        Topic::Odometry => 1,
        Topic::Trajectory => 2,
        Topic::MissionStatus => 3,
        Topic::Target => 4,
        Topic::MeshMap => 5,
    }
}

impl MissionRunner {
    pub fn new(world: WorldModel, sim_cfg: SimConfig, cfg: RunnerConfig, script: Script) -> Self {
        let dt = 1.0 / sim_cfg.tick_rate_hz;
        let mut sim = Simulator::new(world, sim_cfg);
        // Survey scans taken at construction are not published.
        sim.drain_events().for_each(drop);
        let transform = MapFrameTransform::new(DEFAULT_SCALE, 0.0, Vec3::zeros()).expect("default scale is valid");
        Self {
            sim,
            cfg,
            dt,
            script: script.steps,
            cursor: 0,
            last_fire: 0.0,
            settled_since: Some(0.0),
            transform,
            task_index: 0,
            target_seq: 0,
            topic_seq: [0; 6],
            throttle: MapThrottle::new(cfg.map_rate_hz),
            map_dirty: true,
            map_publishes: 0,
            last_map: None,
            meter: BandwidthMeter::default(),
            log: SessionLog::new(),
            outbox: Vec::new(),
            phase: RunPhase::Running,
            ticks: 0,
            reached: 0,
            blocked: 0,
            collisions: 0,
        }
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn phase(&self) -> RunPhase {
        self.phase
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, RunPhase::Finished | RunPhase::TimedOut)
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn meter(&self) -> &BandwidthMeter {
        &self.meter
    }

    pub fn transform(&self) -> &MapFrameTransform {
        &self.transform
    }

    /// The most recently published map snapshot.
    pub fn last_map(&self) -> Option<&Arc<VoxelSnapshot>> {
        self.last_map.as_ref()
    }

    pub fn drain_frames(&mut self) -> std::vec::Drain<'_, OutboundFrame> {
        self.outbox.drain(..)
    }

    /// True while a scripted step is still waiting to fire.
    pub fn script_pending(&self) -> bool {
        self.cursor < self.script.len()
    }

    /// Target from a connected client; recorded and forwarded exactly like a scripted one.
    pub fn submit_target(&mut self, cmd: TargetCommand) {
        let now = self.time();
        self.log.push(now, EventKind::TargetCommand, serde_json::to_value(&cmd).expect("serializable"));
        // Out-of-bounds targets are counted and leave the status untouched.
        let _ = self.sim.accept_target(cmd);
        self.emit_sim_events();
        self.update_settled();
    }

    fn next_seq(&mut self, topic: Topic) -> u64 {
        let slot = &mut self.topic_seq[topic_slot(topic)];
        *slot += 1;
        *slot
    }

    fn publish(&mut self, topic: Topic, payload: String, revision: Option<u64>) {
        let seq = self.next_seq(topic);
        let stamp = self.time();
        self.meter.record(topic, payload.len());
        let text: Arc<str> = publish_frame(topic, seq, stamp, &payload).into();
        self.outbox.push(OutboundFrame {
            topic,
            seq,
            stamp,
            revision,
            text,
        });
    }

    fn step_due(&self, step: &ScriptStep, now: f64) -> bool {
        match (step.at, step.after_settle) {
            (Some(at), _) => now + 1e-9 >= at,
            (None, delay) => {
                let delay = delay.unwrap_or(0.0);
                self.settled_since
                    .is_some_and(|since| now + 1e-9 >= since.max(self.last_fire) + delay)
            }
        }
    }

    fn fire_due_steps(&mut self) {
        let now = self.time();
        while self.cursor < self.script.len() && self.step_due(&self.script[self.cursor], now) {
            let step = self.script[self.cursor].clone();
            self.cursor += 1;
            self.last_fire = now;
            match step.action {
                Action::Target { position } => {
                    self.target_seq += 1;
                    let cmd = TargetCommand {
                        position: Vec3::from(position),
                        seq: self.target_seq,
                        client_id: "script".into(),
                        stamp: now,
                    };
                    self.submit_target(cmd);
                }
                Action::TaskBegin => {
                    self.log.push(now, EventKind::TaskBegin, json!({ "task": self.task_index }));
                }
                Action::TaskEnd => {
                    self.log.push(now, EventKind::TaskEnd, json!({ "task": self.task_index }));
                    self.task_index += 1;
                }
                Action::Anchor { scale, yaw, origin } => {
                    if let Ok(t) = self.transform.retarget_anchor(Vec3::from(origin), yaw, scale) {
                        self.transform = t;
                        self.log.push(now, EventKind::AnchorChange, serde_json::to_value(t).expect("serializable"));
                    }
                }
            }
        }
    }

    fn update_settled(&mut self) {
        let settled = self.sim.status().state.is_settled();
        match (settled, self.settled_since) {
            (true, None) => self.settled_since = Some(self.time()),
            (false, Some(_)) => self.settled_since = None,
            _ => {}
        }
    }

    fn emit_sim_events(&mut self) {
        let events: Vec<SimEvent> = self.sim.drain_events().collect();
        let now = self.time();
        for event in events {
            match event {
                SimEvent::Scan { odometry } => {
                    self.map_dirty = true;
                    let payload = serde_json::to_string(&odometry).expect("serializable");
                    self.log.push(now, EventKind::PoseSample, serde_json::to_value(odometry).expect("serializable"));
                    self.publish(Topic::Odometry, payload, None);
                }
                SimEvent::Status(status) => {
                    match status.state {
                        MissionState::Reached => self.reached += 1,
                        MissionState::Blocked => self.blocked += 1,
                        _ => {}
                    }
                    let value = serde_json::to_value(&status).expect("serializable");
                    let payload = value.to_string();
                    self.log.push(now, EventKind::MissionStatus, value);
                    self.publish(Topic::MissionStatus, payload, None);
                }
                SimEvent::Trajectory(traj) => {
                    let payload = serde_json::to_string(&traj).expect("serializable");
                    self.publish(Topic::Trajectory, payload, None);
                }
            }
        }
    }

    fn publish_map(&mut self) {
        let now = self.time();
        if !self.map_dirty || !self.throttle.is_due(now) {
            return;
        }
        self.throttle.offer(Arc::new(self.sim.map().snapshot()));
        let Some(snapshot) = self.throttle.poll(now) else { return };
        self.map_dirty = false;
        self.map_publishes += 1;
        for chunk in chunk_snapshot(&snapshot, self.cfg.max_voxels) {
            let payload = serde_json::to_string(&chunk).expect("serializable");
            self.publish(Topic::OccupancyMap, payload, Some(snapshot.revision));
        }
        self.last_map = Some(snapshot);
    }

    /// Advances one simulator tick. Returns false once the mission is over.
    pub fn tick(&mut self) -> bool {
        if self.is_done() {
            return false;
        }
        self.fire_due_steps();
        if self.cfg.finish_when_settled && !self.script_pending() && self.settled_since.is_some() {
            self.phase = RunPhase::Finished;
            self.publish_final_map();
            return false;
        }
        self.sim.step(self.dt);
        self.ticks += 1;
        if self.sim.world().clearance(&self.sim.pose().position) < self.sim.config().drone_radius {
            self.collisions += 1;
        }
        self.emit_sim_events();
        self.update_settled();
        self.publish_map();

        if self.time() >= self.cfg.max_duration - 1e-9 {
            self.phase = RunPhase::TimedOut;
            self.publish_final_map();
            return false;
        }
        true
    }

    /// Stops the run from outside, flushing the current map.
    pub fn stop(&mut self) {
        if !self.is_done() {
            self.phase = RunPhase::Finished;
            self.publish_final_map();
        }
    }

    fn publish_final_map(&mut self) {
        let current = self.sim.map().revision();
        if self.last_map.as_ref().is_some_and(|m| m.revision == current) {
            return;
        }
        let now = self.time();
        let slot = self.throttle.last_publish().map_or(now, |last| now.max(last + self.throttle.period()));
        let snapshot = Arc::new(self.sim.map().snapshot());
        self.map_publishes += 1;
        for chunk in chunk_snapshot(&snapshot, self.cfg.max_voxels) {
            let payload = serde_json::to_string(&chunk).expect("serializable");
            let seq = self.next_seq(Topic::OccupancyMap);
            self.meter.record(Topic::OccupancyMap, payload.len());
            self.outbox.push(OutboundFrame {
                topic: Topic::OccupancyMap,
                seq,
                stamp: slot,
                revision: Some(snapshot.revision),
                text: publish_frame(Topic::OccupancyMap, seq, slot, &payload).into(),
            });
        }
        self.last_map = Some(snapshot);
    }

    /// Runs to completion without pacing.
    pub fn run_to_end(&mut self) {
        while self.tick() {
            self.outbox.clear();
        }
        self.outbox.clear();
    }

    pub fn summary(&self) -> MissionSummary {
        let world = self.sim.world();
        let reachable = reachable_free_voxels(world, self.sim.config().drone_radius);
        let coverage = coverage(&reachable, self.sim.map());
        let snapshot_len = self.sim.map().occupied_voxels().len();
        MissionSummary {
            phase: self.phase,
            sim_duration: self.time(),
            ticks: self.ticks,
            commands: self.sim.received_commands(),
            reached: self.reached,
            blocked: self.blocked,
            coverage,
            coverage_fraction: coverage.fraction(),
            min_clearance: self.sim.min_clearance(),
            collisions: self.collisions,
            guard_trips: self.sim.guard_trips(),
            final_revision: self.sim.map().revision(),
            final_voxels: snapshot_len,
            map_publishes: self.map_publishes,
            bandwidth: self.meter.report(self.time(), self.cfg.fpv),
        }
    }
}

impl std::fmt::Display for MissionSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "phase             {:?}", self.phase)?;
        writeln!(f, "sim duration      {:.2} s", self.sim_duration)?;
        writeln!(f, "commands          {} (reached {}, blocked {})", self.commands, self.reached, self.blocked)?;
        writeln!(
            f,
            "coverage          {:.1}% ({} / {} reachable free voxels)",
            100.0 * self.coverage_fraction,
            self.coverage.observed,
            self.coverage.reachable
        )?;
        writeln!(f, "min clearance     {:.3} m", self.min_clearance)?;
        writeln!(f, "collisions        {}", self.collisions)?;
        writeln!(f, "guard replans     {}", self.guard_trips)?;
        writeln!(f, "final map         revision {}, {} voxels", self.final_revision, self.final_voxels)?;
        writeln!(f, "map publishes     {}", self.map_publishes)?;
        write!(f, "{}", self.bandwidth)
    }
}
