//! Session logs and the interaction metrics computed from them: composition error
//! (Hausdorff distance between designated and operator-set positions), completion
//! time, and command count.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::protocol::{TargetCommand, Topic};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point set is empty")]
    EmptySet,
    #[error("unmatched task event at stamp {stamp}: {reason}")]
    UnmatchedTask { stamp: f64, reason: &'static str },
    #[error("stamps decrease at line {line}: {stamp} < {previous}")]
    NonMonotonic { line: usize, stamp: f64, previous: f64 },
    #[error("replay speed must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TargetCommand,
    MissionStatus,
    PoseSample,
    AnchorChange,
    TaskBegin,
    TaskEnd,
}

impl EventKind {
    /// Bridge topic an event is re-emitted on during replay.
    pub fn topic(&self) -> Option<Topic> {
        match self {
            EventKind::TargetCommand => Some(Topic::Target),
            EventKind::MissionStatus => Some(Topic::MissionStatus),
            EventKind::PoseSample => Some(Topic::Odometry),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub stamp: f64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: Value,
}

/// Ordered, append-only event record; one JSON object per line on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<SessionEvent>) -> Result<Self, MetricsError> {
        check_monotonic(&events)?;
        Ok(Self { events })
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends an event; a stamp earlier than the last one is raised to it.
    pub fn push(&mut self, stamp: f64, kind: EventKind, payload: Value) {
        let stamp = self.events.last().map_or(stamp, |e| stamp.max(e.stamp));
        self.events.push(SessionEvent { stamp, kind, payload });
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), MetricsError> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(|e| MetricsError::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, MetricsError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: SessionEvent = serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Self::from_events(events)
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn target_commands(&self) -> impl Iterator<Item = (&SessionEvent, Option<TargetCommand>)> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::TargetCommand)
            .map(|e| (e, serde_json::from_value(e.payload.clone()).ok()))
    }

    /// `(begin, end)` stamps of every task, in order.
    pub fn task_spans(&self) -> Result<Vec<(f64, f64)>, MetricsError> {
        let mut spans = Vec::new();
        let mut open: Option<f64> = None;
        for e in &self.events {
            match e.kind {
                EventKind::TaskBegin => {
                    if open.is_some() {
                        return Err(MetricsError::UnmatchedTask {
                            stamp: e.stamp,
                            reason: "task_begin while another task is open",
                        });
                    }
                    open = Some(e.stamp);
                }
                EventKind::TaskEnd => {
                    let begin = open.take().ok_or(MetricsError::UnmatchedTask {
                        stamp: e.stamp,
                        reason: "task_end without task_begin",
                    })?;
                    spans.push((begin, e.stamp));
                }
                _ => {}
            }
        }
        if let Some(stamp) = open {
            return Err(MetricsError::UnmatchedTask {
                stamp,
                reason: "task_begin never ended",
            });
        }
        Ok(spans)
    }

    /// The last target command issued inside each task, in task order.
    pub fn final_targets_per_task(&self) -> Result<Vec<Option<Vec3>>, MetricsError> {
        let mut out = Vec::new();
        let mut current: Option<Option<Vec3>> = None;
        for e in &self.events {
            match e.kind {
                EventKind::TaskBegin => current = Some(None),
                EventKind::TaskEnd => {
                    out.push(current.take().ok_or(MetricsError::UnmatchedTask {
                        stamp: e.stamp,
                        reason: "task_end without task_begin",
                    })?);
                }
                EventKind::TargetCommand => {
                    if let Some(slot) = current.as_mut() {
                        if let Ok(cmd) = serde_json::from_value::<TargetCommand>(e.payload.clone()) {
                            *slot = Some(cmd.position);
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn check_monotonic(events: &[SessionEvent]) -> Result<(), MetricsError> {
    for (i, w) in events.windows(2).enumerate() {
        if w[1].stamp < w[0].stamp {
            return Err(MetricsError::NonMonotonic {
                line: i + 2,
                stamp: w[1].stamp,
                previous: w[0].stamp,
            });
        }
    }
    Ok(())
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn composition_error(designated: &[Vec3], user: &[Vec3]) -> Result<f64, MetricsError> {
    if designated.is_empty() || user.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    Ok(directed_hausdorff(designated, user).max(directed_hausdorff(user, designated)))
}

fn directed_hausdorff(from: &[Vec3], to: &[Vec3]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Secondary statistic: sum of distances between the i-th designated position and the
/// operator's final target for task i. Tasks without a target are skipped.
pub fn per_task_error(designated: &[Vec3], user: &[Option<Vec3>]) -> f64 {
    designated
        .iter()
        .zip(user)
        .filter_map(|(d, u)| u.map(|u| (d - u).norm()))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTimes {
    /// Last task end minus first task begin.
    pub total: f64,
    pub per_task: Vec<f64>,
    /// Duration of the first task.
    pub first_target: f64,
}

pub fn completion_time(log: &SessionLog) -> Result<CompletionTimes, MetricsError> {
    let spans = log.task_spans()?;
    let per_task: Vec<f64> = spans.iter().map(|(b, e)| e - b).collect();
    let total = match (spans.first(), spans.last()) {
        (Some(first), Some(last)) => last.1 - first.0,
        _ => 0.0,
    };
    Ok(CompletionTimes {
        total,
        first_target: per_task.first().copied().unwrap_or(0.0),
        per_task,
    })
}

pub fn command_count(log: &SessionLog) -> u64 {
    log.events().iter().filter(|e| e.kind == EventKind::TargetCommand).count() as u64
}

/// Designated task positions in the map frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub positions: Vec<[f64; 3]>,
}

impl TaskSpec {
    pub fn points(&self) -> Vec<Vec3> {
        self.positions.iter().map(|p| Vec3::from(*p)).collect()
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub composition_error: Option<f64>,
    pub per_task_error: Option<f64>,
    pub completion: CompletionTimes,
    pub command_count: u64,
}

pub fn report(log: &SessionLog, tasks: Option<&TaskSpec>) -> Result<MetricsReport, MetricsError> {
    let completion = completion_time(log)?;
    let (composition, per_task) = match tasks {
        Some(spec) => {
            let designated = spec.points();
            let finals = log.final_targets_per_task()?;
            let user: Vec<Vec3> = finals.iter().flatten().copied().collect();
            (
                Some(composition_error(&designated, &user)?),
                Some(per_task_error(&designated, &finals)),
            )
        }
        None => (None, None),
    };
    Ok(MetricsReport {
        composition_error: composition,
        per_task_error: per_task,
        completion,
        command_count: command_count(log),
    })
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.composition_error {
            Some(e) => writeln!(f, "composition error (Hausdorff)  {e:.4} m")?,
            None => writeln!(f, "composition error (Hausdorff)  n/a (no task spec)")?,
        }
        if let Some(e) = self.per_task_error {
            writeln!(f, "per-task error (sum)           {e:.4} m")?;
        }
        writeln!(f, "completion time                {:.2} s", self.completion.total)?;
        writeln!(f, "first target time              {:.2} s", self.completion.first_target)?;
        write!(f, "command count                  {}", self.command_count)
    }
}

/// Emission offsets (seconds from the first event) for replay at `speed`.
/// An infinite speed emits everything at offset zero.
pub fn replay(log: &SessionLog, speed: f64) -> Result<Vec<(f64, &SessionEvent)>, MetricsError> {
    if !(speed > 0.0) {
        return Err(MetricsError::InvalidSpeed(speed));
    }
    let t0 = log.events().first().map_or(0.0, |e| e.stamp);
    Ok(log
        .events()
        .iter()
        .map(|e| {
            let offset = if speed.is_infinite() { 0.0 } else { (e.stamp - t0) / speed };
            (offset, e)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn target(p: [f64; 3], seq: u64) -> Value {
        serde_json::to_value(TargetCommand {
            position: Vec3::from(p),
            seq,
            client_id: "op".into(),
            stamp: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn identical_sets_zero_and_singletons() {
        let a = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.0, 2.0)];
        assert_eq!(composition_error(&a, &a).unwrap(), 0.0);
        assert_eq!(composition_error(&[Vec3::zeros()], &[Vec3::x()]).unwrap(), 1.0);
        assert!(matches!(composition_error(&[], &a), Err(MetricsError::EmptySet)));
    }

    #[test]
    fn single_task_times() {
        let mut log = SessionLog::new();
        log.push(2.0, EventKind::TaskBegin, json!({"task": 0}));
        log.push(3.0, EventKind::TargetCommand, target([1.0, 1.0, 1.0], 1));
        log.push(10.0, EventKind::TaskEnd, json!({"task": 0}));
        let t = completion_time(&log).unwrap();
        assert_eq!(t.total, 8.0);
        assert_eq!(t.first_target, 8.0);
        assert_eq!(t.per_task, vec![8.0]);
    }

    #[test]
    fn span_semantics_include_idle_gaps() {
        let mut log = SessionLog::new();
        let spans = [(1.0, 3.0), (4.0, 7.0), (7.5, 8.0), (10.0, 12.0), (12.0, 15.0)];
        for (b, e) in spans {
            log.push(b, EventKind::TaskBegin, Value::Null);
            log.push(e, EventKind::TaskEnd, Value::Null);
        }
        let t = completion_time(&log).unwrap();
        let busy: f64 = spans.iter().map(|(b, e)| e - b).sum();
        let idle = (4.0 - 3.0) + (7.5 - 7.0) + (10.0 - 8.0);
        assert_eq!(t.total, busy + idle);
        assert_eq!(t.total, 14.0);
    }

    #[test]
    fn unmatched_tasks_rejected() {
        let mut log = SessionLog::new();
        log.push(1.0, EventKind::TaskEnd, Value::Null);
        assert!(matches!(completion_time(&log), Err(MetricsError::UnmatchedTask { .. })));
        let mut log = SessionLog::new();
        log.push(1.0, EventKind::TaskBegin, Value::Null);
        assert!(matches!(completion_time(&log), Err(MetricsError::UnmatchedTask { .. })));
    }

    #[test]
    fn command_count_counts_retries() {
        assert_eq!(command_count(&SessionLog::new()), 0);
        let mut log = SessionLog::new();
        log.push(0.0, EventKind::TaskBegin, Value::Null);
        log.push(1.0, EventKind::TargetCommand, target([1.0, 0.0, 1.0], 1));
        log.push(2.0, EventKind::TargetCommand, target([1.2, 0.0, 1.0], 2));
        log.push(3.0, EventKind::TaskEnd, Value::Null);
        assert_eq!(command_count(&log), 2);
        // error uses the last command of the task
        let spec = TaskSpec {
            positions: vec![[1.2, 0.0, 1.0]],
        };
        let r = report(&log, Some(&spec)).unwrap();
        assert_eq!(r.composition_error, Some(0.0));
        assert_eq!(r.command_count, 2);
    }

    #[test]
    fn jsonl_round_trip_and_monotonic_check() {
        let mut log = SessionLog::new();
        log.push(0.5, EventKind::PoseSample, json!({"x": 1}));
        log.push(0.7, EventKind::AnchorChange, json!({"scale": 0.05}));
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(SessionLog::read_jsonl(text.as_bytes()).unwrap(), log);
        let bad = "{\"stamp\":2.0,\"kind\":\"task_begin\"}\n{\"stamp\":1.0,\"kind\":\"task_end\"}\n";
        assert!(matches!(SessionLog::read_jsonl(bad.as_bytes()), Err(MetricsError::NonMonotonic { .. })));
    }

    #[test]
    fn replay_scaling() {
        let mut log = SessionLog::new();
        log.push(5.0, EventKind::PoseSample, Value::Null);
        log.push(15.0, EventKind::PoseSample, Value::Null);
        let s = replay(&log, 1.0).unwrap();
        assert_eq!(s.last().unwrap().0, 10.0);
        let s = replay(&log, 4.0).unwrap();
        assert_eq!(s.last().unwrap().0, 2.5);
        let s = replay(&log, f64::INFINITY).unwrap();
        assert!(s.iter().all(|(t, _)| *t == 0.0));
        assert!(replay(&log, 0.0).is_err());
        assert!(replay(&log, f64::NAN).is_err());
    }

    fn points() -> impl Strategy<Value = Vec<Vec3>> {
        proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..8)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn hausdorff_axioms(a in points(), b in points(), c in points()) {
            prop_assert_eq!(composition_error(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(composition_error(&a, &b).unwrap(), composition_error(&b, &a).unwrap());
            let ac = composition_error(&a, &c).unwrap();
            let ab = composition_error(&a, &b).unwrap();
            let bc = composition_error(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn hausdorff_rigid_invariance(a in points(), b in points(), yaw in -3.0f64..3.0, shift in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)) {
            let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, yaw);
            let t = Vec3::new(shift.0, shift.1, shift.2);
            let move_all = |s: &[Vec3]| s.iter().map(|p| r * p + t).collect::<Vec<_>>();
            let before = composition_error(&a, &b).unwrap();
            let after = composition_error(&move_all(&a), &move_all(&b)).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
