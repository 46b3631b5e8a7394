//! Wire protocol shared by the broadcast server, the recorder and clients.
//!
//! Every frame is a UTF-8 JSON envelope `{op, topic, seq, stamp, payload}`. Map
//! snapshots travel as full-snapshot chunks of at most `max_voxels` voxels each, with
//! voxel indices flattened to `[ix, iy, iz, ix, iy, iz, ...]`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::occupancy::{VoxelCoord, VoxelSnapshot};
use crate::world::DronePose;

pub const MAX_VOXELS_PER_MESSAGE: usize = 30_000;
pub const MAP_RATE_HZ: f64 = 2.0;
pub const MAX_FRAME_BYTES: usize = 4 * 1024 * 1024;
pub const OUTBOUND_QUEUE_CAPACITY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Topic {
    #[serde(rename = "/occupancy_map")]
    OccupancyMap,
    #[serde(rename = "/odometry")]
    Odometry,
    #[serde(rename = "/trajectory")]
    Trajectory,
    #[serde(rename = "/mission_status")]
    MissionStatus,
    #[serde(rename = "/target")]
    Target,
    #[serde(rename = "/mesh_map")]
    MeshMap,
}

impl Topic {
    pub const ALL: [Topic; 6] = [
        Topic::OccupancyMap,
        Topic::Odometry,
        Topic::Trajectory,
        Topic::MissionStatus,
        Topic::Target,
        Topic::MeshMap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Topic::OccupancyMap => "/occupancy_map",
            Topic::Odometry => "/odometry",
            Topic::Trajectory => "/trajectory",
            Topic::MissionStatus => "/mission_status",
            Topic::Target => "/target",
            Topic::MeshMap => "/mesh_map",
        }
    }

    pub fn parse(name: &str) -> Option<Topic> {
        Topic::ALL.into_iter().find(|t| t.as_str() == name)
    }

    /// Only `/target` accepts client publishes.
    pub fn client_publishable(&self) -> bool {
        matches!(self, Topic::Target)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Subscribe,
    Unsubscribe,
    Publish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub op: Op,
    pub topic: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub stamp: f64,
    #[serde(default)]
    pub payload: Value,
}

/// Serializes a publish envelope around an already-serialized payload.
pub fn publish_frame(topic: Topic, seq: u64, stamp: f64, payload_json: &str) -> String {
    let stamp = serde_json::to_string(&stamp).unwrap_or_else(|_| "0.0".into());
    format!(
        r#"{{"op":"publish","topic":"{}","seq":{},"stamp":{},"payload":{}}}"#,
        topic.as_str(),
        seq,
        stamp,
        payload_json
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ParseError,
    UnknownOp,
    UnknownTopic,
    InvalidPayload,
    NotPublishable,
    DuplicateSeq,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{code:?}: {message}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>, topic: Option<&str>) -> Self {
        Self {
            code,
            message: message.into(),
            topic: topic.map(str::to_owned),
        }
    }

    /// Error document sent back to the offending client.
    pub fn to_frame(&self) -> String {
        #[derive(Serialize)]
        struct Reply<'a> {
            op: &'static str,
            #[serde(flatten)]
            error: &'a ProtocolError,
        }
        serde_json::to_string(&Reply { op: "error", error: self }).expect("error reply serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientRequest {
    Subscribe(Topic),
    Unsubscribe(Topic),
    PublishTarget { seq: u64, stamp: f64, position: Vec3 },
}

#[derive(Debug, Clone, Deserialize)]
struct TargetPayload {
    position: [f64; 3],
}

/// Validates one client frame.
pub fn parse_client_frame(text: &str) -> Result<ClientRequest, ProtocolError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::ParseError, e.to_string(), None))?;
    let op = value.get("op").and_then(Value::as_str).unwrap_or_default().to_owned();
    let topic_owned = value.get("topic").and_then(Value::as_str).map(str::to_owned);
    let topic_name = topic_owned.as_deref();
    let op = match op.as_str() {
        "subscribe" => Op::Subscribe,
        "unsubscribe" => Op::Unsubscribe,
        "publish" => Op::Publish,
        other => {
            return Err(ProtocolError::new(ErrorCode::UnknownOp, format!("unknown op {other:?}"), topic_name));
        }
    };
    let topic = topic_name
        .and_then(Topic::parse)
        .ok_or_else(|| ProtocolError::new(ErrorCode::UnknownTopic, format!("unknown topic {topic_name:?}"), topic_name))?;
    match op {
        Op::Subscribe => Ok(ClientRequest::Subscribe(topic)),
        Op::Unsubscribe => Ok(ClientRequest::Unsubscribe(topic)),
        Op::Publish => {
            if !topic.client_publishable() {
                return Err(ProtocolError::new(
                    ErrorCode::NotPublishable,
                    format!("{topic} is server-published"),
                    topic_name,
                ));
            }
            let envelope: Envelope = serde_json::from_value(value)
                .map_err(|e| ProtocolError::new(ErrorCode::InvalidPayload, e.to_string(), topic_name))?;
            let payload: TargetPayload = serde_json::from_value(envelope.payload)
                .map_err(|e| ProtocolError::new(ErrorCode::InvalidPayload, e.to_string(), topic_name))?;
            let position = Vec3::from(payload.position);
            if !position.iter().all(|c| c.is_finite()) {
                return Err(ProtocolError::new(
                    ErrorCode::InvalidPayload,
                    "target position must be finite",
                    topic_name,
                ));
            }
            Ok(ClientRequest::PublishTarget {
                seq: envelope.seq,
                stamp: envelope.stamp,
                position,
            })
        }
    }
}

/// Operator-chosen target in the map frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCommand {
    pub position: Vec3,
    pub seq: u64,
    pub client_id: String,
    pub stamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMessage {
    pub resolution: f64,
    pub revision: u64,
    pub chunk_index: u32,
    pub chunk_count: u32,
    /// Flattened `[ix, iy, iz, ...]`.
    pub voxels: Vec<i32>,
    pub drone_pose: DronePose,
}

impl MapMessage {
    pub fn voxel_count(&self) -> usize {
        self.voxels.len() / 3
    }

    pub fn coords(&self) -> impl Iterator<Item = VoxelCoord> + '_ {
        self.voxels.chunks_exact(3).map(|c| VoxelCoord::new(c[0], c[1], c[2]))
    }
}

/// Splits a snapshot into `ceil(n / max_voxels)` chunks (one empty chunk for an empty map).
pub fn chunk_snapshot(snapshot: &VoxelSnapshot, max_voxels: usize) -> Vec<MapMessage> {
    assert!(max_voxels >= 1);
    let chunks: Vec<&[VoxelCoord]> = if snapshot.voxels.is_empty() {
        vec![&[]]
    } else {
        snapshot.voxels.chunks(max_voxels).collect()
    };
    let count = chunks.len() as u32;
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, voxels)| MapMessage {
            resolution: snapshot.resolution,
            revision: snapshot.revision,
            chunk_index: i as u32,
            chunk_count: count,
            voxels: voxels.iter().flat_map(|v| v.as_array()).collect(),
            drone_pose: snapshot.pose,
        })
        .collect()
}

/// Rate limiter for map publishes; the latest offered snapshot wins.
#[derive(Debug, Clone)]
pub struct MapThrottle {
    period: f64,
    last_publish: Option<f64>,
    pending: Option<Arc<VoxelSnapshot>>,
}

impl MapThrottle {
    pub fn new(rate_hz: f64) -> Self {
        assert!(rate_hz > 0.0);
        Self {
            period: 1.0 / rate_hz,
            last_publish: None,
            pending: None,
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Replaces any snapshot still waiting for its slot.
    pub fn offer(&mut self, snapshot: Arc<VoxelSnapshot>) {
        self.pending = Some(snapshot);
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// True when a publish at `now` would respect the rate limit.
    pub fn is_due(&self, now: f64) -> bool {
        self.last_publish.is_none_or(|last| now - last >= self.period - 1e-9)
    }

    pub fn last_publish(&self) -> Option<f64> {
        self.last_publish
    }

    /// Releases the pending snapshot if a full period has elapsed since the last publish.
    pub fn poll(&mut self, now: f64) -> Option<Arc<VoxelSnapshot>> {
        if self.is_due(now) && self.pending.is_some() {
            self.last_publish = Some(now);
            self.pending.take()
        } else {
            None
        }
    }
}

/// Client-side reassembly of chunked map revisions.
#[derive(Debug, Default, Clone)]
pub struct MapReassembler {
    assembling: Option<(u64, u32, BTreeMap<u32, Vec<i32>>)>,
    complete: Option<(u64, Vec<VoxelCoord>)>,
}

impl MapReassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true when this chunk completed a revision.
    pub fn push(&mut self, msg: &MapMessage) -> bool {
        if let Some((rev, _)) = &self.complete {
            if msg.revision <= *rev {
                return false;
            }
        }
        let stale = self.assembling.as_ref().is_some_and(|(rev, _, _)| msg.revision < *rev);
        if stale {
            return false;
        }
        let fresh = self.assembling.as_ref().is_none_or(|(rev, _, _)| msg.revision > *rev);
        if fresh {
            self.assembling = Some((msg.revision, msg.chunk_count, BTreeMap::new()));
        }
        let (rev, count, parts) = self.assembling.as_mut().unwrap();
        parts.insert(msg.chunk_index, msg.voxels.clone());
        if parts.len() as u32 == *count {
            let voxels = parts
                .values()
                .flat_map(|flat| flat.chunks_exact(3).map(|c| VoxelCoord::new(c[0], c[1], c[2])))
                .collect();
            self.complete = Some((*rev, voxels));
            self.assembling = None;
            return true;
        }
        false
    }

    pub fn latest(&self) -> Option<(u64, &[VoxelCoord])> {
        self.complete.as_ref().map(|(rev, v)| (*rev, v.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub bytes: u64,
    pub messages: u64,
}

/// Camera-stream alternative used for bandwidth comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpvModel {
    pub frames_per_second: f64,
    pub bytes_per_frame: f64,
}

impl Default for FpvModel {
    fn default() -> Self {
        Self {
            frames_per_second: 30.0,
            bytes_per_frame: 200_000.0,
        }
    }
}

/// Occupancy-map vs FPV data volume measured on a real flight: 272 MB vs 1.39 GB.
pub const REFERENCE_OCCUPANCY_BYTES: f64 = 272e6;
pub const REFERENCE_FPV_BYTES: f64 = 1.39e9;

pub fn reference_ratio() -> f64 {
    REFERENCE_OCCUPANCY_BYTES / REFERENCE_FPV_BYTES
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandwidthMeter {
    topics: BTreeMap<Topic, TopicStats>,
}

impl BandwidthMeter {
    pub fn record(&mut self, topic: Topic, payload_bytes: usize) {
        let s = self.topics.entry(topic).or_default();
        s.bytes += payload_bytes as u64;
        s.messages += 1;
    }

    pub fn stats(&self, topic: Topic) -> TopicStats {
        self.topics.get(&topic).copied().unwrap_or_default()
    }

    pub fn report(&self, duration: f64, fpv: FpvModel) -> BandwidthReport {
        let topics = Topic::ALL
            .into_iter()
            .map(|t| (t.as_str().to_owned(), self.stats(t)))
            .collect();
        let fpv_bytes = fpv.frames_per_second * fpv.bytes_per_frame * duration;
        let occupancy = self.stats(Topic::OccupancyMap).bytes as f64;
        BandwidthReport {
            topics,
            duration,
            fpv,
            fpv_bytes,
            occupancy_to_fpv_ratio: if fpv_bytes > 0.0 { occupancy / fpv_bytes } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub topics: BTreeMap<String, TopicStats>,
    pub duration: f64,
    pub fpv: FpvModel,
    pub fpv_bytes: f64,
    pub occupancy_to_fpv_ratio: f64,
}

impl fmt::Display for BandwidthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bandwidth over {:.1} s", self.duration)?;
        for (topic, s) in &self.topics {
            writeln!(f, "  {topic:<16} {:>12} bytes {:>8} msgs", s.bytes, s.messages)?;
        }
        writeln!(
            f,
            "  simulated FPV    {:>12.0} bytes ({} Hz x {} B)",
            self.fpv_bytes, self.fpv.frames_per_second, self.fpv.bytes_per_frame
        )?;
        write!(f, "  occupancy / FPV  {:.4}", self.occupancy_to_fpv_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(n: usize, revision: u64) -> VoxelSnapshot {
        VoxelSnapshot {
            resolution: 0.1,
            voxels: (0..n as i32).map(|i| VoxelCoord::new(i % 100, (i / 100) % 100, i / 10_000)).collect(),
            revision,
            pose: DronePose::default(),
        }
    }

    #[test]
    fn ten_hz_for_ten_seconds_publishes_at_most_21() {
        let mut throttle = MapThrottle::new(MAP_RATE_HZ);
        let mut publishes = Vec::new();
        for k in 1..=100 {
            let t = k as f64 * 0.1;
            throttle.offer(Arc::new(snapshot(1, k)));
            if let Some(s) = throttle.poll(t) {
                publishes.push((t, s.revision));
            }
        }
        assert!(publishes.len() <= 21, "{}", publishes.len());
        assert!(publishes.len() >= 19);
        for w in publishes.windows(2) {
            assert!(w[1].0 - w[0].0 >= 0.5 - 1e-9);
        }
    }

    #[test]
    fn latest_snapshot_wins() {
        let mut throttle = MapThrottle::new(2.0);
        throttle.offer(Arc::new(snapshot(1, 1)));
        assert_eq!(throttle.poll(0.0).unwrap().revision, 1);
        throttle.offer(Arc::new(snapshot(1, 2)));
        throttle.offer(Arc::new(snapshot(1, 3)));
        assert!(throttle.poll(0.2).is_none());
        assert_eq!(throttle.poll(0.5).unwrap().revision, 3);
        assert!(throttle.poll(5.0).is_none());
    }

    #[test]
    fn chunking_45k() {
        let msgs = chunk_snapshot(&snapshot(45_000, 9), MAX_VOXELS_PER_MESSAGE);
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].voxel_count(), 30_000);
        assert_eq!(msgs[1].voxel_count(), 15_000);
        assert!(msgs.iter().all(|m| m.revision == 9 && m.chunk_count == 2));
    }

    #[test]
    fn empty_snapshot_is_one_empty_chunk() {
        let msgs = chunk_snapshot(&snapshot(0, 0), MAX_VOXELS_PER_MESSAGE);
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].voxels.is_empty());
        assert_eq!(msgs[0].chunk_count, 1);
    }

    #[test]
    fn reassembly_ignores_stale_revisions() {
        let mut r = MapReassembler::new();
        let a = chunk_snapshot(&snapshot(5, 1), 2);
        let b = chunk_snapshot(&snapshot(7, 2), 3);
        assert!(!r.push(&a[0]));
        assert!(!r.push(&b[0]));
        // a is now stale
        assert!(!r.push(&a[1]));
        assert!(!r.push(&b[1]));
        assert!(r.push(&b[2]));
        let (rev, voxels) = r.latest().unwrap();
        assert_eq!(rev, 2);
        assert_eq!(voxels, snapshot(7, 2).voxels.as_slice());
    }

    #[test]
    fn client_frames() {
        assert_eq!(
            parse_client_frame(r#"{"op":"subscribe","topic":"/odometry"}"#),
            Ok(ClientRequest::Subscribe(Topic::Odometry))
        );
        let err = parse_client_frame("{oops").unwrap_err();
        assert_eq!(err.code, ErrorCode::ParseError);
        assert!(err.to_frame().contains(r#""code":"parse_error""#));
        assert_eq!(parse_client_frame(r#"{"op":"call","topic":"/odometry"}"#).unwrap_err().code, ErrorCode::UnknownOp);
        assert_eq!(parse_client_frame(r#"{"op":"subscribe","topic":"/nope"}"#).unwrap_err().code, ErrorCode::UnknownTopic);
        assert_eq!(
            parse_client_frame(r#"{"op":"publish","topic":"/odometry","payload":{}}"#).unwrap_err().code,
            ErrorCode::NotPublishable
        );
        assert_eq!(
            parse_client_frame(r#"{"op":"publish","topic":"/target","payload":{"position":[1,2]}}"#).unwrap_err().code,
            ErrorCode::InvalidPayload
        );
        assert_eq!(
            parse_client_frame(r#"{"op":"publish","topic":"/target","seq":4,"stamp":1.5,"payload":{"position":[1,2,3]}}"#),
            Ok(ClientRequest::PublishTarget {
                seq: 4,
                stamp: 1.5,
                position: Vec3::new(1.0, 2.0, 3.0)
            })
        );
    }

    #[test]
    fn publish_frame_is_valid_envelope() {
        let frame = publish_frame(Topic::Odometry, 3, 0.25, r#"{"a":1}"#);
        let env: Envelope = serde_json::from_str(&frame).unwrap();
        assert_eq!(env.op, Op::Publish);
        assert_eq!(env.topic, "/odometry");
        assert_eq!(env.seq, 3);
        assert_eq!(env.payload, serde_json::json!({"a": 1}));
    }

    #[test]
    fn bandwidth_report_zero_and_reference_ratio() {
        let meter = BandwidthMeter::default();
        let r = meter.report(0.0, FpvModel::default());
        assert!(r.topics.values().all(|s| s.bytes == 0 && s.messages == 0));
        assert_eq!(r.fpv_bytes, 0.0);
        assert!((reference_ratio() - 0.196).abs() < 5e-4);
    }
}
