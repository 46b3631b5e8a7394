//! Connection registry and per-connection outbound queues.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::{mpsc, Notify};
use voxbridge_core::mesh::MeshAsset;
use voxbridge_core::mission::OutboundFrame;
use voxbridge_core::protocol::{publish_frame, TargetCommand, Topic, TopicStats, OUTBOUND_QUEUE_CAPACITY};

#[derive(Debug, Clone)]
pub enum Outgoing {
    Frame(OutboundFrame),
    /// Replies and static payloads; never dropped and not counted against the cap.
    Control(Arc<str>),
}

impl Outgoing {
    pub fn text(&self) -> &str {
        match self {
            Outgoing::Frame(f) => &f.text,
            Outgoing::Control(t) => t,
        }
    }
}

/// Bounded outbound queue. When full, the oldest map revision goes first (all of its
/// chunks), then the oldest other frame.
#[derive(Debug)]
pub struct OutQueue {
    items: VecDeque<Outgoing>,
    capacity: usize,
    dropped: u64,
}

impl OutQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::new(),
            capacity: capacity.max(1),
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.frame_count()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn frame_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, Outgoing::Frame(_))).count()
    }

    pub fn push(&mut self, item: Outgoing) {
        if let Outgoing::Frame(incoming) = &item {
            if self.frame_count() >= self.capacity {
                self.make_room(incoming);
            }
        }
        self.items.push_back(item);
    }

    pub fn pop(&mut self) -> Option<Outgoing> {
        self.items.pop_front()
    }

    fn make_room(&mut self, incoming: &OutboundFrame) {
        let is_map = |f: &OutboundFrame| f.topic == Topic::OccupancyMap;
        let oldest_revision = self
            .items
            .iter()
            .filter_map(|i| match i {
                Outgoing::Frame(f) if is_map(f) => f.revision,
                _ => None,
            })
            .filter(|rev| !is_map(incoming) || incoming.revision.is_none_or(|inc| *rev < inc))
            .min();
        if let Some(rev) = oldest_revision {
            let before = self.items.len();
            self.items
                .retain(|i| !matches!(i, Outgoing::Frame(f) if is_map(f) && f.revision == Some(rev)));
            self.dropped += (before - self.items.len()) as u64;
            return;
        }
        let same_revision = |f: &OutboundFrame| is_map(f) && is_map(incoming) && f.revision == incoming.revision;
        if let Some(pos) = self
            .items
            .iter()
            .position(|i| matches!(i, Outgoing::Frame(f) if !same_revision(f)))
        {
            self.items.remove(pos);
            self.dropped += 1;
        }
    }
}

pub struct Connection {
    pub id: u64,
    subscriptions: Mutex<HashSet<Topic>>,
    queue: Mutex<OutQueue>,
    notify: Notify,
    closed: AtomicBool,
    target_seqs: Mutex<HashSet<u64>>,
}

impl Connection {
    fn new(id: u64, capacity: usize) -> Self {
        Self {
            id,
            subscriptions: Mutex::new(HashSet::new()),
            queue: Mutex::new(OutQueue::new(capacity)),
            notify: Notify::new(),
            closed: AtomicBool::new(false),
            target_seqs: Mutex::new(HashSet::new()),
        }
    }

    pub fn is_subscribed(&self, topic: Topic) -> bool {
        self.subscriptions.lock().unwrap().contains(&topic)
    }

    pub fn enqueue(&self, item: Outgoing) {
        self.queue.lock().unwrap().push(item);
        self.notify.notify_one();
    }

    pub fn try_pop(&self) -> Option<Outgoing> {
        self.queue.lock().unwrap().pop()
    }

    /// Waits for the next outbound item; `None` once closed and drained.
    pub async fn next(&self) -> Option<Outgoing> {
        loop {
            if let Some(item) = self.try_pop() {
                return Some(item);
            }
            if self.closed.load(Ordering::Acquire) {
                return None;
            }
            self.notify.notified().await;
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.lock().unwrap().dropped()
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    /// Records a /target seq; false if this connection already used it.
    pub fn claim_target_seq(&self, seq: u64) -> bool {
        self.target_seqs.lock().unwrap().insert(seq)
    }
}

/// Shared state of a running server: connections, subscriptions, the static mesh and
/// the command channel toward the simulator.
pub struct Hub {
    connections: Mutex<HashMap<u64, Arc<Connection>>>,
    next_id: AtomicU64,
    capacity: usize,
    mesh_frame: Option<Arc<str>>,
    mesh_payload_bytes: usize,
    mesh_sends: AtomicU64,
    targets: mpsc::UnboundedSender<TargetCommand>,
    received_targets: AtomicU64,
}

impl Hub {
    pub fn new(mesh: Option<&MeshAsset>) -> (Arc<Self>, mpsc::UnboundedReceiver<TargetCommand>) {
        Self::with_capacity(mesh, OUTBOUND_QUEUE_CAPACITY)
    }

    pub fn with_capacity(
        mesh: Option<&MeshAsset>,
        capacity: usize,
    ) -> (Arc<Self>, mpsc::UnboundedReceiver<TargetCommand>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let payload = mesh.map(|m| m.to_wire_json());
        let hub = Self {
            connections: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            capacity,
            mesh_payload_bytes: payload.as_ref().map_or(0, String::len),
            mesh_frame: payload.map(|p| publish_frame(Topic::MeshMap, 1, 0.0, &p).into()),
            mesh_sends: AtomicU64::new(0),
            targets: tx,
            received_targets: AtomicU64::new(0),
        };
        (Arc::new(hub), rx)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn register(&self) -> Arc<Connection> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let conn = Arc::new(Connection::new(id, self.capacity));
        self.connections.lock().unwrap().insert(id, conn.clone());
        conn
    }

    pub fn unregister(&self, id: u64) {
        if let Some(conn) = self.connections.lock().unwrap().remove(&id) {
            conn.close();
        }
    }

    pub fn subscribe(&self, conn: &Connection, topic: Topic) {
        let added = conn.subscriptions.lock().unwrap().insert(topic);
        if added && topic == Topic::MeshMap {
            if let Some(frame) = &self.mesh_frame {
                self.mesh_sends.fetch_add(1, Ordering::Relaxed);
                conn.enqueue(Outgoing::Control(frame.clone()));
            }
        }
    }

    pub fn unsubscribe(&self, conn: &Connection, topic: Topic) {
        conn.subscriptions.lock().unwrap().remove(&topic);
    }

    /// Queues `frame` for every subscriber of its topic.
    pub fn broadcast(&self, frame: &OutboundFrame) {
        let conns = self.connections.lock().unwrap();
        for conn in conns.values() {
            if conn.is_subscribed(frame.topic) {
                conn.enqueue(Outgoing::Frame(frame.clone()));
            }
        }
    }

    pub fn forward_target(&self, cmd: TargetCommand) {
        self.received_targets.fetch_add(1, Ordering::Relaxed);
        // The receiver only goes away at shutdown.
        let _ = self.targets.send(cmd);
    }

    pub fn received_targets(&self) -> u64 {
        self.received_targets.load(Ordering::Relaxed)
    }

    pub fn connection_count(&self) -> usize {
        self.connections.lock().unwrap().len()
    }

    pub fn subscriber_count(&self, topic: Topic) -> usize {
        self.connections
            .lock()
            .unwrap()
            .values()
            .filter(|c| c.is_subscribed(topic))
            .count()
    }

    /// Longest outbound queue over all connections.
    pub fn max_queue_len(&self) -> usize {
        self.connections
            .lock()
            .unwrap()
            .values()
            .map(|c| c.queue_len())
            .max()
            .unwrap_or(0)
    }

    /// Per-subscription sends of the static mesh.
    pub fn mesh_stats(&self) -> TopicStats {
        let messages = self.mesh_sends.load(Ordering::Relaxed);
        TopicStats {
            bytes: messages * self.mesh_payload_bytes as u64,
            messages,
        }
    }

    pub fn close_all(&self) {
        for conn in self.connections.lock().unwrap().values() {
            conn.close();
        }
    }
}
