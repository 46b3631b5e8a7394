//! Runs a [`MissionRunner`] against a hub: feeds in client targets, ticks the simulator
//! and fans frames out to subscribers.

use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, watch};
use tokio::time::Instant;
use voxbridge_core::mission::{MissionRunner, OutboundFrame};
use voxbridge_core::protocol::{TargetCommand, Topic};

use crate::hub::Hub;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pace {
    /// One simulated second per wall second.
    Realtime,
    /// As fast as subscribers keep up.
    Fast,
}

/// Longest a fast run waits for slow subscribers before moving on.
const BACKPRESSURE_LIMIT: Duration = Duration::from_secs(2);

/// Fast mode: hold off while any subscriber queue is at least half full.
pub async fn wait_for_room(hub: &Hub) {
    let threshold = (hub.capacity() / 2).max(1);
    let deadline = Instant::now() + BACKPRESSURE_LIMIT;
    while hub.max_queue_len() >= threshold && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(1)).await;
    }
}

/// Resolves once `count` connections are subscribed to `topic`.
pub async fn wait_for_subscribers(hub: &Hub, topic: Topic, count: usize) {
    while hub.subscriber_count(topic) < count {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

async fn flush(hub: &Hub, frames: Vec<OutboundFrame>, pace: Pace, start: Instant) {
    for frame in frames {
        if pace == Pace::Realtime {
            tokio::time::sleep_until(start + Duration::from_secs_f64(frame.stamp.max(0.0))).await;
        }
        hub.broadcast(&frame);
    }
    if pace == Pace::Fast {
        wait_for_room(hub).await;
    }
}

/// Drives the mission until it finishes or `shutdown` flips, then returns the runner
/// for reporting.
pub async fn drive(
    mut runner: MissionRunner,
    hub: Arc<Hub>,
    mut targets: mpsc::UnboundedReceiver<TargetCommand>,
    pace: Pace,
    mut shutdown: watch::Receiver<bool>,
) -> MissionRunner {
    let start = Instant::now() - Duration::from_secs_f64(runner.time());
    loop {
        if *shutdown.borrow() {
            runner.stop();
            break;
        }
        while let Ok(cmd) = targets.try_recv() {
            runner.submit_target(cmd);
        }
        let running = runner.tick();
        let frames: Vec<OutboundFrame> = runner.drain_frames().collect();
        flush(&hub, frames, pace, start).await;
        if !running {
            break;
        }
        match pace {
            Pace::Realtime => {
                let due = start + Duration::from_secs_f64(runner.time());
                tokio::select! {
                    _ = tokio::time::sleep_until(due) => {}
                    _ = shutdown.changed() => {}
                }
            }
            Pace::Fast => tokio::task::yield_now().await,
        }
    }
    let frames: Vec<OutboundFrame> = runner.drain_frames().collect();
    flush(&hub, frames, Pace::Fast, start).await;
    runner
}
