//! Re-emits a recorded session on the bridge topics.

use std::time::Duration;

use tokio::sync::watch;
use tokio::time::Instant;
use voxbridge_core::metrics::{self, MetricsError, SessionLog};
use voxbridge_core::mission::OutboundFrame;
use voxbridge_core::protocol::{publish_frame, Topic};

use crate::driver::wait_for_room;
use crate::hub::Hub;

/// Frames for every topic-bearing event, with offsets from the start of emission.
pub fn replay_frames(log: &SessionLog, speed: f64) -> Result<Vec<(f64, OutboundFrame)>, MetricsError> {
    let mut seqs = std::collections::HashMap::<Topic, u64>::new();
    let mut out = Vec::new();
    for (offset, event) in metrics::replay(log, speed)? {
        let Some(topic) = event.kind.topic() else { continue };
        let seq = seqs.entry(topic).or_default();
        *seq += 1;
        let text = publish_frame(topic, *seq, event.stamp, &event.payload.to_string());
        out.push((
            offset,
            OutboundFrame {
                topic,
                seq: *seq,
                stamp: event.stamp,
                revision: None,
                text: text.into(),
            },
        ));
    }
    Ok(out)
}

/// Broadcasts the session at `speed` times its recorded pace. Returns frames sent.
pub async fn replay_to_hub(
    log: &SessionLog,
    speed: f64,
    hub: &Hub,
    shutdown: watch::Receiver<bool>,
) -> Result<usize, MetricsError> {
    let frames = replay_frames(log, speed)?;
    let start = Instant::now();
    let mut sent = 0;
    for (offset, frame) in &frames {
        if *shutdown.borrow() {
            break;
        }
        if offset.is_finite() && *offset > 0.0 {
            tokio::time::sleep_until(start + Duration::from_secs_f64(*offset)).await;
        } else {
            wait_for_room(hub).await;
        }
        hub.broadcast(frame);
        sent += 1;
    }
    Ok(sent)
}
