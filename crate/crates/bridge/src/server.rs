//! WebSocket endpoint: accepts consoles, applies their subscribe/unsubscribe/publish
//! requests and streams queued frames back.

use std::io::Write;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use flate2::write::GzEncoder;
use flate2::Compression;
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio_tungstenite::tungstenite::protocol::WebSocketConfig;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};
use voxbridge_core::protocol::{
    parse_client_frame, ClientRequest, ErrorCode, ProtocolError, TargetCommand, Topic, MAX_FRAME_BYTES,
};

use crate::hub::{Connection, Hub, Outgoing};

/// How long a closing connection may keep flushing its queue.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy)]
pub struct ServerOptions {
    /// Send every frame as a gzip-compressed binary message.
    pub gzip: bool,
    pub max_frame_bytes: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            gzip: false,
            max_frame_bytes: MAX_FRAME_BYTES,
        }
    }
}

/// Accepts connections until `shutdown` flips to true.
pub async fn serve(listener: TcpListener, hub: Arc<Hub>, opts: ServerOptions, mut shutdown: watch::Receiver<bool>) {
    if let Ok(addr) = listener.local_addr() {
        info!(%addr, "bridge listening");
    }
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tokio::spawn(handle_client(stream, peer, hub.clone(), opts, shutdown.clone()));
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            _ = shutdown.changed() => {
                if *shutdown.borrow() {
                    break;
                }
            }
        }
    }
    hub.close_all();
}

fn encode(item: &Outgoing, gzip: bool) -> Message {
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(item.text().as_bytes()).expect("in-memory write");
        Message::Binary(enc.finish().expect("in-memory write"))
    } else {
        Message::Text(item.text().to_owned())
    }
}

/// Serves one console until it disconnects, sends an oversize frame, or the server stops.
pub async fn handle_client(
    stream: TcpStream,
    peer: SocketAddr,
    hub: Arc<Hub>,
    opts: ServerOptions,
    mut shutdown: watch::Receiver<bool>,
) {
    let config = WebSocketConfig {
        max_message_size: Some(opts.max_frame_bytes),
        max_frame_size: Some(opts.max_frame_bytes),
        ..Default::default()
    };
    let ws = match tokio_tungstenite::accept_async_with_config(stream, Some(config)).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(%peer, error = %e, "handshake failed");
            return;
        }
    };
    let conn = hub.register();
    debug!(%peer, id = conn.id, "client connected");
    let (mut sink, mut source) = ws.split();

    let writer_conn = conn.clone();
    let writer = tokio::spawn(async move {
        while let Some(item) = writer_conn.next().await {
            if sink.send(encode(&item, opts.gzip)).await.is_err() {
                break;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });

    loop {
        tokio::select! {
            msg = source.next() => match msg {
                Some(Ok(Message::Text(text))) => handle_text(&hub, &conn, &text),
                Some(Ok(Message::Binary(bytes))) => match std::str::from_utf8(&bytes) {
                    Ok(text) => handle_text(&hub, &conn, text),
                    Err(_) => reply_error(&conn, ProtocolError::new(ErrorCode::ParseError, "frames must be UTF-8 JSON", None)),
                },
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => {}
                Some(Err(e)) => {
                    debug!(%peer, error = %e, "dropping client");
                    break;
                }
            },
            _ = shutdown.changed() => {
                if *shutdown.borrow() {
                    break;
                }
            }
        }
    }

    hub.unregister(conn.id);
    if tokio::time::timeout(DRAIN_TIMEOUT, writer).await.is_err() {
        debug!(%peer, "writer did not drain in time");
    }
    debug!(%peer, id = conn.id, "client disconnected");
}

fn reply_error(conn: &Connection, err: ProtocolError) {
    conn.enqueue(Outgoing::Control(err.to_frame().into()));
}

fn handle_text(hub: &Hub, conn: &Connection, text: &str) {
    match parse_client_frame(text) {
        Ok(ClientRequest::Subscribe(topic)) => hub.subscribe(conn, topic),
        Ok(ClientRequest::Unsubscribe(topic)) => hub.unsubscribe(conn, topic),
        Ok(ClientRequest::PublishTarget { seq, stamp, position }) => {
            if !conn.claim_target_seq(seq) {
                reply_error(
                    conn,
                    ProtocolError::new(
                        ErrorCode::DuplicateSeq,
                        format!("seq {seq} already used on /target"),
                        Some(Topic::Target.as_str()),
                    ),
                );
                return;
            }
            hub.forward_target(TargetCommand {
                position,
                seq,
                client_id: format!("client-{}", conn.id),
                stamp,
            });
        }
        Err(err) => reply_error(conn, err),
    }
}
