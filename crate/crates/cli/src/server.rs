//! WebSocket transport for live sessions.
//!
//! Each connection owns one [`Session`] on its own thread, paced against the
//! wall clock at the leader rate. Socket I/O talks to that thread through
//! bounded queues: inbound text frames wait for room (backpressure on the
//! client), outbound messages drop the oldest state snapshot when the client
//! reads too slowly.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use teleop_core::session::{ServerMessage, Session};
use teleop_core::sim::RunConfig;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, Notify};

/// Client frames buffered ahead of the session loop.
pub const INBOUND_CAPACITY: usize = 256;
/// Server messages buffered ahead of the socket writer.
pub const OUTBOUND_CAPACITY: usize = 64;
/// Leader ticks run back to back at most before the inbox is drained again.
const MAX_CATCH_UP_TICKS: u64 = 50;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub stream_hz: f64,
    /// Where to write a summary of each closed session.
    pub output_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { stream_hz: 60.0, output_dir: None }
    }
}

struct App {
    cfg: RunConfig,
    opts: ServeOptions,
    next_id: AtomicU64,
}

/// Bounded outbound queue. When full, the oldest state snapshot is dropped
/// (or the oldest message if no snapshot is queued) and counted.
pub struct Outbox {
    inner: Mutex<OutboxInner>,
    notify: Notify,
    capacity: usize,
}

struct OutboxInner {
    queue: VecDeque<ServerMessage>,
    closed: bool,
    dropped: u64,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(OutboxInner { queue: VecDeque::new(), closed: false, dropped: 0 }),
            notify: Notify::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&self, msg: ServerMessage) {
        let mut inner = self.inner.lock().expect("outbox lock");
        if inner.queue.len() >= self.capacity {
            let victim = inner.queue.iter().position(ServerMessage::is_state).unwrap_or(0);
            inner.queue.remove(victim);
            inner.dropped += 1;
        }
        inner.queue.push_back(msg);
        drop(inner);
        self.notify.notify_one();
    }

    pub fn close(&self) {
        self.inner.lock().expect("outbox lock").closed = true;
        self.notify.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().expect("outbox lock").dropped
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("outbox lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Takes everything queued, waiting if empty. `None` once closed and drained.
    pub async fn drain(&self) -> Option<Vec<ServerMessage>> {
        loop {
            {
                let mut inner = self.inner.lock().expect("outbox lock");
                if !inner.queue.is_empty() {
                    return Some(inner.queue.drain(..).collect());
                }
                if inner.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }
}

pub fn router(cfg: RunConfig, opts: ServeOptions) -> Router {
    let app = Arc::new(App { cfg, opts, next_id: AtomicU64::new(1) });
    Router::new().route("/ws", get(upgrade)).route("/health", get(|| async { "ok" })).with_state(app)
}

async fn upgrade(ws: WebSocketUpgrade, State(app): State<Arc<App>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, app))
}

async fn connection(socket: WebSocket, app: Arc<App>) {
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let session = match Session::new(&app.cfg, id) {
        Ok(s) => s,
        Err(e) => {
            let msg = json!({ "type": "error", "code": "config", "message": e.to_string() });
            let _ = sink.send(Message::Text(msg.to_string().into())).await;
            return;
        }
    };
    let (in_tx, in_rx) = mpsc::channel::<String>(INBOUND_CAPACITY);
    let outbox = Arc::new(Outbox::new(OUTBOUND_CAPACITY));
    let loop_outbox = outbox.clone();
    let stream_hz = app.opts.stream_hz;
    let runner = tokio::task::spawn_blocking(move || {
        let summary = session_loop(session, in_rx, &loop_outbox, stream_hz);
        loop_outbox.close();
        summary
    });
    let writer_outbox = outbox.clone();
    let writer = tokio::spawn(async move {
        while let Some(batch) = writer_outbox.drain().await {
            for msg in batch {
                let Ok(text) = serde_json::to_string(&msg) else { continue };
                if sink.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => {
                if in_tx.send(text.to_string()).await.is_err() {
                    break;
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    drop(in_tx);
    let summary = runner.await.ok();
    writer.abort();
    if let (Some(dir), Some(summary)) = (&app.opts.output_dir, summary) {
        if std::fs::create_dir_all(dir).is_ok() {
            let path = dir.join(format!("session-{id}.json"));
            let _ = std::fs::write(path, serde_json::to_string_pretty(&summary).unwrap_or_default() + "\n");
        }
    }
}

/// Runs a session against the wall clock until the inbound queue closes.
/// Returns a JSON summary of the session.
pub fn session_loop(mut session: Session, mut inbox: mpsc::Receiver<String>, outbox: &Outbox, stream_hz: f64) -> serde_json::Value {
    let rate = session.leader_rate_hz();
    let frame_ticks = ((rate / stream_hz).round() as u64).max(1);
    let start = Instant::now();
    let mut failure = None;
    'run: loop {
        loop {
            match inbox.try_recv() {
                Ok(text) => outbox.push(session.handle_text(&text)),
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => break 'run,
            }
        }
        let due = (start.elapsed().as_secs_f64() * rate) as u64;
        let mut ran = 0;
        while session.ticks() < due && ran < MAX_CATCH_UP_TICKS {
            if session.ticks() + 1 < due {
                session.stats_mut().budget_violations += 1;
            }
            match session.tick() {
                Ok(events) => events.into_iter().for_each(|e| outbox.push(e)),
                Err(e) => {
                    failure = Some(e.to_string());
                    break 'run;
                }
            }
            ran += 1;
            if session.ticks() % frame_ticks == 0 {
                let lag_ms = (start.elapsed().as_secs_f64() - session.t()) * 1e3;
                let stats = session.stats_mut();
                stats.lag_ms = lag_ms;
                stats.slow_consumer_drops = outbox.dropped();
                outbox.push(ServerMessage::State(session.snapshot()));
            }
        }
        let next = Duration::from_secs_f64((session.ticks() + 1) as f64 / rate);
        if let Some(wait) = next.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
    }
    if let Some(e) = &failure {
        eprintln!("session {}: {e}", session.id());
    }
    json!({
        "session": session.id(),
        "ticks": session.ticks(),
        "t": session.t(),
        "stats": session.stats(),
        "error": failure,
    })
}

/// Binds `addr` and serves until the listener fails.
pub async fn serve(listener: TcpListener, cfg: RunConfig, opts: ServeOptions) -> std::io::Result<()> {
    axum::serve(listener, router(cfg, opts)).await
}

/// Starts a server on a background runtime thread. Returns the bound address.
pub fn spawn(cfg: RunConfig, addr: SocketAddr, opts: ServeOptions) -> std::io::Result<SocketAddr> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
        rt.block_on(async move {
            let listener = TcpListener::from_std(listener).expect("listener");
            let _ = serve(listener, cfg, opts).await;
        });
    });
    Ok(local)
}

/// `serve` subcommand body.
pub fn serve_blocking(cfg: RunConfig, host: &str, port: u16, stream_hz: f64, output_dir: Option<PathBuf>) -> std::io::Result<()> {
    if !(stream_hz > 0.0 && stream_hz.is_finite()) {
        return Err(std::io::Error::other(format!("stream rate must be positive, got {stream_hz}")));
    }
    Session::new(&cfg, 0).map_err(|e| std::io::Error::other(e.to_string()))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = TcpListener::bind((host, port)).await?;
        println!("listening on ws://{}/ws", listener.local_addr()?);
        serve(listener, cfg, ServeOptions { stream_hz, output_dir }).await
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use teleop_core::session::RequestKind;

    fn ack(seq: u64) -> ServerMessage {
        ServerMessage::Ack { request: RequestKind::LeaderDelta, seq: Some(seq), stale: false }
    }

    fn state(version: u64) -> ServerMessage {
        let cfg = RunConfig::default();
        let mut s = Session::new(&cfg, 1).unwrap();
        let mut snap = s.snapshot();
        snap.version = version;
        ServerMessage::State(snap)
    }

    #[tokio::test]
    async fn full_outbox_drops_oldest_state_first() {
        let outbox = Outbox::new(3);
        outbox.push(ack(0));
        outbox.push(state(1));
        outbox.push(state(2));
        outbox.push(ack(1));
        outbox.push(state(3));
        assert_eq!(outbox.dropped(), 2);
        let got = outbox.drain().await.unwrap();
        assert_eq!(got, vec![ack(0), ack(1), state(3)]);
        outbox.close();
        assert!(outbox.drain().await.is_none());
    }

    #[tokio::test]
    async fn outbox_of_acks_drops_oldest() {
        let outbox = Outbox::new(2);
        for k in 0..5 {
            outbox.push(ack(k));
        }
        assert_eq!(outbox.len(), 2);
        assert_eq!(outbox.drain().await.unwrap(), vec![ack(3), ack(4)]);
    }
}
