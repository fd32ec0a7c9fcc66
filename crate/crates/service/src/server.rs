use std::net::SocketAddr;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use rcbf_core::task::TaskSpec;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::broadcast;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::live::{self, ServiceConfig, Shared};
use crate::protocol::{ClientMessage, NoticeFrame, ServerMessage, TaskFrame};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] rcbf_core::Error),
}

/// A running teleop server. Dropping it leaves the server running; call
/// [`Server::shutdown`] to stop it.
pub struct Server {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    accept: JoinHandle<()>,
    live: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    /// Binds `addr` and starts the real-time loop on `task`.
    pub async fn bind(addr: impl ToSocketAddrs, task: TaskSpec, config: ServiceConfig) -> Result<Self, ServiceError> {
        let safety = config.run.controller.safety;
        task.validate(&safety)?;
        config.run.delay.validate()?;
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared::new(TaskFrame::new(&task, 0, safety.r_rob, safety.d_min)));
        let (tx, _) = broadcast::channel(256);
        let v_max = safety.v_max_norm;
        let live = live::spawn(task, config, shared.clone(), tx.clone());
        let accept = tokio::spawn(accept_loop(listener, shared.clone(), tx, v_max));
        info!("teleop server listening on ws://{local_addr}");
        Ok(Self {
            local_addr,
            shared,
            accept,
            live: Some(live),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Runs until the accept loop ends (it only ends on shutdown or panic).
    pub async fn wait(mut self) {
        let _ = (&mut self.accept).await;
    }

    pub async fn shutdown(mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        self.accept.abort();
        if let Some(h) = self.live.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
    }
}

/// Binds and serves forever.
pub async fn serve(addr: impl ToSocketAddrs, task: TaskSpec, config: ServiceConfig) -> Result<(), ServiceError> {
    Server::bind(addr, task, config).await?.wait().await;
    Ok(())
}

async fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    tx: broadcast::Sender<ServerMessage>,
    v_max: f64,
) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let shared = shared.clone();
                let tx = tx.clone();
                tokio::spawn(async move {
                    if let Err(e) = connection(stream, shared, tx, v_max).await {
                        debug!("connection {peer} ended: {e}");
                    }
                });
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn notice(shared: &Shared, message: impl Into<String>) -> NoticeFrame {
    NoticeFrame {
        seq: 0,
        t: shared.clock(),
        message: message.into(),
    }
}

/// Clears the operator flag even if the connection task unwinds.
struct OperatorGuard(Arc<Shared>);

impl Drop for OperatorGuard {
    fn drop(&mut self) {
        self.0.operator.store(false, Ordering::Release);
        info!("operator disconnected; deadman will stop the robot");
    }
}

async fn connection(
    stream: TcpStream,
    shared: Arc<Shared>,
    tx: broadcast::Sender<ServerMessage>,
    v_max: f64,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let mut seq = 0u64;
    let mut send = |mut msg: ServerMessage| {
        seq += 1;
        msg.set_seq(seq);
        Message::text(msg.to_json())
    };

    if shared
        .operator
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        let busy = ServerMessage::Busy(notice(&shared, "another operator is connected"));
        sink.send(send(busy)).await?;
        sink.close().await?;
        return Ok(());
    }
    let _guard = OperatorGuard(shared.clone());
    shared.inbox.lock().expect("inbox lock").new_session();
    info!("operator connected");

    let mut rx = tx.subscribe();
    let mut task = ServerMessage::Task(shared.task.lock().expect("task lock").clone());
    task.stamp(0, shared.clock());
    sink.send(send(task)).await?;

    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(msg) => sink.send(send(msg)).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("client lagging, dropped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = source.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Close(_))) | None => break,
                    Some(Ok(Message::Binary(_))) => {
                        let err = ServerMessage::Error(notice(&shared, "expected a JSON text frame"));
                        sink.send(send(err)).await?;
                        continue;
                    }
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => return Err(e),
                };
                if let Some(reason) = handle_client(text.as_str(), &shared, v_max) {
                    let err = ServerMessage::Error(notice(&shared, reason));
                    sink.send(send(err)).await?;
                }
            }
        }
    }
    Ok(())
}

/// Applies one client frame; returns the rejection reason if any.
fn handle_client(text: &str, shared: &Shared, v_max: f64) -> Option<String> {
    let msg = match ClientMessage::parse(text) {
        Ok(m) => m,
        Err(e) => return Some(format!("malformed message: {e}")),
    };
    match msg {
        ClientMessage::Command(frame) => shared
            .inbox
            .lock()
            .expect("inbox lock")
            .accept_command(&frame, v_max)
            .err(),
        ClientMessage::Config(frame) => {
            let delay = match frame.delay.as_ref().map(|d| d.to_model()).transpose() {
                Ok(d) => d,
                Err(e) => return Some(format!("config {} rejected: {e}", frame.seq)),
            };
            shared.inbox.lock().expect("inbox lock").configure(delay, frame.margin);
            None
        }
    }
}
