//! The live service: one simulation thread, any number of WebSocket
//! clients.
//!
//! Commands cross a bounded queue into the simulation and are never
//! dropped. Broadcasts fan out per client: state, estimates, feedback
//! requests, calibration echoes and errors go on an unbounded channel,
//! scene frames on a short bounded one that drops frames when full.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError as StdTrySendError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::mpsc::{self, error::TrySendError};

use feeding_core::bridge::protocol::{current_state, parse_client, CalibrationBody, Payload, Sequencer};
use feeding_core::bridge::{record_header, LiveDriver, SessionRecord};
use feeding_core::geometry::Vec3;
use feeding_core::scenario::Scenario;
use feeding_core::task::{CommandKind, Source, TaskState};

/// Scene frames a client may lag behind by before frames are dropped.
pub const SCENE_QUEUE: usize = 32;
/// Commands in flight between the network and the simulation.
pub const COMMAND_QUEUE: usize = 256;

const INDEX: &str = include_str!("../static/index.html");

pub struct ServeConfig {
    pub scenario: Scenario,
    pub addr: SocketAddr,
    /// Simulated seconds per wall second; None runs as fast as possible.
    pub speed: Option<f64>,
    /// Calibration file to load and persist.
    pub calibration: Option<PathBuf>,
}

type Outgoing = (Payload, f64);

struct Client {
    id: u64,
    critical: mpsc::UnboundedSender<Outgoing>,
    scenes: mpsc::Sender<Outgoing>,
}

struct Hub {
    clients: Vec<Client>,
    state: TaskState,
    calibration: Vec3,
    time: f64,
    next_id: u64,
    dropped_scenes: u64,
}

impl Hub {
    fn publish(&mut self, payload: Payload, time: f64) {
        self.time = time;
        match &payload {
            Payload::State(s) => self.state = s.state,
            Payload::Calibration(c) => self.calibration = c.offset,
            _ => {}
        }
        let scene = matches!(payload, Payload::Scene(_));
        let mut dropped = 0;
        self.clients.retain(|c| {
            if !scene {
                return c.critical.send((payload.clone(), time)).is_ok();
            }
            match c.scenes.try_send((payload.clone(), time)) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    dropped += 1;
                    true
                }
                Err(TrySendError::Closed(_)) => false,
            }
        });
        self.dropped_scenes += dropped;
    }
}

#[derive(Clone)]
struct App {
    hub: Arc<Mutex<Hub>>,
    commands: SyncSender<(CommandKind, Source)>,
}

fn lock(hub: &Mutex<Hub>) -> MutexGuard<'_, Hub> {
    // a panicking client task must not take the service down with it
    hub.lock().unwrap_or_else(|e| e.into_inner())
}

/// What the simulation thread leaves behind.
pub struct Finished {
    pub record: SessionRecord,
    /// Set when the executive stopped on an internal error.
    pub error: Option<String>,
    pub dropped_scenes: u64,
}

pub struct Server {
    pub addr: SocketAddr,
    hub: Arc<Mutex<Hub>>,
    commands: SyncSender<(CommandKind, Source)>,
    shutdown: Arc<AtomicBool>,
    sim: Option<JoinHandle<(SessionRecord, Option<String>)>>,
    http: tokio::task::JoinHandle<()>,
}

fn live_session_id() -> String {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("live-{:x}", t.as_millis())
}

/// Builds the executive, starts the simulation thread and binds the listener.
pub async fn start(cfg: ServeConfig) -> Result<Server> {
    let mut exec = cfg.scenario.executive()?;
    if let Some(p) = cfg.calibration {
        exec = exec.with_calibration_file(p)?;
    }
    let hub = Arc::new(Mutex::new(Hub {
        clients: Vec::new(),
        state: exec.state(),
        calibration: exec.calibration().offset(),
        time: 0.0,
        next_id: 0,
        dropped_scenes: 0,
    }));
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    let addr = listener.local_addr()?;

    let (tx, rx) = sync_channel(COMMAND_QUEUE);
    let shutdown = Arc::new(AtomicBool::new(false));
    let sim = {
        let hub = hub.clone();
        let shutdown = shutdown.clone();
        let header = record_header(&cfg.scenario, live_session_id());
        let speed = cfg.speed;
        std::thread::Builder::new().name("sim".into()).spawn(move || {
            let mut driver = LiveDriver::new(rx, |p, t| lock(&hub).publish(p, t), speed, shutdown);
            let result = exec.run(&mut driver, u64::MAX);
            let record = SessionRecord { header, events: exec.events().to_vec() };
            (record, result.err().map(|e| e.to_string()))
        })?
    };

    let app = App { hub: hub.clone(), commands: tx.clone() };
    let router = Router::new().route("/", get(index)).route("/ws", get(upgrade)).with_state(app);
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            log::error!("http: {e}");
        }
    });
    log::info!("serving on http://{addr}");
    Ok(Server { addr, hub, commands: tx, shutdown, sim: Some(sim), http })
}

impl Server {
    /// Current executive state as last broadcast.
    pub fn state(&self) -> TaskState {
        lock(&self.hub).state
    }

    /// Stops the service. A running subtask is stopped and returns to
    /// Idle first, so this can take a while at real-time speed.
    pub async fn stop(mut self) -> Result<Finished> {
        if self.state() != TaskState::Idle {
            let _ = self.commands.try_send((CommandKind::Stop, Source::Cli));
        }
        self.shutdown.store(true, Ordering::SeqCst);
        let sim = self.sim.take().expect("stopped once");
        let (record, error) = tokio::task::spawn_blocking(move || sim.join())
            .await?
            .map_err(|_| anyhow!("simulation thread panicked"))?;
        let dropped_scenes = {
            let mut hub = lock(&self.hub);
            hub.clients.clear();
            hub.dropped_scenes
        };
        self.http.abort();
        Ok(Finished { record, error, dropped_scenes })
    }
}

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

async fn upgrade(ws: WebSocketUpgrade, State(app): State<App>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, app))
}

/// Hands a command to the simulation, waiting while the queue is full.
async fn forward(app: &App, command: CommandKind) -> Result<(), String> {
    let mut item = (command, Source::Ui);
    loop {
        match app.commands.try_send(item) {
            Ok(()) => return Ok(()),
            Err(StdTrySendError::Full(back)) => {
                item = back;
                tokio::time::sleep(Duration::from_millis(1)).await;
            }
            Err(StdTrySendError::Disconnected(_)) => return Err("service is shutting down".into()),
        }
    }
}

async fn session(socket: WebSocket, app: App) {
    let (critical, mut critical_rx) = mpsc::unbounded_channel();
    let (scenes, mut scenes_rx) = mpsc::channel(SCENE_QUEUE);
    let id = {
        let mut hub = lock(&app.hub);
        let id = hub.next_id;
        hub.next_id += 1;
        let t = hub.time;
        let _ = critical.send((current_state(hub.state), t));
        let _ = critical.send((Payload::Calibration(CalibrationBody { offset: hub.calibration }), t));
        hub.clients.push(Client { id, critical: critical.clone(), scenes });
        id
    };
    let (mut sink, mut stream) = socket.split();

    let writer = async move {
        let mut seq = Sequencer::default();
        loop {
            let (payload, t) = tokio::select! {
                biased;
                m = critical_rx.recv() => match m {
                    Some(m) => m,
                    None => break,
                },
                Some(m) = scenes_rx.recv() => m,
            };
            if sink.send(Message::Text(seq.stamp(payload, t).to_json().into())).await.is_err() {
                break;
            }
        }
    };

    let reader = async {
        let reply = |reason: String| {
            let t = lock(&app.hub).time;
            let _ = critical.send((Payload::Error { reason }, t));
        };
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t.to_string(),
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            match parse_client(&text) {
                Ok(command) => {
                    if let Err(reason) = forward(&app, command).await {
                        reply(reason);
                    }
                }
                Err(e) => reply(e.to_string()),
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    lock(&app.hub).clients.retain(|c| c.id != id);
    log::debug!("client {id} left");
}
