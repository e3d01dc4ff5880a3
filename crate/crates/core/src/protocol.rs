//! Live pose-streaming protocol.
//!
//! Messages are single-line JSON objects tagged by `"type"`. A [`Connection`]
//! is the transport-free state machine for one client: feed it decoded text
//! with [`Connection::on_message`] and drive its clock with
//! [`Connection::tick`]. [`serve`] wraps it in a threaded TCP server that
//! speaks newline-delimited JSON, or WebSocket text frames when the client
//! opens with an HTTP upgrade.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::gesture::GestureConfig;
use crate::pose::RawPoseFrame;
use crate::prosthesis::{Catalog, CatalogSummary};
use crate::session::{
    Session, SessionConfig, SessionError, SessionEvent, PoseInput, RenderFrame, DEFAULT_OUTPUT_RATE_HZ,
    DEFAULT_TICK_RATE_HZ,
};
use crate::tasks::{TaskConfig, TaskError, TaskEvent, TaskMetrics};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        version: u32,
        #[serde(default)]
        client_name: String,
    },
    Pose(RawPoseFrame),
    SelectProsthesis {
        id: String,
    },
    SelectTask {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<serde_json::Value>,
    },
    Reset {},
    ListProstheses {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // frames dominate the stream anyway
pub enum ServerMessage {
    HelloAck {
        version: u32,
        catalog: Vec<CatalogSummary>,
    },
    Frame(RenderFrame),
    Metrics(TaskMetrics),
    Event(SessionEvent),
    Error {
        code: ErrorCode,
        message: String,
    },
    Catalog {
        prostheses: Vec<CatalogSummary>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    MissingField,
    BadPayload,
    VersionMismatch,
    UnknownState,
    UnknownProsthesis,
    UnknownTask,
    BadConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code:?}: {detail}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub detail: String,
}

impl ProtocolError {
    fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::Error {
            code: self.code,
            message: self.detail.clone(),
        }
    }
}

/// A message family with a closed set of `"type"` tokens.
pub trait WireMessage: Serialize + DeserializeOwned {
    const KINDS: &'static [&'static str];

    /// Re-reads the payload of a struct-carrying kind on its own, so errors
    /// keep their nested field path.
    fn probe_payload(_kind: &str, _payload: &serde_json::Value) -> Option<ProtocolError> {
        None
    }
}

impl WireMessage for ClientMessage {
    const KINDS: &'static [&'static str] = &[
        "hello",
        "pose",
        "select_prosthesis",
        "select_task",
        "reset",
        "list_prostheses",
    ];

    fn probe_payload(kind: &str, payload: &serde_json::Value) -> Option<ProtocolError> {
        match kind {
            "pose" => probe::<RawPoseFrame>(payload),
            _ => None,
        }
    }
}

impl WireMessage for ServerMessage {
    const KINDS: &'static [&'static str] = &["hello_ack", "frame", "metrics", "event", "error", "catalog"];

    fn probe_payload(kind: &str, payload: &serde_json::Value) -> Option<ProtocolError> {
        match kind {
            "frame" => probe::<RenderFrame>(payload),
            "metrics" => probe::<TaskMetrics>(payload),
            _ => None,
        }
    }
}

fn probe<T: DeserializeOwned>(payload: &serde_json::Value) -> Option<ProtocolError> {
    serde_path_to_error::deserialize::<_, T>(payload)
        .err()
        .map(classify)
}

fn classify(e: serde_path_to_error::Error<serde_json::Error>) -> ProtocolError {
    let path = e.path().to_string();
    let inner = e.into_inner().to_string();
    match missing_field_name(&inner) {
        Some(field) => {
            let full = if path == "." || path.is_empty() {
                field.to_string()
            } else {
                format!("{path}.{field}")
            };
            ProtocolError::new(ErrorCode::MissingField, full)
        }
        None => ProtocolError::new(ErrorCode::BadPayload, format!("{path}: {inner}")),
    }
}

/// One line of JSON, no trailing newline.
pub fn encode<M: WireMessage>(message: &M) -> String {
    serde_json::to_string(message).expect("protocol messages always serialize")
}

/// Decodes one message, classifying failures by error code.
pub fn decode<M: WireMessage>(text: &str) -> Result<M, ProtocolError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::Malformed, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "message must be a JSON object"))?;
    let kind = match obj.get("type") {
        None => return Err(ProtocolError::new(ErrorCode::MissingField, "type")),
        Some(serde_json::Value::String(s)) => s.as_str(),
        Some(_) => return Err(ProtocolError::new(ErrorCode::BadPayload, "type: expected a string")),
    };
    if !M::KINDS.contains(&kind) {
        return Err(ProtocolError::new(ErrorCode::UnknownType, format!("unknown message type `{kind}`")));
    }
    let kind = kind.to_string();
    serde_path_to_error::deserialize(&value).map_err(|e| {
        let mut payload = value.clone();
        if let Some(obj) = payload.as_object_mut() {
            obj.remove("type");
        }
        M::probe_payload(&kind, &payload).unwrap_or_else(|| classify(e))
    })
}

fn missing_field_name(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Per-connection options.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionConfig {
    pub default_prosthesis: String,
    pub default_task: TaskConfig,
    pub tick_rate_hz: f64,
    pub output_frame_rate_hz: f64,
    pub gesture: GestureConfig,
    /// Poses buffered ahead of the engine clock before the oldest is dropped.
    pub max_pending: usize,
}

impl Default for ConnectionConfig {
    fn default() -> Self {
        Self {
            default_prosthesis: "whisk".into(),
            default_task: TaskConfig::default_for("ball").expect("ball is a builtin task"),
            tick_rate_hz: DEFAULT_TICK_RATE_HZ,
            output_frame_rate_hz: DEFAULT_OUTPUT_RATE_HZ,
            gesture: GestureConfig::default(),
            max_pending: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    AwaitingHello,
    Active,
    Closed,
}

/// What the transport should do after handling input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reply {
    pub messages: Vec<ServerMessage>,
    pub close: bool,
}

/// Protocol state machine for one client, owning that client's session.
///
/// Ticking starts with the first pose after (re)creating the session. Tick
/// `k` consumes the newest buffered pose with timestamp at most
/// `anchor + k * dt`, where `anchor` is that first pose's timestamp; older
/// buffered poses are dropped with events.
#[derive(Debug)]
pub struct Connection {
    catalog: Arc<Catalog>,
    config: ConnectionConfig,
    phase: Phase,
    session: Option<Session>,
    pending: VecDeque<RawPoseFrame>,
    anchor_ts: Option<f64>,
    ticks: u64,
}

impl Connection {
    pub fn new(catalog: Arc<Catalog>, config: ConnectionConfig) -> Self {
        Self {
            catalog,
            config,
            phase: Phase::AwaitingHello,
            session: None,
            pending: VecDeque::new(),
            anchor_ts: None,
            ticks: 0,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    /// True once a pose has started the engine clock.
    pub fn is_ticking(&self) -> bool {
        self.anchor_ts.is_some()
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn tick_dt(&self) -> f64 {
        1.0 / self.config.tick_rate_hz
    }

    fn close_with(&mut self, err: ProtocolError) -> Reply {
        self.phase = Phase::Closed;
        Reply {
            messages: vec![err.to_message()],
            close: true,
        }
    }

    fn build_session(&mut self, prosthesis: &str, task: TaskConfig) -> Result<(), ProtocolError> {
        let spec = self.catalog.get(prosthesis).ok_or_else(|| {
            ProtocolError::new(ErrorCode::UnknownProsthesis, format!("unknown prosthesis `{prosthesis}`"))
        })?;
        let cfg = SessionConfig {
            prosthesis_id: prosthesis.to_string(),
            task,
            tick_rate_hz: self.config.tick_rate_hz,
            output_frame_rate_hz: self.config.output_frame_rate_hz,
            gesture: self.config.gesture.clone(),
            replaced_limb: Default::default(),
        };
        let session = Session::with_spec(cfg, spec.clone()).map_err(|e| match e {
            SessionError::UnknownProsthesis(m) => ProtocolError::new(ErrorCode::UnknownProsthesis, m),
            SessionError::UnknownTask(m) => ProtocolError::new(ErrorCode::UnknownTask, m),
            other => ProtocolError::new(ErrorCode::BadConfig, other.to_string()),
        })?;
        self.session = Some(session);
        self.pending.clear();
        self.anchor_ts = None;
        self.ticks = 0;
        Ok(())
    }

    /// Final metrics of the session being replaced, if it ever ran.
    fn retire_session(&self) -> Option<ServerMessage> {
        self.session
            .as_ref()
            .filter(|_| self.ticks > 0)
            .map(|s| ServerMessage::Metrics(s.metrics()))
    }

    pub fn on_message(&mut self, text: &str) -> Reply {
        if self.phase == Phase::Closed {
            return Reply {
                messages: vec![],
                close: true,
            };
        }
        let message = match decode::<ClientMessage>(text) {
            Ok(m) => m,
            Err(e) if self.phase == Phase::AwaitingHello => return self.close_with(e),
            Err(e) => {
                return Reply {
                    messages: vec![e.to_message()],
                    close: false,
                }
            }
        };
        self.handle(message)
    }

    pub fn handle(&mut self, message: ClientMessage) -> Reply {
        let mut reply = Reply::default();
        match (&self.phase, message) {
            (Phase::Closed, _) => reply.close = true,
            (Phase::AwaitingHello, ClientMessage::Hello { version, .. }) => {
                if version != PROTOCOL_VERSION {
                    return self.close_with(ProtocolError::new(
                        ErrorCode::VersionMismatch,
                        format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
                    ));
                }
                let prosthesis = self.config.default_prosthesis.clone();
                if let Err(e) = self.build_session(&prosthesis, self.config.default_task.clone()) {
                    return self.close_with(e);
                }
                self.phase = Phase::Active;
                reply.messages.push(ServerMessage::HelloAck {
                    version: PROTOCOL_VERSION,
                    catalog: self.catalog.summaries(),
                });
            }
            (Phase::AwaitingHello, other) => {
                return self.close_with(ProtocolError::new(
                    ErrorCode::UnknownState,
                    format!("`{}` before hello", kind_of(&other)),
                ))
            }
            (Phase::Active, ClientMessage::Hello { .. }) => {
                reply
                    .messages
                    .push(ProtocolError::new(ErrorCode::UnknownState, "already greeted").to_message());
            }
            (Phase::Active, ClientMessage::Pose(raw)) => self.accept_pose(raw, &mut reply),
            (Phase::Active, ClientMessage::SelectProsthesis { id }) => {
                let task = self.current_task();
                let retired = self.retire_session();
                match self.build_session(&id, task) {
                    Ok(()) => reply.messages.extend(retired),
                    Err(e) => reply.messages.push(e.to_message()),
                }
            }
            (Phase::Active, ClientMessage::SelectTask { id, config }) => {
                let doc = config.unwrap_or_else(|| serde_json::json!({}));
                let task = TaskConfig::from_json(&id, &doc).map_err(|e| match e {
                    TaskError::UnknownTask(t) => ProtocolError::new(ErrorCode::UnknownTask, format!("unknown task `{t}`")),
                    TaskError::BadConfig(m) => ProtocolError::new(ErrorCode::BadConfig, m),
                });
                let prosthesis = self.current_prosthesis();
                let retired = self.retire_session();
                match task.and_then(|t| self.build_session(&prosthesis, t)) {
                    Ok(()) => reply.messages.extend(retired),
                    Err(e) => reply.messages.push(e.to_message()),
                }
            }
            (Phase::Active, ClientMessage::Reset {}) => {
                let (prosthesis, task) = (self.current_prosthesis(), self.current_task());
                let retired = self.retire_session();
                match self.build_session(&prosthesis, task) {
                    Ok(()) => reply.messages.extend(retired),
                    Err(e) => reply.messages.push(e.to_message()),
                }
            }
            (Phase::Active, ClientMessage::ListProstheses {}) => reply.messages.push(ServerMessage::Catalog {
                prostheses: self.catalog.summaries(),
            }),
        }
        reply
    }

    fn current_prosthesis(&self) -> String {
        self.session
            .as_ref()
            .map(|s| s.config.prosthesis_id.clone())
            .unwrap_or_else(|| self.config.default_prosthesis.clone())
    }

    fn current_task(&self) -> TaskConfig {
        self.session
            .as_ref()
            .map(|s| s.config.task.clone())
            .unwrap_or_else(|| self.config.default_task.clone())
    }

    fn accept_pose(&mut self, raw: RawPoseFrame, reply: &mut Reply) {
        let tick = self.ticks;
        if self.anchor_ts.is_none() {
            if !raw.timestamp_s.is_finite() {
                reply.messages.push(ServerMessage::Event(SessionEvent::DroppedInput {
                    reason: "non-finite timestamp".into(),
                    timestamp_s: None,
                    tick,
                }));
                return;
            }
            self.anchor_ts = Some(raw.timestamp_s);
        }
        self.pending.push_back(raw);
        while self.pending.len() > self.config.max_pending {
            let dropped = self.pending.pop_front().expect("non-empty");
            reply.messages.push(ServerMessage::Event(SessionEvent::DroppedInput {
                reason: "buffer overflow".into(),
                timestamp_s: Some(dropped.timestamp_s),
                tick,
            }));
        }
    }

    /// Advances the engine by one tick; does nothing until the first pose.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let (Some(anchor), Phase::Active) = (self.anchor_ts, &self.phase) else {
            return out;
        };
        let Some(session) = self.session.as_mut() else {
            return out;
        };
        let tick = self.ticks;
        let horizon = anchor + tick as f64 / self.config.tick_rate_hz + 1e-9;
        let due = self
            .pending
            .iter()
            .enumerate()
            .filter(|(_, p)| !(p.timestamp_s > horizon))
            .fold(None::<(usize, f64)>, |best, (i, p)| match best {
                Some((_, ts)) if ts > p.timestamp_s => best,
                _ => Some((i, p.timestamp_s)),
            });
        let mut input = None;
        if let Some((chosen, _)) = due {
            let mut keep = VecDeque::with_capacity(self.pending.len());
            for (i, p) in self.pending.drain(..).enumerate() {
                if i == chosen {
                    input = Some(p);
                } else if !(p.timestamp_s > horizon) {
                    out.push(ServerMessage::Event(SessionEvent::DroppedInput {
                        reason: "superseded".into(),
                        timestamp_s: Some(p.timestamp_s),
                        tick,
                    }));
                } else {
                    keep.push_back(p);
                }
            }
            self.pending = keep;
        }
        let frame = session.step(input.map(PoseInput::Raw));
        self.ticks += 1;
        if let Some(frame) = frame {
            let finished = frame.events.iter().any(|e| {
                matches!(e, SessionEvent::Task(TaskEvent::GoalReached { .. }))
            });
            out.push(ServerMessage::Frame(frame));
            if finished {
                out.push(ServerMessage::Metrics(session.metrics()));
            }
        }
        out
    }
}

fn kind_of(m: &ClientMessage) -> &'static str {
    match m {
        ClientMessage::Hello { .. } => "hello",
        ClientMessage::Pose(_) => "pose",
        ClientMessage::SelectProsthesis { .. } => "select_prosthesis",
        ClientMessage::SelectTask { .. } => "select_task",
        ClientMessage::Reset {} => "reset",
        ClientMessage::ListProstheses {} => "list_prostheses",
    }
}

/// Server options.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    pub connection: ConnectionConfig,
    /// Playout delay between the first pose arriving and the first tick,
    /// absorbing network jitter.
    pub input_delay: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            connection: ConnectionConfig::default(),
            input_delay: Duration::from_millis(100),
        }
    }
}

/// Handle to a running server; dropping it does not stop the server.
#[derive(Debug)]
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds and starts accepting clients on a background thread, one thread
/// per connection.
pub fn serve(config: ServerConfig, catalog: Arc<Catalog>) -> std::io::Result<ServerHandle> {
    let addr = config
        .bind
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "bind address resolves to nothing"))?;
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let thread = std::thread::spawn(move || {
        log::info!("listening on {local_addr}");
        while !stop_flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    let catalog = Arc::clone(&catalog);
                    let cfg = config.clone();
                    let stop = Arc::clone(&stop_flag);
                    std::thread::spawn(move || {
                        if let Err(e) = handle_client(stream, catalog, &cfg, &stop) {
                            log::warn!("client {peer}: {e}");
                        }
                        log::info!("client {peer} disconnected");
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    Ok(ServerHandle {
        local_addr,
        stop,
        thread: Some(thread),
    })
}

/// Outcome of waiting for one inbound message.
enum Poll {
    Message(String),
    Idle,
    Closed,
}

trait Transport {
    fn poll(&mut self, timeout: Duration) -> std::io::Result<Poll>;
    fn send(&mut self, text: &str) -> std::io::Result<()>;
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

struct LineTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: Vec<u8>,
}

impl Transport for LineTransport {
    fn poll(&mut self, timeout: Duration) -> std::io::Result<Poll> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(timeout.max(Duration::from_micros(100))))?;
        match self.reader.read_until(b'\n', &mut self.partial) {
            Ok(0) => Ok(Poll::Closed),
            Ok(_) if self.partial.ends_with(b"\n") => {
                let line = String::from_utf8_lossy(&self.partial).trim().to_string();
                self.partial.clear();
                Ok(if line.is_empty() { Poll::Idle } else { Poll::Message(line) })
            }
            Ok(_) => Ok(Poll::Idle),
            Err(e) if is_timeout(&e) => Ok(Poll::Idle),
            Err(e) => Err(e),
        }
    }

    fn send(&mut self, text: &str) -> std::io::Result<()> {
        self.writer.write_all(text.as_bytes())?;
        self.writer.write_all(b"\n")
    }
}

struct WsTransport {
    socket: tungstenite::WebSocket<TcpStream>,
}

impl Transport for WsTransport {
    fn poll(&mut self, timeout: Duration) -> std::io::Result<Poll> {
        self.socket
            .get_ref()
            .set_read_timeout(Some(timeout.max(Duration::from_micros(100))))?;
        match self.socket.read() {
            Ok(tungstenite::Message::Text(t)) => Ok(Poll::Message(t.to_string())),
            Ok(tungstenite::Message::Binary(b)) => Ok(Poll::Message(String::from_utf8_lossy(&b).into_owned())),
            Ok(tungstenite::Message::Close(_)) => Ok(Poll::Closed),
            Ok(_) => Ok(Poll::Idle),
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => Ok(Poll::Idle),
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => Ok(Poll::Closed),
            Err(e) => Err(std::io::Error::other(e.to_string())),
        }
    }

    fn send(&mut self, text: &str) -> std::io::Result<()> {
        self.socket
            .send(tungstenite::Message::text(text))
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

fn handle_client(stream: TcpStream, catalog: Arc<Catalog>, cfg: &ServerConfig, stop: &AtomicBool) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_nonblocking(false)?;
    let mut head = [0u8; 4];
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let n = peek_exact(&stream, &mut head)?;
    let mut transport: Box<dyn Transport> = if n == 4 && &head == b"GET " {
        stream.set_read_timeout(None)?;
        let socket = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
        Box::new(WsTransport { socket })
    } else {
        let writer = stream.try_clone()?;
        Box::new(LineTransport {
            reader: BufReader::new(stream),
            writer,
            partial: Vec::new(),
        })
    };
    run_connection(transport.as_mut(), Connection::new(catalog, cfg.connection.clone()), cfg.input_delay, stop)
}

fn peek_exact(stream: &TcpStream, buf: &mut [u8]) -> std::io::Result<usize> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let n = stream.peek(buf)?;
        if n == 0 || n >= buf.len() || Instant::now() >= deadline {
            return Ok(n);
        }
        // A line-protocol client never starts with "GET ", so a short first
        // segment that already disagrees settles it.
        if !b"GET ".starts_with(&buf[..n]) {
            return Ok(n);
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}

/// Engine loop for one client: inbound messages are handled as they arrive,
/// ticks run on the wall clock once the first pose (plus the playout delay)
/// has started it.
fn run_connection(
    transport: &mut dyn Transport,
    mut conn: Connection,
    input_delay: Duration,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    let dt = conn.tick_dt();
    let mut clock: Option<(Instant, u64)> = None;
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        let timeout = match clock.as_mut() {
            Some((start, done)) => {
                let due = *start + Duration::from_secs_f64(dt * *done as f64);
                let now = Instant::now();
                if now >= due {
                    for m in conn.tick() {
                        transport.send(&encode(&m))?;
                    }
                    *done += 1;
                    continue;
                }
                due - now
            }
            None => Duration::from_millis(50),
        };
        match transport.poll(timeout)? {
            Poll::Closed => return Ok(()),
            Poll::Idle => {}
            Poll::Message(text) => {
                let was_ticking = conn.is_ticking();
                let reply = conn.on_message(&text);
                for m in &reply.messages {
                    transport.send(&encode(m))?;
                }
                if reply.close {
                    return Ok(());
                }
                if !conn.is_ticking() {
                    clock = None;
                } else if !was_ticking {
                    clock = Some((Instant::now() + input_delay, 0));
                }
            }
        }
    }
}

/// Minimal blocking client for the line transport, used by tests and tools.
pub struct LineClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl LineClient {
    pub fn connect(addr: SocketAddr) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    pub fn send(&mut self, message: &ClientMessage) -> std::io::Result<()> {
        let mut line = encode(message);
        line.push('\n');
        self.writer.write_all(line.as_bytes())
    }

    /// Sends many messages in one write.
    pub fn send_all<'a>(&mut self, messages: impl IntoIterator<Item = &'a ClientMessage>) -> std::io::Result<()> {
        let mut buf = String::new();
        for m in messages {
            buf.push_str(&encode(m));
            buf.push('\n');
        }
        self.writer.write_all(buf.as_bytes())
    }

    pub fn send_raw(&mut self, text: &str) -> std::io::Result<()> {
        self.writer.write_all(text.as_bytes())?;
        self.writer.write_all(b"\n")
    }

    /// Next server message, or `None` when the server closed the stream.
    pub fn recv(&mut self, timeout: Duration) -> std::io::Result<Option<ServerMessage>> {
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        decode(line.trim())
            .map(Some)
            .map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e.to_string()))
    }

    pub fn shutdown(&self) {
        let _ = self.writer.shutdown(std::net::Shutdown::Both);
    }
}
