//! Fixed-tick session loop, render frames, state hashing and replay.
//!
//! All session memory lives in [`SessionState`], a plain serializable value;
//! the same inputs on the same build give bit-identical states and frames.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gesture::{detect_gestures, DetectorState, GestureConfig, GestureEvent};
use crate::math::{vec3_serde, Vec3};
use crate::pose::{resample_trace, validate_frame, HandPoseFrame, PoseError, PoseTrace, RawPoseFrame};
use crate::prosthesis::{Catalog, ProsthesisSpec};
use crate::retarget::{collision_proxy_world, retarget, smooth, world_anchors, ObjectPose, Sphere};
use crate::tasks::{
    ball_step, draw_step, task_metrics, MovingSphere, StrokeDelta, TaskConfig, TaskEvent, TaskInput, TaskMetrics,
    TaskState,
};

pub const DEFAULT_TICK_RATE_HZ: f64 = 120.0;
pub const DEFAULT_OUTPUT_RATE_HZ: f64 = 60.0;
pub const FRAME_LOG_FORMAT: &str = "render-frames";
pub const FRAME_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limb {
    Left,
    #[default]
    Right,
}

fn d_tick_rate() -> f64 {
    DEFAULT_TICK_RATE_HZ
}
fn d_output_rate() -> f64 {
    DEFAULT_OUTPUT_RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub prosthesis_id: String,
    pub task: TaskConfig,
    #[serde(default = "d_tick_rate")]
    pub tick_rate_hz: f64,
    #[serde(default = "d_output_rate")]
    pub output_frame_rate_hz: f64,
    #[serde(default)]
    pub gesture: GestureConfig,
    #[serde(default)]
    pub replaced_limb: Limb,
}

impl SessionConfig {
    pub fn new(prosthesis_id: impl Into<String>, task: TaskConfig) -> Self {
        Self {
            prosthesis_id: prosthesis_id.into(),
            task,
            tick_rate_hz: DEFAULT_TICK_RATE_HZ,
            output_frame_rate_hz: DEFAULT_OUTPUT_RATE_HZ,
            gesture: GestureConfig::default(),
            replaced_limb: Limb::Right,
        }
    }

    pub fn tick_dt(&self) -> f64 {
        1.0 / self.tick_rate_hz
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tick_rate_hz > 0.0 && self.tick_rate_hz.is_finite()) {
            out.push("tick_rate_hz must be positive".to_string());
        }
        if !(self.output_frame_rate_hz > 0.0 && self.output_frame_rate_hz.is_finite()) {
            out.push("output_frame_rate_hz must be positive".to_string());
        }
        if self.output_frame_rate_hz > self.tick_rate_hz {
            out.push(format!(
                "output rate {} Hz exceeds tick rate {} Hz",
                self.output_frame_rate_hz, self.tick_rate_hz
            ));
        }
        if self.tick_dt() > crate::tasks::MAX_TASK_DT {
            out.push("tick rate must be at least 10 Hz".to_string());
        }
        out.extend(self.gesture.problems());
        out.extend(self.task.problems());
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown prosthesis `{0}`")]
    UnknownProsthesis(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// Anything that ends up in a frame's event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SessionEvent {
    Gesture(GestureEvent),
    Task(TaskEvent),
    DroppedInput {
        reason: String,
        timestamp_s: Option<f64>,
        tick: u64,
    },
}

/// Task-specific part of a frame: where the ball is, or the ink added since
/// the previous frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskView {
    Ball {
        #[serde(with = "vec3_serde")]
        position: Vec3,
        #[serde(with = "vec3_serde")]
        velocity: Vec3,
        radius: f64,
        attached_to: Option<String>,
        done: bool,
    },
    Draw {
        new_points: Vec<StrokeDelta>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderFrame {
    pub tick: u64,
    pub time_s: f64,
    pub object: ObjectPose,
    /// The replaced hand is never drawn.
    pub hand_visible: bool,
    pub task_view: TaskView,
    pub events: Vec<SessionEvent>,
    pub metrics_snapshot: Option<TaskMetrics>,
    /// Hex state hash after this tick.
    pub state_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    /// Ticks completed so far; the next step runs tick `tick`.
    pub tick: u64,
    pub current_pose: HandPoseFrame,
    pub has_input: bool,
    pub last_input_ts: Option<f64>,
    pub detector: DetectorState,
    pub object: ObjectPose,
    pub proxies: Vec<Sphere>,
    pub task: TaskState,
    pub pending_events: Vec<SessionEvent>,
    pub pending_strokes: Vec<StrokeDelta>,
}

/// A pose arriving at the session, validated or not.
#[derive(Debug, Clone, PartialEq)]
pub enum PoseInput {
    Valid(HandPoseFrame),
    Raw(RawPoseFrame),
}

impl From<HandPoseFrame> for PoseInput {
    fn from(f: HandPoseFrame) -> Self {
        Self::Valid(f)
    }
}

impl From<RawPoseFrame> for PoseInput {
    fn from(f: RawPoseFrame) -> Self {
        Self::Raw(f)
    }
}

impl PoseInput {
    pub fn timestamp_s(&self) -> f64 {
        match self {
            Self::Valid(f) => f.timestamp_s,
            Self::Raw(r) => r.timestamp_s,
        }
    }
}

/// 64-bit digest of the canonical JSON serialization.
pub fn state_hash(state: &SessionState) -> u64 {
    let bytes = serde_json::to_vec(state).expect("session state serializes");
    let digest = Sha256::digest(&bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn digest_hex(hash: u64) -> String {
    format!("{hash:016x}")
}

/// Whether tick `k` produces a frame: the first tick, then every tick where
/// `floor(k * out / rate)` advances.
pub fn is_output_tick(k: u64, tick_rate_hz: f64, output_rate_hz: f64) -> bool {
    if k == 0 {
        return true;
    }
    let slot = |k: u64| (k as f64 * output_rate_hz / tick_rate_hz + 1e-9).floor();
    slot(k) != slot(k - 1)
}

pub fn create_session(config: &SessionConfig, catalog: &Catalog) -> Result<Session, SessionError> {
    let spec = catalog
        .get(&config.prosthesis_id)
        .ok_or_else(|| SessionError::UnknownProsthesis(config.prosthesis_id.clone()))?;
    Session::with_spec(config.clone(), spec.clone())
}

/// A config paired with the spec it resolved to and the evolving state.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub config: SessionConfig,
    pub spec: ProsthesisSpec,
    pub state: SessionState,
}

impl Session {
    pub fn with_spec(config: SessionConfig, spec: ProsthesisSpec) -> Result<Self, SessionError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(SessionError::BadConfig(problems.join("; ")));
        }
        let pose = HandPoseFrame::neutral();
        let object = retarget(&pose, &spec);
        let proxies = collision_proxy_world(&spec, &object);
        let state = SessionState {
            tick: 0,
            current_pose: pose,
            has_input: false,
            last_input_ts: None,
            detector: DetectorState::default(),
            object,
            proxies,
            task: config.task.initial_state(),
            pending_events: Vec::new(),
            pending_strokes: Vec::new(),
        };
        Ok(Self { config, spec, state })
    }

    pub fn step(&mut self, input: Option<PoseInput>) -> Option<RenderFrame> {
        let (next, frame) = advance(&self.config, &self.spec, &self.state, input);
        self.state = next;
        frame
    }

    pub fn hash(&self) -> u64 {
        state_hash(&self.state)
    }

    pub fn metrics(&self) -> TaskMetrics {
        task_metrics(&self.state.task, &self.config.task, self.config.tick_dt())
    }
}

/// One tick of the pipeline: validate, retarget, smooth, detect gestures,
/// step the task, and assemble a frame on output ticks.
pub fn advance(
    config: &SessionConfig,
    spec: &ProsthesisSpec,
    state: &SessionState,
    input: Option<PoseInput>,
) -> (SessionState, Option<RenderFrame>) {
    let mut s = state.clone();
    let tick = s.tick;
    let dt = config.tick_dt();
    let now = tick as f64 * dt;

    let mut fresh = None;
    if let Some(input) = input {
        let ts = input.timestamp_s();
        let validated = match input {
            PoseInput::Valid(f) => Ok(f),
            PoseInput::Raw(r) => validate_frame(&r),
        };
        match validated {
            Err(e) => s.pending_events.push(SessionEvent::DroppedInput {
                reason: e.to_string(),
                timestamp_s: ts.is_finite().then_some(ts),
                tick,
            }),
            Ok(_) if s.last_input_ts.is_some_and(|last| ts < last) => {
                s.pending_events.push(SessionEvent::DroppedInput {
                    reason: "stale".into(),
                    timestamp_s: Some(ts),
                    tick,
                })
            }
            Ok(f) => fresh = Some(f),
        }
    }
    let first_input = fresh.is_some() && !s.has_input;
    if let Some(f) = fresh {
        s.last_input_ts = Some(f.timestamp_s);
        s.current_pose = f;
        s.has_input = true;
    }
    // The engine clock, not the sender's, timestamps the pose for this tick.
    let pose = s.current_pose.with_timestamp(now);

    let target = retarget(&pose, spec);
    let mut object = if first_input {
        target
    } else {
        smooth(&s.object, &target, spec.motion_smoothing_alpha, dt, dt)
    };
    object.anchors_world = world_anchors(spec, &object.transform, &object.joint_angles);

    let (gesture_events, detector) = detect_gestures(std::slice::from_ref(&pose), &s.detector, &config.gesture);
    s.detector = detector;
    s.pending_events
        .extend(gesture_events.into_iter().map(SessionEvent::Gesture));

    let proxies = collision_proxy_world(spec, &object);
    let moving: Vec<MovingSphere> = if proxies.len() == s.proxies.len() {
        proxies
            .iter()
            .zip(&s.proxies)
            .map(|(now, before)| MovingSphere {
                sphere: *now,
                velocity: (now.center - before.center) / dt,
            })
            .collect()
    } else {
        proxies
            .iter()
            .map(|p| MovingSphere {
                sphere: *p,
                velocity: Vec3::zeros(),
            })
            .collect()
    };
    let task_input = TaskInput {
        proxies: &moving,
        anchors: &object.anchors_world,
        gestures: s.detector.active(),
        palm_speed: s.detector.palm_speed,
        tick,
    };
    match (&s.task, &config.task) {
        (TaskState::Ball(b), TaskConfig::Ball(c)) => {
            let (next, events) = ball_step(b, &task_input, spec, c, dt);
            s.pending_events.extend(events.into_iter().map(SessionEvent::Task));
            s.task = TaskState::Ball(next);
        }
        (TaskState::Draw(d), TaskConfig::Draw(c)) => {
            let (next, deltas) = draw_step(d, &task_input, spec, c, dt);
            s.pending_strokes.extend(deltas);
            s.task = TaskState::Draw(next);
        }
        _ => unreachable!("task state always matches its config"),
    }

    s.object = object;
    s.proxies = proxies;
    s.tick += 1;

    if !is_output_tick(tick, config.tick_rate_hz, config.output_frame_rate_hz) {
        return (s, None);
    }
    let events = std::mem::take(&mut s.pending_events);
    let task_view = match &s.task {
        TaskState::Ball(b) => TaskView::Ball {
            position: b.ball_position,
            velocity: b.ball_velocity,
            radius: b.ball_radius,
            attached_to: b.attached_to.clone(),
            done: b.done_tick.is_some(),
        },
        TaskState::Draw(_) => TaskView::Draw {
            new_points: std::mem::take(&mut s.pending_strokes),
        },
    };
    let metrics = task_metrics(&s.task, &config.task, dt);
    let frame = RenderFrame {
        tick,
        time_s: now,
        object: s.object.clone(),
        hand_visible: false,
        task_view,
        events,
        metrics_snapshot: Some(metrics),
        state_digest: digest_hex(state_hash(&s)),
    };
    (s, Some(frame))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub final_state: SessionState,
    pub frames: Vec<RenderFrame>,
    pub metrics: TaskMetrics,
}

/// Resamples `trace` onto the tick grid and steps once per sample.
pub fn run_replay(trace: &PoseTrace, config: &SessionConfig, spec: &ProsthesisSpec) -> Result<ReplayOutput, SessionError> {
    let mut session = Session::with_spec(config.clone(), spec.clone())?;
    let ticks = if trace.len() >= 2 {
        resample_trace(trace, config.tick_rate_hz)?
    } else {
        trace.clone()
    };
    let mut frames = Vec::new();
    for f in ticks.frames() {
        frames.extend(session.step(Some(PoseInput::Valid(f.clone()))));
    }
    let metrics = session.metrics();
    Ok(ReplayOutput {
        final_state: session.state,
        frames,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameLogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLogHeader {
    format: String,
    version: u32,
}

pub fn record_frames<W: Write>(frames: &[RenderFrame], mut sink: W) -> Result<(), FrameLogError> {
    let io = |e: std::io::Error| FrameLogError::Io(e.to_string());
    let header = FrameLogHeader {
        format: FRAME_LOG_FORMAT.into(),
        version: FRAME_LOG_VERSION,
    };
    serde_json::to_writer(&mut sink, &header).map_err(|e| FrameLogError::Io(e.to_string()))?;
    sink.write_all(b"\n").map_err(io)?;
    for f in frames {
        serde_json::to_writer(&mut sink, f).map_err(|e| FrameLogError::Io(e.to_string()))?;
        sink.write_all(b"\n").map_err(io)?;
    }
    sink.flush().map_err(io)
}

pub fn frames_to_bytes(frames: &[RenderFrame]) -> Vec<u8> {
    let mut out = Vec::new();
    record_frames(frames, &mut out).expect("writing to memory cannot fail");
    out
}

pub fn load_frames<R: BufRead>(source: R) -> Result<Vec<RenderFrame>, FrameLogError> {
    let mut lines = source.lines().enumerate();
    let parse = |line: usize, message: String| FrameLogError::Parse { line, message };
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse(1, "missing header".into()))?;
    let header = header.map_err(|e| FrameLogError::Io(e.to_string()))?;
    let header: FrameLogHeader = serde_json::from_str(&header).map_err(|e| parse(1, format!("bad header: {e}")))?;
    if header.format != FRAME_LOG_FORMAT || header.version != FRAME_LOG_VERSION {
        return Err(parse(
            1,
            format!("expected {FRAME_LOG_FORMAT} v{FRAME_LOG_VERSION}, got {} v{}", header.format, header.version),
        ));
    }
    let mut frames: Vec<RenderFrame> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| FrameLogError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: RenderFrame = serde_json::from_str(&line).map_err(|e| parse(n, e.to_string()))?;
        if frames.last().is_some_and(|p| p.tick >= frame.tick) {
            return Err(parse(n, format!("tick {} does not increase", frame.tick)));
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Ball position, when the task is the ball task.
pub fn ball_position(state: &SessionState) -> Option<Vec3> {
    match &state.task {
        TaskState::Ball(b) => Some(b.ball_position),
        TaskState::Draw(_) => None,
    }
}
