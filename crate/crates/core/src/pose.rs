//! Hand-pose frames and traces: validation, interpolation, resampling,
//! finite-difference palm velocity and the trace file format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{
    is_finite3, lerp, lerp3, quat_from_wxyz_raw, quat_norm, quat_to_wxyz, slerp_short, vec3, Quat,
    Vec3,
};

/// Maximum palm-to-wrist distance accepted for a tracked hand, meters.
pub const MAX_HAND_SPAN_M: f64 = 0.30;
/// Quaternions whose norm deviates from 1 by at most this are renormalized.
pub const QUAT_RENORM_TOLERANCE: f64 = 1e-3;
pub const FINGER_COUNT: usize = 5;

pub const TRACE_FORMAT: &str = "pose-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("{field} out of range: {detail}")]
    Range { field: String, detail: String },
    #[error("degenerate pose: {0}")]
    Degenerate(String),
    #[error("timestamps not increasing: {0}")]
    Order(String),
    #[error("trace too short: need at least {needed} frames, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("bad generator parameter: {0}")]
    BadParameter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

fn range_err(field: impl Into<String>, detail: impl Into<String>) -> PoseError {
    PoseError::Range {
        field: field.into(),
        detail: detail.into(),
    }
}

/// Unvalidated pose record as it appears in trace files and pose messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPoseFrame {
    pub timestamp_s: f64,
    pub palm_pos: [f64; 3],
    pub palm_quat: [f64; 4],
    pub wrist_pos: [f64; 3],
    pub fingers: Vec<RawFinger>,
    pub pinch_strength: f64,
    pub grab_strength: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFinger {
    pub flex: f64,
    pub tip: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finger {
    /// 0 = straight, 1 = fully curled.
    pub flexion: f64,
    pub tip_position: Vec3,
}

/// One validated sample of the tracked hand. Fingers run thumb to pinky.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoseFrame", into = "RawPoseFrame")]
pub struct HandPoseFrame {
    pub timestamp_s: f64,
    pub palm_position: Vec3,
    pub palm_orientation: Quat,
    pub wrist_position: Vec3,
    pub fingers: [Finger; FINGER_COUNT],
    pub pinch_strength: f64,
    pub grab_strength: f64,
    pub confidence: f64,
}

impl TryFrom<RawPoseFrame> for HandPoseFrame {
    type Error = PoseError;

    fn try_from(raw: RawPoseFrame) -> Result<Self, PoseError> {
        validate_frame(&raw)
    }
}

impl From<HandPoseFrame> for RawPoseFrame {
    fn from(f: HandPoseFrame) -> Self {
        f.to_raw()
    }
}

impl HandPoseFrame {
    pub fn to_raw(&self) -> RawPoseFrame {
        RawPoseFrame {
            timestamp_s: self.timestamp_s,
            palm_pos: [self.palm_position.x, self.palm_position.y, self.palm_position.z],
            palm_quat: quat_to_wxyz(&self.palm_orientation),
            wrist_pos: [self.wrist_position.x, self.wrist_position.y, self.wrist_position.z],
            fingers: self
                .fingers
                .iter()
                .map(|f| RawFinger {
                    flex: f.flexion,
                    tip: [f.tip_position.x, f.tip_position.y, f.tip_position.z],
                })
                .collect(),
            pinch_strength: self.pinch_strength,
            grab_strength: self.grab_strength,
            confidence: self.confidence,
        }
    }

    /// Relaxed open hand at rest, wrist 45 cm in front of the screen and the
    /// fingers pointing into it.
    pub fn neutral() -> Self {
        let rotation = into_screen();
        let wrist = Vec3::new(0.0, 0.0, 0.45);
        hand_at(0.0, wrist, rotation, 0.0, 0.0)
    }

    pub fn with_timestamp(&self, timestamp_s: f64) -> Self {
        let mut f = self.clone();
        f.timestamp_s = timestamp_s;
        f
    }
}

/// Orientation pointing the hand (wrist +Z) into the screen (world -Z).
pub fn into_screen() -> Quat {
    quat_from_wxyz_raw([0.0, 1.0, 0.0, 0.0])
}

/// Palm and finger layout around a wrist frame; used by the generators.
pub fn hand_at(t: f64, wrist: Vec3, rotation: Quat, pinch: f64, grab: f64) -> HandPoseFrame {
    let palm = wrist + rotation * Vec3::new(0.0, 0.0, 0.08);
    let spread = [-0.045, -0.02, 0.0, 0.02, 0.04];
    let reach = [0.11, 0.17, 0.18, 0.17, 0.15];
    let fingers = std::array::from_fn(|i| {
        let flexion = if i == 0 { pinch } else { grab.max(if i == 1 { pinch } else { 0.0 }) };
        let curl = 1.0 - 0.5 * flexion;
        Finger {
            flexion,
            tip_position: wrist + rotation * Vec3::new(spread[i], 0.0, reach[i] * curl),
        }
    });
    HandPoseFrame {
        timestamp_s: t,
        palm_position: palm,
        palm_orientation: rotation,
        wrist_position: wrist,
        fingers,
        pinch_strength: pinch,
        grab_strength: grab,
        confidence: 1.0,
    }
}

fn check_unit(field: &str, value: f64) -> Result<(), PoseError> {
    if !value.is_finite() {
        return Err(PoseError::Degenerate(format!("{field} is not finite")));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(range_err(field, format!("{value} not in [0, 1]")));
    }
    Ok(())
}

fn check_point(field: &str, p: &[f64; 3]) -> Result<Vec3, PoseError> {
    let v = vec3(*p);
    if !is_finite3(&v) {
        return Err(PoseError::Degenerate(format!("{field} has a non-finite coordinate")));
    }
    Ok(v)
}

/// Checks a raw record against every frame invariant.
///
/// A quaternion within 1e-3 of unit length is renormalized; anything further
/// off, or zero, is rejected.
pub fn validate_frame(raw: &RawPoseFrame) -> Result<HandPoseFrame, PoseError> {
    if !raw.timestamp_s.is_finite() {
        return Err(PoseError::Degenerate("timestamp_s is not finite".into()));
    }
    if raw.timestamp_s < 0.0 {
        return Err(range_err("timestamp_s", format!("{} is negative", raw.timestamp_s)));
    }
    let palm = check_point("palm_pos", &raw.palm_pos)?;
    let wrist = check_point("wrist_pos", &raw.wrist_pos)?;

    if raw.palm_quat.iter().any(|c| !c.is_finite()) {
        return Err(PoseError::Degenerate("palm_quat has a non-finite component".into()));
    }
    let q = quat_from_wxyz_raw(raw.palm_quat);
    let norm = quat_norm(&q);
    if norm == 0.0 {
        return Err(PoseError::Degenerate("palm_quat is zero".into()));
    }
    let deviation = (norm - 1.0).abs();
    if deviation > QUAT_RENORM_TOLERANCE {
        return Err(PoseError::Degenerate(format!(
            "palm_quat norm {norm} deviates from 1 by more than {QUAT_RENORM_TOLERANCE}"
        )));
    }
    let orientation = if deviation > 1e-12 {
        Quat::new_normalize(*q.as_ref())
    } else {
        q
    };

    if raw.fingers.len() != FINGER_COUNT {
        return Err(range_err(
            "fingers",
            format!("expected {FINGER_COUNT} entries, got {}", raw.fingers.len()),
        ));
    }
    let mut fingers = [Finger {
        flexion: 0.0,
        tip_position: Vec3::zeros(),
    }; FINGER_COUNT];
    for (i, (slot, f)) in fingers.iter_mut().zip(&raw.fingers).enumerate() {
        check_unit(&format!("fingers[{i}].flex"), f.flex)?;
        slot.flexion = f.flex;
        slot.tip_position = check_point(&format!("fingers[{i}].tip"), &f.tip)?;
    }
    check_unit("pinch_strength", raw.pinch_strength)?;
    check_unit("grab_strength", raw.grab_strength)?;
    check_unit("confidence", raw.confidence)?;

    let span = (palm - wrist).norm();
    if span > MAX_HAND_SPAN_M {
        return Err(range_err(
            "palm_pos",
            format!("palm is {span:.3} m from the wrist (max {MAX_HAND_SPAN_M})"),
        ));
    }

    Ok(HandPoseFrame {
        timestamp_s: raw.timestamp_s,
        palm_position: palm,
        palm_orientation: orientation,
        wrist_position: wrist,
        fingers,
        pinch_strength: raw.pinch_strength,
        grab_strength: raw.grab_strength,
        confidence: raw.confidence,
    })
}

/// Blends two frames: linear for positions and scalars, shorter-arc slerp
/// for the palm orientation.
pub fn interpolate(a: &HandPoseFrame, b: &HandPoseFrame, t: f64) -> Result<HandPoseFrame, PoseError> {
    if !(a.timestamp_s < b.timestamp_s) {
        return Err(PoseError::Order(format!(
            "{} is not before {}",
            a.timestamp_s, b.timestamp_s
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(range_err("t", format!("{t} not in [0, 1]")));
    }
    let fingers = std::array::from_fn(|i| Finger {
        flexion: lerp(a.fingers[i].flexion, b.fingers[i].flexion, t),
        tip_position: lerp3(&a.fingers[i].tip_position, &b.fingers[i].tip_position, t),
    });
    Ok(HandPoseFrame {
        timestamp_s: lerp(a.timestamp_s, b.timestamp_s, t),
        palm_position: lerp3(&a.palm_position, &b.palm_position, t),
        palm_orientation: slerp_short(&a.palm_orientation, &b.palm_orientation, t),
        wrist_position: lerp3(&a.wrist_position, &b.wrist_position, t),
        fingers,
        pinch_strength: lerp(a.pinch_strength, b.pinch_strength, t),
        grab_strength: lerp(a.grab_strength, b.grab_strength, t),
        confidence: lerp(a.confidence, b.confidence, t),
    })
}

/// A recorded or generated sequence of frames with strictly increasing
/// timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrace {
    frames: Vec<HandPoseFrame>,
    pub source_label: String,
}

impl PoseTrace {
    pub fn new(frames: Vec<HandPoseFrame>, source_label: impl Into<String>) -> Result<Self, PoseError> {
        if frames.is_empty() {
            return Err(PoseError::TooShort { needed: 1, have: 0 });
        }
        for (i, w) in frames.windows(2).enumerate() {
            if !(w[0].timestamp_s < w[1].timestamp_s) {
                return Err(PoseError::Order(format!(
                    "frame {} at {} s does not follow frame {} at {} s",
                    i + 1,
                    w[1].timestamp_s,
                    i,
                    w[0].timestamp_s
                )));
            }
        }
        Ok(Self {
            frames,
            source_label: source_label.into(),
        })
    }

    pub fn frames(&self) -> &[HandPoseFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames[self.frames.len() - 1].timestamp_s - self.frames[0].timestamp_s
    }

    pub fn into_frames(self) -> Vec<HandPoseFrame> {
        self.frames
    }
}

/// Resamples onto `first + k / rate_hz`, keeping both endpoints.
///
/// Output times within 1e-9 s of an input frame reuse that frame verbatim, so
/// resampling at the trace's own rate is a fixed point.
pub fn resample_trace(trace: &PoseTrace, rate_hz: f64) -> Result<PoseTrace, PoseError> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(range_err("rate_hz", format!("{rate_hz} must be positive")));
    }
    let frames = trace.frames();
    if frames.len() == 1 {
        return Ok(trace.clone());
    }
    let first = frames[0].timestamp_s;
    let last = frames[frames.len() - 1].timestamp_s;
    const SNAP: f64 = 1e-9;

    let mut times = Vec::new();
    let mut k: u64 = 0;
    loop {
        let t = first + k as f64 / rate_hz;
        if t >= last - SNAP {
            times.push(last);
            break;
        }
        times.push(t);
        k += 1;
    }

    let mut out = Vec::with_capacity(times.len());
    let mut seg = 0usize;
    for t in times {
        while seg + 2 < frames.len() && frames[seg + 1].timestamp_s <= t {
            seg += 1;
        }
        let (a, b) = (&frames[seg], &frames[seg + 1]);
        let frame = if (t - a.timestamp_s).abs() <= SNAP {
            a.clone()
        } else if (t - b.timestamp_s).abs() <= SNAP {
            b.clone()
        } else {
            let frac = ((t - a.timestamp_s) / (b.timestamp_s - a.timestamp_s)).clamp(0.0, 1.0);
            let mut f = interpolate(a, b, frac)?;
            f.timestamp_s = t;
            f
        };
        out.push(frame);
    }
    PoseTrace::new(out, trace.source_label.clone())
}

/// Palm velocity at `index`: central difference inside the trace, one-sided
/// at either end.
pub fn palm_velocity(trace: &PoseTrace, index: usize) -> Result<Vec3, PoseError> {
    let frames = trace.frames();
    let n = frames.len();
    if n < 2 {
        return Err(PoseError::TooShort { needed: 2, have: n });
    }
    if index >= n {
        return Err(range_err("index", format!("{index} >= {n}")));
    }
    let (lo, hi) = if index == 0 {
        (0, 1)
    } else if index == n - 1 {
        (n - 2, n - 1)
    } else {
        (index - 1, index + 1)
    };
    let dt = frames[hi].timestamp_s - frames[lo].timestamp_s;
    Ok((frames[hi].palm_position - frames[lo].palm_position) / dt)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceHeader {
    format: String,
    version: u32,
}

/// Writes the `.poses.jsonl` format: a header line, then one frame per line.
pub fn write_trace<W: Write>(trace: &PoseTrace, mut out: W) -> Result<(), PoseError> {
    let io = |e: std::io::Error| PoseError::Io(e.to_string());
    let header = TraceHeader {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| PoseError::Io(e.to_string()))?;
    out.write_all(b"\n").map_err(io)?;
    for f in trace.frames() {
        serde_json::to_writer(&mut out, f).map_err(|e| PoseError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

pub fn trace_to_string(trace: &PoseTrace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Reads a `.poses.jsonl` trace. Every frame is validated; errors carry the
/// 1-based line number.
pub fn read_trace<R: BufRead>(input: R, source_label: &str) -> Result<PoseTrace, PoseError> {
    let mut frames = Vec::new();
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| PoseError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            let header: TraceHeader = serde_json::from_str(&line).map_err(|e| PoseError::Parse {
                line: line_no,
                message: format!("bad header: {e}"),
            })?;
            if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
                return Err(PoseError::Parse {
                    line: line_no,
                    message: format!(
                        "expected {TRACE_FORMAT} v{TRACE_VERSION}, found {} v{}",
                        header.format, header.version
                    ),
                });
            }
            saw_header = true;
            continue;
        }
        let raw: RawPoseFrame = serde_json::from_str(&line).map_err(|e| PoseError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let frame = validate_frame(&raw).map_err(|e| PoseError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    if !saw_header {
        return Err(PoseError::Parse {
            line: 1,
            message: "missing pose-trace header".into(),
        });
    }
    PoseTrace::new(frames, source_label)
}

pub fn trace_from_str(s: &str, source_label: &str) -> Result<PoseTrace, PoseError> {
    read_trace(s.as_bytes(), source_label)
}
