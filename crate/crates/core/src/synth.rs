//! Scripted hand-motion generators that stand in for a live tracker.
//!
//! Every generator moves a "tool point" (a fixed point in the wrist frame,
//! `tool_offset`) along a piecewise-linear path with the hand pointing into
//! the screen. The builtin prostheses put their working end 15 cm from the
//! wrist, which is the default offset, so one trace drives any of them.

use serde::{Deserialize, Serialize};

use crate::math::{vec3, Vec3};
use crate::pose::{hand_at, into_screen, HandPoseFrame, PoseError, PoseTrace};

pub const DEFAULT_RATE_HZ: f64 = 120.0;

fn default_tool_offset() -> [f64; 3] {
    [0.0, 0.0, 0.15]
}
fn default_swipe_start() -> [f64; 3] {
    [-0.25, 0.0, 0.0]
}
fn default_swipe_distance() -> f64 {
    0.4
}
fn default_reach_distance() -> f64 {
    0.1
}
fn default_reach_speed() -> f64 {
    0.25
}
fn default_pause() -> f64 {
    0.1
}
fn default_settle() -> f64 {
    2.0
}
fn default_stroke_speed() -> f64 {
    0.1
}
fn default_hover() -> f64 {
    0.02
}
fn default_short_settle() -> f64 {
    0.25
}
fn default_standoff() -> f64 {
    0.15
}
fn default_hold_position() -> [f64; 3] {
    [0.0, 0.0, 0.15]
}
fn default_sinusoid_center() -> [f64; 3] {
    [0.0, 0.1, 0.15]
}
fn default_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_sinusoid_duration() -> f64 {
    2.0
}

/// A generator script, as stored in `*.script.json` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorScript {
    /// Hover toward the user, reach to `start`, pause, then sweep
    /// `swipe_distance` along `direction` at `speed` and hold.
    ReachAndSwipe {
        speed: f64,
        direction: [f64; 3],
        #[serde(default = "default_swipe_start")]
        start: [f64; 3],
        #[serde(default = "default_swipe_distance")]
        swipe_distance: f64,
        #[serde(default = "default_reach_distance")]
        reach_distance: f64,
        #[serde(default = "default_reach_speed")]
        reach_speed: f64,
        #[serde(default = "default_pause")]
        pause_s: f64,
        #[serde(default = "default_settle")]
        settle_s: f64,
        #[serde(default = "default_tool_offset")]
        tool_offset: [f64; 3],
        #[serde(default)]
        pinch_strength: f64,
        #[serde(default)]
        grab_strength: f64,
    },
    /// Lower the tool onto the canvas (z = 0 plane) to `depth` below it,
    /// trace `polyline`, then lift. Negative depth hovers above the canvas.
    PenStroke {
        polyline: Vec<[f64; 2]>,
        depth: f64,
        #[serde(default = "default_stroke_speed")]
        speed: f64,
        #[serde(default = "default_hover")]
        hover: f64,
        #[serde(default = "default_short_settle")]
        settle_s: f64,
        #[serde(default = "default_tool_offset")]
        tool_offset: [f64; 3],
        #[serde(default)]
        pinch_strength: f64,
        #[serde(default)]
        grab_strength: f64,
    },
    /// Sweep the tool along `path` at `standoff` in front of the canvas with
    /// pinch held during each `[start, end]` window (seconds).
    AirbrushSweep {
        path: Vec<[f64; 2]>,
        trigger_windows: Vec<[f64; 2]>,
        #[serde(default = "default_standoff")]
        standoff: f64,
        #[serde(default = "default_stroke_speed")]
        speed: f64,
        #[serde(default = "default_short_settle")]
        settle_s: f64,
        #[serde(default = "default_tool_offset")]
        tool_offset: [f64; 3],
    },
    HoldStill {
        duration: f64,
        #[serde(default = "default_hold_position")]
        position: [f64; 3],
        #[serde(default = "default_tool_offset")]
        tool_offset: [f64; 3],
    },
    /// Tool point oscillates as `center + axis * amplitude * sin(2 pi f t)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default = "default_sinusoid_duration")]
        duration: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
        #[serde(default = "default_sinusoid_center")]
        center: [f64; 3],
        #[serde(default = "default_tool_offset")]
        tool_offset: [f64; 3],
    },
}

const GENERATOR_NAMES: [&str; 5] = [
    "reach_and_swipe",
    "pen_stroke",
    "airbrush_sweep",
    "hold_still",
    "sinusoid",
];

impl GeneratorScript {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ReachAndSwipe { .. } => GENERATOR_NAMES[0],
            Self::PenStroke { .. } => GENERATOR_NAMES[1],
            Self::AirbrushSweep { .. } => GENERATOR_NAMES[2],
            Self::HoldStill { .. } => GENERATOR_NAMES[3],
            Self::Sinusoid { .. } => GENERATOR_NAMES[4],
        }
    }

    /// Parses a script document, telling an unknown generator apart from a
    /// malformed parameter list.
    pub fn from_json(text: &str) -> Result<Self, PoseError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PoseError::BadParameter(e.to_string()))?;
        let name = value
            .get("generator")
            .and_then(|g| g.as_str())
            .ok_or_else(|| PoseError::BadParameter("missing `generator` field".into()))?;
        if !GENERATOR_NAMES.contains(&name) {
            return Err(PoseError::UnknownGenerator(name.to_string()));
        }
        serde_json::from_value(value).map_err(|e| PoseError::BadParameter(e.to_string()))
    }
}

/// Piecewise-linear tool path with per-segment end times.
struct Path {
    times: Vec<f64>,
    points: Vec<Vec3>,
}

impl Path {
    fn start(p: Vec3) -> Self {
        Self {
            times: vec![0.0],
            points: vec![p],
        }
    }

    fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn last(&self) -> Vec3 {
        *self.points.last().unwrap()
    }

    fn move_to(&mut self, p: Vec3, speed: f64) {
        let d = (p - self.last()).norm();
        if d == 0.0 {
            return;
        }
        let t = self.end_time() + d / speed;
        self.times.push(t);
        self.points.push(p);
    }

    fn hold(&mut self, duration: f64) {
        if duration > 0.0 {
            let t = self.end_time() + duration;
            let p = self.last();
            self.times.push(t);
            self.points.push(p);
        }
    }

    fn at(&self, t: f64) -> Vec3 {
        if t <= 0.0 {
            return self.points[0];
        }
        let idx = self.times.partition_point(|&ti| ti <= t);
        if idx >= self.times.len() {
            return self.last();
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let (p0, p1) = (self.points[idx - 1], self.points[idx]);
        let f = (t - t0) / (t1 - t0);
        p0 + (p1 - p0) * f
    }
}

fn positive(name: &str, v: f64) -> Result<(), PoseError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(PoseError::BadParameter(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), PoseError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(PoseError::BadParameter(format!("{name} must be >= 0, got {v}")))
    }
}

fn unit_scalar(name: &str, v: f64) -> Result<(), PoseError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(PoseError::BadParameter(format!("{name} must be in [0, 1], got {v}")))
    }
}

fn finite_all(name: &str, vals: &[f64]) -> Result<(), PoseError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PoseError::BadParameter(format!("{name} has a non-finite value")))
    }
}

fn canvas_point(p: &[f64; 2], z: f64) -> Vec3 {
    Vec3::new(p[0], p[1], z)
}

/// Samples the script at `rate_hz`; identical inputs give bit-identical
/// traces.
/// Pinch and grab strength at time `t`.
type Strengths = Box<dyn Fn(f64) -> (f64, f64)>;

pub fn synth_trace(script: &GeneratorScript, rate_hz: f64) -> Result<PoseTrace, PoseError> {
    positive("rate_hz", rate_hz)?;
    let rotation = into_screen();
    let (path, tool_offset, strengths): (Path, [f64; 3], Strengths) =
        match script {
            GeneratorScript::ReachAndSwipe {
                speed,
                direction,
                start,
                swipe_distance,
                reach_distance,
                reach_speed,
                pause_s,
                settle_s,
                tool_offset,
                pinch_strength,
                grab_strength,
            } => {
                positive("speed", *speed)?;
                positive("swipe_distance", *swipe_distance)?;
                positive("reach_speed", *reach_speed)?;
                non_negative("reach_distance", *reach_distance)?;
                non_negative("pause_s", *pause_s)?;
                non_negative("settle_s", *settle_s)?;
                unit_scalar("pinch_strength", *pinch_strength)?;
                unit_scalar("grab_strength", *grab_strength)?;
                finite_all("start", start)?;
                let dir = vec3(*direction);
                if !(dir.norm() > 1e-9) || !dir.iter().all(|c| c.is_finite()) {
                    return Err(PoseError::BadParameter("direction must be non-zero".into()));
                }
                let dir = dir.normalize();
                let start = vec3(*start);
                let mut path = Path::start(start + Vec3::new(0.0, 0.0, *reach_distance));
                path.move_to(start, *reach_speed);
                path.hold(*pause_s);
                path.move_to(start + dir * *swipe_distance, *speed);
                path.hold(*settle_s);
                let (p, g) = (*pinch_strength, *grab_strength);
                (path, *tool_offset, Box::new(move |_| (p, g)))
            }
            GeneratorScript::PenStroke {
                polyline,
                depth,
                speed,
                hover,
                settle_s,
                tool_offset,
                pinch_strength,
                grab_strength,
            } => {
                if polyline.is_empty() {
                    return Err(PoseError::BadParameter("polyline is empty".into()));
                }
                positive("speed", *speed)?;
                non_negative("hover", *hover)?;
                non_negative("settle_s", *settle_s)?;
                unit_scalar("pinch_strength", *pinch_strength)?;
                unit_scalar("grab_strength", *grab_strength)?;
                finite_all("depth", &[*depth])?;
                finite_all("polyline", &polyline.iter().flatten().copied().collect::<Vec<_>>())?;
                let z = -depth;
                let mut path = Path::start(canvas_point(&polyline[0], z + hover));
                path.move_to(canvas_point(&polyline[0], z), *speed);
                for p in &polyline[1..] {
                    path.move_to(canvas_point(p, z), *speed);
                }
                let end = polyline[polyline.len() - 1];
                path.move_to(canvas_point(&end, z + hover), *speed);
                path.hold(*settle_s);
                let (p, g) = (*pinch_strength, *grab_strength);
                (path, *tool_offset, Box::new(move |_| (p, g)))
            }
            GeneratorScript::AirbrushSweep {
                path: waypoints,
                trigger_windows,
                standoff,
                speed,
                settle_s,
                tool_offset,
            } => {
                if waypoints.is_empty() {
                    return Err(PoseError::BadParameter("path is empty".into()));
                }
                positive("speed", *speed)?;
                finite_all("standoff", &[*standoff])?;
                non_negative("settle_s", *settle_s)?;
                finite_all("path", &waypoints.iter().flatten().copied().collect::<Vec<_>>())?;
                for w in trigger_windows {
                    if !(w[0].is_finite() && w[1].is_finite() && w[0] <= w[1]) {
                        return Err(PoseError::BadParameter(format!(
                            "trigger window {w:?} must satisfy start <= end"
                        )));
                    }
                }
                let mut path = Path::start(canvas_point(&waypoints[0], *standoff));
                for p in &waypoints[1..] {
                    path.move_to(canvas_point(p, *standoff), *speed);
                }
                path.hold(*settle_s);
                let windows = trigger_windows.clone();
                let pinch = move |t: f64| {
                    let on = windows.iter().any(|w| t >= w[0] && t <= w[1]);
                    (if on { 1.0 } else { 0.0 }, 0.0)
                };
                (path, *tool_offset, Box::new(pinch))
            }
            GeneratorScript::HoldStill {
                duration,
                position,
                tool_offset,
            } => {
                positive("duration", *duration)?;
                finite_all("position", position)?;
                let mut path = Path::start(vec3(*position));
                path.hold(*duration);
                (path, *tool_offset, Box::new(|_| (0.0, 0.0)))
            }
            GeneratorScript::Sinusoid {
                amplitude,
                frequency,
                duration,
                axis,
                center,
                tool_offset,
            } => {
                non_negative("amplitude", *amplitude)?;
                positive("frequency", *frequency)?;
                positive("duration", *duration)?;
                finite_all("center", center)?;
                let axis = vec3(*axis);
                if !(axis.norm() > 1e-9) {
                    return Err(PoseError::BadParameter("axis must be non-zero".into()));
                }
                let axis = axis.normalize();
                let center = vec3(*center);
                let (a, f) = (*amplitude, *frequency);
                let n = sample_count(*duration, rate_hz);
                let offset = vec3(*tool_offset);
                let frames = (0..=n)
                    .map(|k| {
                        let t = k as f64 / rate_hz;
                        let tool = center + axis * (a * (std::f64::consts::TAU * f * t).sin());
                        hand_at(t, tool - rotation * offset, rotation, 0.0, 0.0)
                    })
                    .collect();
                return PoseTrace::new(frames, script.name());
            }
        };
    finite_all("tool_offset", &tool_offset)?;
    let offset = vec3(tool_offset);
    let n = sample_count(path.end_time(), rate_hz);
    let frames: Vec<HandPoseFrame> = (0..=n)
        .map(|k| {
            let t = k as f64 / rate_hz;
            let tool = path.at(t);
            let (pinch, grab) = strengths(t);
            hand_at(t, tool - rotation * offset, rotation, pinch, grab)
        })
        .collect();
    PoseTrace::new(frames, script.name())
}

/// Number of sample intervals covering `duration` (so `n + 1` frames).
fn sample_count(duration: f64, rate_hz: f64) -> u64 {
    (duration * rate_hz - 1e-9).ceil().max(1.0) as u64
}
