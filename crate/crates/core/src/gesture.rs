//! Discrete gesture events from the continuous pose stream.
//!
//! Pinch and grab use two-threshold hysteresis. Swipe fires once per episode
//! of sustained palm speed; stillness brackets episodes of near-zero speed.
//! The detector state is a plain value owned by the caller.

use serde::{Deserialize, Serialize};

use crate::math::{vec3_serde, Vec3};
use crate::pose::HandPoseFrame;
use crate::prosthesis::GestureKind;

/// Comparisons on accumulated durations allow this much float slack.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureConfig {
    pub pinch_start: f64,
    pub pinch_end: f64,
    pub grab_start: f64,
    pub grab_end: f64,
    /// m/s
    pub swipe_speed_min: f64,
    /// s
    pub swipe_min_duration: f64,
    /// m/s
    pub still_eps: f64,
    /// s
    pub still_min_duration: f64,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            pinch_start: 0.8,
            pinch_end: 0.6,
            grab_start: 0.8,
            grab_end: 0.6,
            swipe_speed_min: 1.0,
            swipe_min_duration: 0.050,
            still_eps: 0.02,
            still_min_duration: 0.300,
        }
    }
}

impl GestureConfig {
    /// Problems that make the configuration unusable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, start, end) in [
            ("pinch", self.pinch_start, self.pinch_end),
            ("grab", self.grab_start, self.grab_end),
        ] {
            if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) {
                out.push(format!("{name} thresholds must lie in [0, 1]"));
            } else if start <= end {
                out.push(format!("{name}_start must exceed {name}_end"));
            }
        }
        for (name, v) in [
            ("swipe_speed_min", self.swipe_speed_min),
            ("swipe_min_duration", self.swipe_min_duration),
            ("still_eps", self.still_eps),
            ("still_min_duration", self.still_min_duration),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{name} must be a non-negative number"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gesture", rename_all = "snake_case")]
pub enum GestureEventKind {
    PinchStart,
    PinchEnd,
    GrabStart,
    GrabEnd,
    Swipe {
        #[serde(with = "vec3_serde")]
        direction: Vec3,
        speed: f64,
    },
    StillnessStart,
    StillnessEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEvent {
    #[serde(flatten)]
    pub kind: GestureEventKind,
    pub tick: u64,
}

/// Detector memory carried from one call to the next.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorState {
    pub next_tick: u64,
    pub last_time: Option<f64>,
    #[serde(with = "crate::math::opt_vec3_serde")]
    pub last_palm: Option<Vec3>,
    /// Palm speed over the most recent frame interval.
    pub palm_speed: f64,
    pub pinch_active: bool,
    pub grab_active: bool,
    pub swipe_run_start: Option<f64>,
    #[serde(with = "vec3_serde")]
    pub swipe_velocity_sum: Vec3,
    pub swipe_speed_sum: f64,
    pub swipe_samples: u32,
    pub swipe_emitted: bool,
    pub still_run_start: Option<f64>,
    pub still_active: bool,
}

impl DetectorState {
    pub fn active(&self) -> ActiveGestures {
        ActiveGestures {
            pinch: self.pinch_active,
            grab: self.grab_active,
            swipe: self.swipe_emitted,
            stillness: self.still_active,
        }
    }
}

/// Which gestures are currently held.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveGestures {
    pub pinch: bool,
    pub grab: bool,
    pub swipe: bool,
    pub stillness: bool,
}

impl ActiveGestures {
    pub fn is_active(&self, kind: GestureKind) -> bool {
        match kind {
            GestureKind::Pinch => self.pinch,
            GestureKind::Grab => self.grab,
            GestureKind::Swipe => self.swipe,
            GestureKind::Stillness => self.stillness,
        }
    }
}

fn hysteresis(active: &mut bool, value: f64, start: f64, end: f64) -> Option<bool> {
    if !*active && value >= start {
        *active = true;
        Some(true)
    } else if *active && value <= end {
        *active = false;
        Some(false)
    } else {
        None
    }
}

/// Feeds `window` (time-ordered, one engine tick per frame) through the
/// detector.
pub fn detect_gestures(
    window: &[HandPoseFrame],
    state: &DetectorState,
    config: &GestureConfig,
) -> (Vec<GestureEvent>, DetectorState) {
    let mut s = state.clone();
    let mut events = Vec::new();
    for frame in window {
        let tick = s.next_tick;
        s.next_tick += 1;
        let mut emit = |kind| events.push(GestureEvent { kind, tick });

        match hysteresis(&mut s.pinch_active, frame.pinch_strength, config.pinch_start, config.pinch_end) {
            Some(true) => emit(GestureEventKind::PinchStart),
            Some(false) => emit(GestureEventKind::PinchEnd),
            None => {}
        }
        match hysteresis(&mut s.grab_active, frame.grab_strength, config.grab_start, config.grab_end) {
            Some(true) => emit(GestureEventKind::GrabStart),
            Some(false) => emit(GestureEventKind::GrabEnd),
            None => {}
        }

        let t = frame.timestamp_s;
        let velocity = match (s.last_time, s.last_palm) {
            (Some(t0), Some(p0)) if t > t0 => Some(((frame.palm_position - p0) / (t - t0), t0)),
            _ => None,
        };
        if velocity.is_some() || s.last_time.is_none() {
            s.last_time = Some(t);
            s.last_palm = Some(frame.palm_position);
        }
        let Some((v, interval_start)) = velocity else {
            continue;
        };
        let speed = v.norm();
        s.palm_speed = speed;

        if speed >= config.swipe_speed_min {
            let run_start = *s.swipe_run_start.get_or_insert(interval_start);
            s.swipe_velocity_sum += v;
            s.swipe_speed_sum += speed;
            s.swipe_samples += 1;
            if !s.swipe_emitted && t - run_start >= config.swipe_min_duration - TIME_SLACK {
                let mean_v = s.swipe_velocity_sum / s.swipe_samples as f64;
                let direction = if mean_v.norm() > 1e-12 {
                    mean_v.normalize()
                } else {
                    v.normalize()
                };
                emit(GestureEventKind::Swipe {
                    direction,
                    speed: s.swipe_speed_sum / s.swipe_samples as f64,
                });
                s.swipe_emitted = true;
            }
        } else {
            s.swipe_run_start = None;
            s.swipe_velocity_sum = Vec3::zeros();
            s.swipe_speed_sum = 0.0;
            s.swipe_samples = 0;
            s.swipe_emitted = false;
        }

        if speed <= config.still_eps {
            let run_start = *s.still_run_start.get_or_insert(interval_start);
            if !s.still_active && t - run_start >= config.still_min_duration - TIME_SLACK {
                s.still_active = true;
                emit(GestureEventKind::StillnessStart);
            }
        } else {
            s.still_run_start = None;
            if s.still_active {
                s.still_active = false;
                emit(GestureEventKind::StillnessEnd);
            }
        }
    }
    (events, s)
}
