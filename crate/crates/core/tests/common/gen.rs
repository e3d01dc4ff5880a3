//! Seeded generators for wire messages, covering every message kind.
//!
//! Only finite floats are produced (JSON has no NaN), and `select_task`
//! never carries `Some(null)` since a null config means "absent" on the wire.

use limbswap_core::gesture::{GestureEvent, GestureEventKind};
use limbswap_core::math::{quat_from_wxyz_raw, Vec3};
use limbswap_core::pose::{RawFinger, RawPoseFrame};
use limbswap_core::prosthesis::CatalogSummary;
use limbswap_core::protocol::{ClientMessage, ErrorCode, ServerMessage};
use limbswap_core::retarget::{ObjectPose, RigidTransform, WorldAnchor};
use limbswap_core::session::{RenderFrame, SessionEvent, TaskView};
use limbswap_core::tasks::{StrokeDelta, StrokePoint, TaskEvent, TaskMetrics};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const CLIENT_KINDS: usize = 6;
pub const SERVER_KINDS: usize = 6;

/// Any finite f64, spread over many magnitudes, including exact zeros and
/// integers.
pub fn float(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..6) {
        0 => 0.0,
        1 => rng.gen_range(-1000..1000) as f64,
        2 => rng.gen_range(-1.0..1.0),
        _ => {
            let mag = 10f64.powi(rng.gen_range(-300..300));
            let v = rng.gen_range(-1.0..1.0) * mag;
            if v.is_finite() {
                v
            } else {
                0.5
            }
        }
    }
}

pub fn text(rng: &mut impl Rng) -> String {
    const POOL: &[&str] = &["a", "Z", "_", " ", "é", "\"", "\\", "\n", "\u{1F99E}", "0", "\u{0}", "\t", "}"];
    let n = rng.gen_range(0..12);
    (0..n).map(|_| *POOL.choose(rng).unwrap()).collect()
}

fn f3(rng: &mut impl Rng) -> [f64; 3] {
    [float(rng), float(rng), float(rng)]
}

fn v3(rng: &mut impl Rng) -> Vec3 {
    Vec3::from(f3(rng))
}

fn json_value(rng: &mut impl Rng, depth: u32) -> Value {
    let leaf = depth == 0 || rng.gen_bool(0.4);
    if leaf {
        return match rng.gen_range(0..5) {
            0 => Value::Null,
            1 => json!(rng.gen::<bool>()),
            2 => json!(rng.gen::<i64>()),
            3 => json!(float(rng)),
            _ => json!(text(rng)),
        };
    }
    if rng.gen() {
        Value::Array((0..rng.gen_range(0..4)).map(|_| json_value(rng, depth - 1)).collect())
    } else {
        let mut map = serde_json::Map::new();
        for _ in 0..rng.gen_range(0..4) {
            map.insert(text(rng), json_value(rng, depth - 1));
        }
        Value::Object(map)
    }
}

pub fn raw_pose(rng: &mut impl Rng) -> RawPoseFrame {
    RawPoseFrame {
        timestamp_s: float(rng),
        palm_pos: f3(rng),
        palm_quat: [float(rng), float(rng), float(rng), float(rng)],
        wrist_pos: f3(rng),
        fingers: (0..rng.gen_range(0..7))
            .map(|_| RawFinger {
                flex: float(rng),
                tip: f3(rng),
            })
            .collect(),
        pinch_strength: float(rng),
        grab_strength: float(rng),
        confidence: float(rng),
    }
}

pub fn client_message(rng: &mut impl Rng, kind: usize) -> ClientMessage {
    match kind % CLIENT_KINDS {
        0 => ClientMessage::Hello {
            version: rng.gen(),
            client_name: text(rng),
        },
        1 => ClientMessage::Pose(raw_pose(rng)),
        2 => ClientMessage::SelectProsthesis { id: text(rng) },
        3 => ClientMessage::SelectTask {
            id: text(rng),
            config: match json_value(rng, 3) {
                Value::Null => None,
                v => Some(v),
            },
        },
        4 => ClientMessage::Reset {},
        _ => ClientMessage::ListProstheses {},
    }
}

fn summary(rng: &mut impl Rng) -> CatalogSummary {
    CatalogSummary {
        id: text(rng),
        display_name: text(rng),
        is_static: rng.gen(),
        affordances: (0..rng.gen_range(0..3)).map(|_| text(rng)).collect(),
    }
}

fn opt(rng: &mut impl Rng) -> Option<f64> {
    rng.gen::<bool>().then(|| float(rng))
}

pub fn metrics(rng: &mut impl Rng) -> TaskMetrics {
    TaskMetrics {
        time_to_goal_s: opt(rng),
        path_efficiency: opt(rng),
        stroke_rms_deviation_m: opt(rng),
        ink_coverage: opt(rng),
    }
}

fn gesture_kind(rng: &mut impl Rng) -> GestureEventKind {
    match rng.gen_range(0..7) {
        0 => GestureEventKind::PinchStart,
        1 => GestureEventKind::PinchEnd,
        2 => GestureEventKind::GrabStart,
        3 => GestureEventKind::GrabEnd,
        4 => GestureEventKind::Swipe {
            direction: v3(rng),
            speed: float(rng),
        },
        5 => GestureEventKind::StillnessStart,
        _ => GestureEventKind::StillnessEnd,
    }
}

pub fn session_event(rng: &mut impl Rng) -> SessionEvent {
    let tick = rng.gen();
    match rng.gen_range(0..6) {
        0 => SessionEvent::Gesture(GestureEvent {
            kind: gesture_kind(rng),
            tick,
        }),
        1 => SessionEvent::Task(TaskEvent::Impulse { delta_v: v3(rng), tick }),
        2 => SessionEvent::Task(TaskEvent::Attached { anchor: text(rng), tick }),
        3 => SessionEvent::Task(TaskEvent::Released { anchor: text(rng), tick }),
        4 => SessionEvent::Task(TaskEvent::GoalReached { tick }),
        _ => SessionEvent::DroppedInput {
            reason: text(rng),
            timestamp_s: opt(rng),
            tick,
        },
    }
}

pub fn render_frame(rng: &mut impl Rng) -> RenderFrame {
    let transform = RigidTransform {
        translation: v3(rng),
        rotation: quat_from_wxyz_raw([float(rng), float(rng), float(rng), float(rng)]),
        scale: float(rng),
    };
    let object = ObjectPose {
        transform,
        joint_angles: (0..rng.gen_range(0..9)).map(|_| float(rng)).collect(),
        anchors_world: (0..rng.gen_range(0..3))
            .map(|_| WorldAnchor {
                name: text(rng),
                position: v3(rng),
                direction: v3(rng),
            })
            .collect(),
    };
    let task_view = if rng.gen() {
        TaskView::Ball {
            position: v3(rng),
            velocity: v3(rng),
            radius: float(rng),
            attached_to: rng.gen::<bool>().then(|| text(rng)),
            done: rng.gen(),
        }
    } else {
        TaskView::Draw {
            new_points: (0..rng.gen_range(0..4))
                .map(|_| StrokeDelta {
                    stroke: rng.gen_range(0..1000),
                    point: StrokePoint {
                        position: [float(rng), float(rng)],
                        width: float(rng),
                    },
                })
                .collect(),
        }
    };
    RenderFrame {
        tick: rng.gen(),
        time_s: float(rng),
        object,
        hand_visible: rng.gen(),
        task_view,
        events: (0..rng.gen_range(0..4)).map(|_| session_event(rng)).collect(),
        metrics_snapshot: rng.gen::<bool>().then(|| metrics(rng)),
        state_digest: format!("{:016x}", rng.gen::<u64>()),
    }
}

const CODES: [ErrorCode; 9] = [
    ErrorCode::Malformed,
    ErrorCode::UnknownType,
    ErrorCode::MissingField,
    ErrorCode::BadPayload,
    ErrorCode::VersionMismatch,
    ErrorCode::UnknownState,
    ErrorCode::UnknownProsthesis,
    ErrorCode::UnknownTask,
    ErrorCode::BadConfig,
];

pub fn server_message(rng: &mut impl Rng, kind: usize) -> ServerMessage {
    match kind % SERVER_KINDS {
        0 => ServerMessage::HelloAck {
            version: rng.gen(),
            catalog: (0..rng.gen_range(0..3)).map(|_| summary(rng)).collect(),
        },
        1 => ServerMessage::Frame(render_frame(rng)),
        2 => ServerMessage::Metrics(metrics(rng)),
        3 => ServerMessage::Event(session_event(rng)),
        4 => ServerMessage::Error {
            code: *CODES.choose(rng).unwrap(),
            message: text(rng),
        },
        _ => ServerMessage::Catalog {
            prostheses: (0..rng.gen_range(0..3)).map(|_| summary(rng)).collect(),
        },
    }
}
