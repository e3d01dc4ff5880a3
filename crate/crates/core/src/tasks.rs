//! The two play tasks: moving a ball into a goal and drawing on a canvas.
//!
//! Both are pure step functions over a task state. What a prosthesis can do
//! in them comes from its declared affordances, not from its shape: a paw can
//! only push, a hook can grab, a butterfly only moves the ball while moving
//! slowly, a pen inks on contact and an airbrush sprays while triggered.

use serde::{Deserialize, Serialize};

use crate::gesture::ActiveGestures;
use crate::math::{opt_vec3_serde, vec3_serde, Vec3};
use crate::prosthesis::{AffordanceAction, AnchorRole, GestureKind, ProsthesisSpec};
use crate::retarget::{Sphere, WorldAnchor};

pub const MAX_TASK_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    #[serde(with = "vec3_serde")]
    pub min: Vec3,
    #[serde(with = "vec3_serde")]
    pub max: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plane {
    #[serde(with = "vec3_serde")]
    pub point: Vec3,
    #[serde(with = "vec3_serde")]
    pub normal: Vec3,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }

    /// In-plane basis `(u, v)` with `u x v = normal`; for a +Z normal this is
    /// (+X, +Y).
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let helper = if n.dot(&Vec3::y()).abs() < 0.9 { Vec3::y() } else { Vec3::x() };
        let u = helper.cross(&n).normalize();
        let v = n.cross(&u);
        (u, v)
    }

    pub fn to_plane_coords(&self, p: &Vec3) -> [f64; 2] {
        let (u, v) = self.basis();
        let d = p - self.point;
        [d.dot(&u), d.dot(&v)]
    }

    pub fn to_world(&self, q: &[f64; 2]) -> Vec3 {
        let (u, v) = self.basis();
        self.point + u * q[0] + v * q[1]
    }
}

/// Ray/plane intersection; `None` when parallel (within 1e-9) or when the
/// plane is behind the origin.
pub fn ray_plane(origin: &Vec3, direction: &Vec3, plane: &Plane) -> Option<Vec3> {
    let denom = direction.dot(&plane.normal);
    if denom.abs() < 1e-9 {
        return None;
    }
    let s = (plane.point - origin).dot(&plane.normal) / denom;
    if s < 0.0 {
        return None;
    }
    Some(origin + direction * s)
}

fn d_ball_radius() -> f64 {
    0.05
}
fn d_damping() -> f64 {
    2.0
}
fn d_restitution() -> f64 {
    0.5
}
fn d_grab_radius() -> f64 {
    0.08
}
fn d_goal_speed_eps() -> f64 {
    0.05
}
fn d_push_gain() -> f64 {
    1.0
}
fn d_ball_start() -> [f64; 3] {
    [0.0, 0.0, 0.0]
}
fn d_goal_center() -> [f64; 3] {
    [0.9, 0.0, 0.0]
}
fn d_goal_radius() -> f64 {
    0.1
}
fn d_bounds() -> Aabb {
    Aabb {
        min: Vec3::new(-0.5, -0.3, -0.1),
        max: Vec3::new(1.1, 0.3, 0.1),
    }
}

/// Ball scenario and physics parameters. Gravity is off: the ball slides on
/// an invisible table in front of the screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallConfig {
    #[serde(default = "d_ball_radius")]
    pub radius: f64,
    /// Velocity decay rate, 1/s.
    #[serde(default = "d_damping")]
    pub damping: f64,
    #[serde(default = "d_restitution")]
    pub restitution: f64,
    #[serde(default = "d_grab_radius")]
    pub grab_radius: f64,
    #[serde(default = "d_goal_speed_eps")]
    pub goal_speed_eps: f64,
    /// Contact gain for prostheses that declare no Push affordance.
    #[serde(default = "d_push_gain")]
    pub default_push_gain: f64,
    #[serde(default = "d_ball_start")]
    pub start: [f64; 3],
    #[serde(default = "d_goal_center")]
    pub goal_center: [f64; 3],
    #[serde(default = "d_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "d_bounds")]
    pub bounds: Aabb,
}

impl Default for BallConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all ball fields have defaults")
    }
}

fn d_contact_threshold() -> f64 {
    0.005
}
fn d_base_width() -> f64 {
    0.002
}
fn d_spot_base() -> f64 {
    0.004
}
fn d_spot_spread() -> f64 {
    0.05
}
fn d_cover_radius() -> f64 {
    0.005
}
fn d_canvas() -> Plane {
    Plane {
        point: Vec3::zeros(),
        normal: Vec3::z(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawConfig {
    #[serde(default = "d_contact_threshold")]
    pub contact_threshold: f64,
    #[serde(default = "d_base_width")]
    pub base_width: f64,
    #[serde(default = "d_spot_base")]
    pub spot_base: f64,
    /// Spray width growth, meters of width per meter of nozzle distance.
    #[serde(default = "d_spot_spread")]
    pub spot_spread: f64,
    #[serde(default = "d_cover_radius")]
    pub cover_radius: f64,
    #[serde(default = "d_canvas")]
    pub canvas: Plane,
    #[serde(default)]
    pub target_polyline: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub ink_budget: Option<u64>,
}

impl Default for DrawConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all draw fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskConfig {
    Ball(BallConfig),
    Draw(DrawConfig),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("unknown task `{0}` (expected `ball` or `draw`)")]
    UnknownTask(String),
    #[error("bad task config: {0}")]
    BadConfig(String),
}

impl TaskConfig {
    pub fn id(&self) -> &'static str {
        match self {
            Self::Ball(_) => "ball",
            Self::Draw(_) => "draw",
        }
    }

    pub fn default_for(task_id: &str) -> Result<Self, TaskError> {
        match task_id {
            "ball" => Ok(Self::Ball(BallConfig::default())),
            "draw" => Ok(Self::Draw(DrawConfig::default())),
            other => Err(TaskError::UnknownTask(other.to_string())),
        }
    }

    /// Parses a task config document for the selected task; every field is
    /// optional and unknown fields are rejected.
    pub fn from_json(task_id: &str, document: &serde_json::Value) -> Result<Self, TaskError> {
        let bad = |e: serde_json::Error| TaskError::BadConfig(e.to_string());
        let cfg = match task_id {
            "ball" => Self::Ball(serde_json::from_value(document.clone()).map_err(bad)?),
            "draw" => Self::Draw(serde_json::from_value(document.clone()).map_err(bad)?),
            other => return Err(TaskError::UnknownTask(other.to_string())),
        };
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(TaskError::BadConfig(problems.join("; ")))
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive"));
            }
        };
        match self {
            Self::Ball(b) => {
                positive("radius", b.radius);
                positive("grab_radius", b.grab_radius);
                positive("goal_radius", b.goal_radius);
                positive("goal_speed_eps", b.goal_speed_eps);
                if !(b.damping >= 0.0) {
                    out.push("damping must be >= 0".into());
                }
                if !(0.0..=1.0).contains(&b.restitution) {
                    out.push("restitution must be in [0, 1]".into());
                }
                if !(b.default_push_gain >= 0.0) {
                    out.push("default_push_gain must be >= 0".into());
                }
                let span = b.bounds.max - b.bounds.min;
                if span.iter().any(|s| !(*s > 2.0 * b.radius)) {
                    out.push("bounds must be wider than the ball".into());
                }
            }
            Self::Draw(d) => {
                positive("contact_threshold", d.contact_threshold);
                positive("base_width", d.base_width);
                positive("spot_base", d.spot_base);
                positive("cover_radius", d.cover_radius);
                if !(d.spot_spread >= 0.0) {
                    out.push("spot_spread must be >= 0".into());
                }
                if ((d.canvas.normal.norm()) - 1.0).abs() > 1e-6 {
                    out.push("canvas normal must be unit length".into());
                }
            }
        }
        out
    }

    pub fn initial_state(&self) -> TaskState {
        match self {
            Self::Ball(c) => TaskState::Ball(BallTaskState::new(c)),
            Self::Draw(c) => TaskState::Draw(DrawTaskState::new(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TaskEvent {
    Impulse {
        #[serde(with = "vec3_serde")]
        delta_v: Vec3,
        tick: u64,
    },
    Attached { anchor: String, tick: u64 },
    Released { anchor: String, tick: u64 },
    GoalReached { tick: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallTaskState {
    #[serde(with = "vec3_serde")]
    pub ball_position: Vec3,
    #[serde(with = "vec3_serde")]
    pub ball_velocity: Vec3,
    pub ball_radius: f64,
    pub attached_to: Option<String>,
    #[serde(with = "vec3_serde")]
    pub goal_center: Vec3,
    pub goal_radius: f64,
    pub bounds: Aabb,
    pub path_length_accum: f64,
    #[serde(with = "vec3_serde")]
    pub start_position: Vec3,
    pub start_tick: Option<u64>,
    pub done_tick: Option<u64>,
    #[serde(with = "opt_vec3_serde")]
    pub done_position: Option<Vec3>,
    pub done_path_length: Option<f64>,
}

impl BallTaskState {
    pub fn new(c: &BallConfig) -> Self {
        let start = Vec3::new(c.start[0], c.start[1], c.start[2]);
        Self {
            ball_position: start,
            ball_velocity: Vec3::zeros(),
            ball_radius: c.radius,
            attached_to: None,
            goal_center: Vec3::new(c.goal_center[0], c.goal_center[1], c.goal_center[2]),
            goal_radius: c.goal_radius,
            bounds: c.bounds,
            path_length_accum: 0.0,
            start_position: start,
            start_tick: None,
            done_tick: None,
            done_position: None,
            done_path_length: None,
        }
    }

    pub fn speed(&self) -> f64 {
        self.ball_velocity.norm()
    }
}

/// A proxy sphere with its world velocity over the last tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingSphere {
    pub sphere: Sphere,
    pub velocity: Vec3,
}

/// Per-tick view of the prosthesis handed to the tasks.
#[derive(Debug, Clone, Copy)]
pub struct TaskInput<'a> {
    pub proxies: &'a [MovingSphere],
    pub anchors: &'a [WorldAnchor],
    pub gestures: ActiveGestures,
    /// Palm speed, m/s.
    pub palm_speed: f64,
    pub tick: u64,
}

/// Contact gain for this prosthesis at the current palm speed.
///
/// DelicateTouch is a hard gate: above its `max_speed`, contact transfers
/// nothing.
pub fn contact_gain(spec: &ProsthesisSpec, palm_speed: f64, config: &BallConfig) -> f64 {
    for a in &spec.affordances {
        if let AffordanceAction::DelicateTouch { max_speed } = a.action {
            if palm_speed > max_speed {
                return 0.0;
            }
        }
    }
    spec.affordances
        .iter()
        .find_map(|a| match a.action {
            AffordanceAction::Push { impulse_gain } => Some(impulse_gain),
            _ => None,
        })
        .unwrap_or(config.default_push_gain)
}

fn grab_binding(spec: &ProsthesisSpec) -> Option<(GestureKind, usize)> {
    let gesture = spec
        .affordances
        .iter()
        .find(|a| a.action == AffordanceAction::GrabAttach)?
        .gesture;
    let (grip, _) = spec.first_anchor(AnchorRole::Grip)?;
    Some((gesture, grip))
}

fn resolve_walls(pos: &mut Vec3, vel: &mut Vec3, radius: f64, bounds: &Aabb, restitution: f64) {
    for k in 0..3 {
        let lo = bounds.min[k] + radius;
        let hi = bounds.max[k] - radius;
        if pos[k] < lo {
            pos[k] = (2.0 * lo - pos[k]).min(hi);
            if vel[k] < 0.0 {
                vel[k] = -vel[k] * restitution;
            }
        } else if pos[k] > hi {
            pos[k] = (2.0 * hi - pos[k]).max(lo);
            if vel[k] > 0.0 {
                vel[k] = -vel[k] * restitution;
            }
        }
    }
}

/// One ball tick: damping, contact impulse, grab/release, integration with
/// wall bounces, goal check.
pub fn ball_step(
    state: &BallTaskState,
    input: &TaskInput<'_>,
    spec: &ProsthesisSpec,
    config: &BallConfig,
    dt: f64,
) -> (BallTaskState, Vec<TaskEvent>) {
    let dt = dt.clamp(f64::MIN_POSITIVE, MAX_TASK_DT);
    let mut s = state.clone();
    let mut events = Vec::new();
    let tick = input.tick;
    s.start_tick.get_or_insert(tick);

    s.ball_velocity *= (-config.damping * dt).exp();

    if s.attached_to.is_none() {
        let deepest = input
            .proxies
            .iter()
            .map(|p| {
                let offset = s.ball_position - p.sphere.center;
                let depth = s.ball_radius + p.sphere.radius - offset.norm();
                (p, offset, depth)
            })
            .filter(|(_, _, depth)| *depth > 0.0)
            .fold(None::<(&MovingSphere, Vec3, f64)>, |best, cur| match best {
                Some(b) if b.2 >= cur.2 => Some(b),
                _ => Some(cur),
            });
        if let Some((proxy, offset, _)) = deepest {
            let normal = if offset.norm() > 1e-12 {
                Some(offset.normalize())
            } else if proxy.velocity.norm() > 1e-12 {
                Some(proxy.velocity.normalize())
            } else {
                None
            };
            if let Some(n) = normal {
                let approach = (proxy.velocity - s.ball_velocity).dot(&n);
                if approach > 0.0 {
                    let gain = contact_gain(spec, input.palm_speed, config);
                    if gain > 0.0 {
                        let delta_v = n * (gain * approach);
                        s.ball_velocity += delta_v;
                        events.push(TaskEvent::Impulse { delta_v, tick });
                    }
                }
            }
        }
    }

    let binding = grab_binding(spec);
    if let Some(name) = s.attached_to.clone() {
        let held = binding.is_some_and(|(g, _)| input.gestures.is_active(g));
        if !held {
            s.attached_to = None;
            events.push(TaskEvent::Released { anchor: name, tick });
        }
    } else if let Some((gesture, grip)) = binding {
        if input.gestures.is_active(gesture) {
            if let Some(anchor) = input.anchors.get(grip) {
                if (anchor.position - s.ball_position).norm() <= config.grab_radius {
                    s.attached_to = Some(anchor.name.clone());
                    events.push(TaskEvent::Attached {
                        anchor: anchor.name.clone(),
                        tick,
                    });
                }
            }
        }
    }

    let old = s.ball_position;
    let attached_anchor = s
        .attached_to
        .as_ref()
        .and_then(|name| input.anchors.iter().find(|a| &a.name == name));
    if let Some(anchor) = attached_anchor {
        s.ball_velocity = (anchor.position - old) / dt;
        s.ball_position = anchor.position;
    } else {
        s.ball_position += s.ball_velocity * dt;
    }
    resolve_walls(
        &mut s.ball_position,
        &mut s.ball_velocity,
        s.ball_radius,
        &s.bounds,
        config.restitution,
    );
    s.path_length_accum += (s.ball_position - old).norm();

    if s.done_tick.is_none()
        && (s.ball_position - s.goal_center).norm() <= s.goal_radius
        && s.speed() <= config.goal_speed_eps
    {
        s.done_tick = Some(tick);
        s.done_position = Some(s.ball_position);
        s.done_path_length = Some(s.path_length_accum);
        events.push(TaskEvent::GoalReached { tick });
    }
    (s, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrokePoint {
    /// Canvas-plane coordinates.
    pub position: [f64; 2],
    pub width: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stroke {
    pub points: Vec<StrokePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrokeDelta {
    pub stroke: usize,
    pub point: StrokePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawTaskState {
    pub canvas_plane: Plane,
    pub strokes: Vec<Stroke>,
    pub stroke_open: bool,
    pub target_polyline: Option<Vec<[f64; 2]>>,
    pub ink_budget: Option<u64>,
    pub ink_used: u64,
    pub spray_accum_s: f64,
    pub start_tick: Option<u64>,
}

impl DrawTaskState {
    pub fn new(c: &DrawConfig) -> Self {
        Self {
            canvas_plane: c.canvas,
            strokes: Vec::new(),
            stroke_open: false,
            target_polyline: c.target_polyline.clone(),
            ink_budget: c.ink_budget,
            ink_used: 0,
            spray_accum_s: 0.0,
            start_tick: None,
        }
    }

    pub fn ink_points(&self) -> impl Iterator<Item = &StrokePoint> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    pub fn ink_count(&self) -> usize {
        self.strokes.iter().map(|s| s.points.len()).sum()
    }

    fn append(&mut self, point: StrokePoint) -> Option<StrokeDelta> {
        if self.ink_budget.is_some_and(|b| self.ink_used >= b) {
            self.stroke_open = false;
            return None;
        }
        if !self.stroke_open {
            self.strokes.push(Stroke::default());
            self.stroke_open = true;
        }
        let idx = self.strokes.len() - 1;
        self.strokes[idx].points.push(point);
        self.ink_used += 1;
        Some(StrokeDelta { stroke: idx, point })
    }
}

/// How a prosthesis puts ink on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrawTool {
    /// Tip anchor touching the canvas.
    Contact { tip: usize },
    /// Nozzle ray while the trigger gesture is held.
    Spray {
        nozzle: usize,
        trigger: Option<(GestureKind, f64)>,
    },
    None,
}

impl DrawTool {
    pub fn from_spec(spec: &ProsthesisSpec) -> Self {
        if let Some((nozzle, _)) = spec.first_anchor(AnchorRole::Nozzle) {
            let trigger = spec.affordances.iter().find_map(|a| match a.action {
                AffordanceAction::Trigger { emission_rate } => Some((a.gesture, emission_rate)),
                _ => None,
            });
            return Self::Spray { nozzle, trigger };
        }
        if let Some((tip, _)) = spec.first_anchor(AnchorRole::Tip) {
            return Self::Contact { tip };
        }
        Self::None
    }
}

/// One drawing tick.
pub fn draw_step(
    state: &DrawTaskState,
    input: &TaskInput<'_>,
    spec: &ProsthesisSpec,
    config: &DrawConfig,
    dt: f64,
) -> (DrawTaskState, Vec<StrokeDelta>) {
    let dt = dt.clamp(f64::MIN_POSITIVE, MAX_TASK_DT);
    let mut s = state.clone();
    s.start_tick.get_or_insert(input.tick);
    let mut deltas = Vec::new();
    let plane = s.canvas_plane;

    match DrawTool::from_spec(spec) {
        DrawTool::Contact { tip } => {
            let Some(anchor) = input.anchors.get(tip) else {
                s.stroke_open = false;
                return (s, deltas);
            };
            let d = plane.signed_distance(&anchor.position);
            if d <= config.contact_threshold {
                let penetration = (-d).max(0.0);
                let projected = anchor.position - plane.normal * d;
                let point = StrokePoint {
                    position: plane.to_plane_coords(&projected),
                    width: config.base_width * (1.0 + penetration / config.contact_threshold),
                };
                deltas.extend(s.append(point));
            } else {
                s.stroke_open = false;
            }
        }
        DrawTool::Spray {
            nozzle,
            trigger: Some((gesture, rate)),
        } if input.gestures.is_active(gesture) => {
            let period = 1.0 / rate;
            if s.spray_accum_s == 0.0 && !s.stroke_open {
                s.spray_accum_s = period;
            } else {
                s.spray_accum_s += dt;
            }
            if s.spray_accum_s + 1e-12 >= period {
                s.spray_accum_s = (s.spray_accum_s - period).min(period);
                let hit = input
                    .anchors
                    .get(nozzle)
                    .and_then(|a| ray_plane(&a.position, &a.direction, &plane).map(|h| (a, h)));
                match hit {
                    Some((a, h)) => {
                        let point = StrokePoint {
                            position: plane.to_plane_coords(&h),
                            width: config.spot_base + config.spot_spread * (h - a.position).norm(),
                        };
                        deltas.extend(s.append(point));
                    }
                    None => s.stroke_open = false,
                }
            }
        }
        DrawTool::Spray { .. } | DrawTool::None => {
            s.stroke_open = false;
            s.spray_accum_s = 0.0;
        }
    }
    (s, deltas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskState {
    Ball(BallTaskState),
    Draw(DrawTaskState),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMetrics {
    pub time_to_goal_s: Option<f64>,
    pub path_efficiency: Option<f64>,
    pub stroke_rms_deviation_m: Option<f64>,
    pub ink_coverage: Option<f64>,
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Distance from `p` to the nearest point of `polyline`.
pub fn polyline_distance(p: [f64; 2], polyline: &[[f64; 2]]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => point_segment_distance(p, *only, *only),
        _ => polyline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Metrics for a task state; metrics that do not apply stay `None`.
pub fn task_metrics(state: &TaskState, config: &TaskConfig, tick_dt: f64) -> TaskMetrics {
    let mut m = TaskMetrics::default();
    match state {
        TaskState::Ball(b) => {
            if let (Some(start), Some(done)) = (b.start_tick, b.done_tick) {
                m.time_to_goal_s = Some((done - start) as f64 * tick_dt);
            }
            if let (Some(pos), Some(len)) = (b.done_position, b.done_path_length) {
                let straight = (pos - b.start_position).norm();
                m.path_efficiency = Some(if len > 0.0 { (straight / len).min(1.0) } else { 1.0 });
            }
        }
        TaskState::Draw(d) => {
            if let Some(target) = d.target_polyline.as_deref().filter(|t| !t.is_empty()) {
                let ink: Vec<[f64; 2]> = d.ink_points().map(|p| p.position).collect();
                if !ink.is_empty() {
                    let sum_sq: f64 = ink
                        .iter()
                        .map(|p| polyline_distance(*p, target).powi(2))
                        .sum();
                    m.stroke_rms_deviation_m = Some((sum_sq / ink.len() as f64).sqrt());
                }
                let cover_radius = match config {
                    TaskConfig::Draw(c) => c.cover_radius,
                    TaskConfig::Ball(_) => d_cover_radius(),
                };
                let covered = target
                    .iter()
                    .filter(|v| {
                        ink.iter().any(|p| {
                            let (dx, dy) = (p[0] - v[0], p[1] - v[1]);
                            (dx * dx + dy * dy).sqrt() <= cover_radius
                        })
                    })
                    .count();
                m.ink_coverage = Some(covered as f64 / target.len() as f64);
            }
        }
    }
    m
}
