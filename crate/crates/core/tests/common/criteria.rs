//! One check per acceptance criterion. Each returns `Ok(detail)` on success
//! and `Err(detail)` otherwise; the `acceptance` target prints them.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use limbswap_core::gesture::{detect_gestures, DetectorState, GestureConfig, GestureEventKind};
use limbswap_core::math::Vec3;
use limbswap_core::pose::{hand_at, into_screen, HandPoseFrame, PoseTrace};
use limbswap_core::prosthesis::{load_spec, validate_spec, Primitive};
use limbswap_core::protocol::{
    decode, encode, serve, ClientMessage, Connection, ConnectionConfig, LineClient, ServerConfig, ServerMessage,
};
use limbswap_core::retarget::{collision_proxy_world, retarget, transform_pose, RigidTransform};
use limbswap_core::scan::{pca_obb, scan_to_spec, sphere_proxy, PointCloud, ScanOptions};
use limbswap_core::session::{frames_to_bytes, run_replay, Session, SessionConfig, SessionEvent, PoseInput};
use limbswap_core::synth::{synth_trace, GeneratorScript};
use limbswap_core::tasks::{
    ball_step, ray_plane, Aabb, BallConfig, BallTaskState, Plane, TaskConfig, TaskEvent, TaskInput, TaskState,
};
use rand::Rng;

use super::{catalog, gen, max_abs_diff, random_pose, random_rigid, random_rotation, random_vec, rng, shipped_task,
    shipped_trace, trace_path, SHIPPED_TRACES};

pub type Outcome = Result<String, String>;

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    if took < limit {
        Ok(format!("{detail} in {:.2} s", took.as_secs_f64()))
    } else {
        Err(format!("{detail} but took {:.2} s (limit {:.0} s)", took.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn rot_components(t: &RigidTransform) -> Vec<f64> {
    t.rotation.to_rotation_matrix().matrix().iter().copied().collect()
}

/// Retargeting a moved hand equals moving the retargeted object: transform,
/// joint angles, anchors and collision proxies.
pub fn rigid_equivariance() -> Outcome {
    let started = Instant::now();
    let catalog = catalog();
    let mut rng = rng(0xE0);
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for _ in 0..100 {
        let pose = random_pose(&mut rng);
        let motion = random_rigid(&mut rng);
        let moved = transform_pose(&pose, &motion);
        for spec in catalog.specs() {
            let base = retarget(&pose, spec);
            let after = retarget(&moved, spec);
            let expected = motion.compose(&base.transform);
            let mut err = max_abs_diff(after.transform.translation.as_slice(), expected.translation.as_slice());
            err = err.max(max_abs_diff(&rot_components(&after.transform), &rot_components(&expected)));
            err = err.max((after.transform.scale - expected.scale).abs());
            err = err.max(max_abs_diff(&after.joint_angles, &base.joint_angles));
            for (a, b) in after.anchors_world.iter().zip(&base.anchors_world) {
                err = err.max(max_abs_diff(a.position.as_slice(), motion.apply_point(&b.position).as_slice()));
                err = err.max(max_abs_diff(a.direction.as_slice(), motion.apply_vector(&b.direction).as_slice()));
            }
            let pa = collision_proxy_world(spec, &after);
            let pb = collision_proxy_world(spec, &base);
            if pa.len() != pb.len() || after.anchors_world.len() != base.anchors_world.len() {
                return Err(format!("{}: proxy or anchor count changed under motion", spec.id));
            }
            for (a, b) in pa.iter().zip(&pb) {
                err = err.max(max_abs_diff(a.center.as_slice(), motion.apply_point(&b.center).as_slice()));
                err = err.max((a.radius - b.radius).abs());
            }
            worst = worst.max(err);
            checks += 1;
        }
    }
    if worst > 1e-6 {
        return Err(format!("max component error {worst:.3e} > 1e-6"));
    }
    within(
        Duration::from_secs(5),
        started,
        format!("{checks} pose x spec pairs, max component error {worst:.1e}"),
    )
}

pub const DETERMINISM_PROSTHESES: [&str; 6] = ["whisk", "paw", "pen", "airbrush", "hook", "tentacle_octet"];

/// Per-tick state hashes and the frame log bytes of one replay.
pub fn replay_fingerprint(trace: &PoseTrace, config: &SessionConfig, catalog: &limbswap_core::prosthesis::Catalog) -> (Vec<u64>, Vec<u8>) {
    let spec = catalog.get(&config.prosthesis_id).expect("catalog id");
    let ticks = limbswap_core::pose::resample_trace(trace, config.tick_rate_hz).expect("resample");
    let mut session = Session::with_spec(config.clone(), spec.clone()).expect("session");
    let mut hashes = Vec::with_capacity(ticks.len());
    let mut frames = Vec::new();
    for f in ticks.frames() {
        frames.extend(session.step(Some(PoseInput::Valid(f.clone()))));
        hashes.push(session.hash());
    }
    (hashes, frames_to_bytes(&frames))
}

pub fn determinism() -> Outcome {
    let started = Instant::now();
    let catalog = catalog();
    let traces: Vec<(&str, PoseTrace)> = SHIPPED_TRACES.iter().map(|n| (*n, shipped_trace(n))).collect();
    let mut runs = 0;
    let mut ticks = 0;
    for (name, trace) in &traces {
        for id in DETERMINISM_PROSTHESES {
            for task in ["ball", "draw"] {
                let config = SessionConfig::new(id, shipped_task(task));
                let first = replay_fingerprint(trace, &config, &catalog);
                let second = replay_fingerprint(trace, &config, &catalog);
                if first.0 != second.0 {
                    let at = first.0.iter().zip(&second.0).position(|(a, b)| a != b);
                    return Err(format!("{name} x {id} x {task}: hash sequences diverge at tick {at:?}"));
                }
                if first.1 != second.1 {
                    return Err(format!("{name} x {id} x {task}: frame logs differ"));
                }
                runs += 2;
                ticks += first.0.len() * 2;
            }
        }
    }
    within(
        Duration::from_secs(30),
        started,
        format!("{runs} runs, {ticks} ticks, identical hashes and frame logs"),
    )
}

fn count_events(frames: &[limbswap_core::session::RenderFrame], pred: impl Fn(&SessionEvent) -> bool) -> usize {
    frames.iter().flat_map(|f| &f.events).filter(|e| pred(e)).count()
}

/// Paw with grab held next to the ball: no attach, goal still reached by
/// pushing.
pub fn paw_cannot_grab() -> Outcome {
    let catalog = catalog();
    let trace = shipped_trace("reach_and_swipe");
    let task = shipped_task("ball");
    let out = run_replay(&trace, &SessionConfig::new("paw", task.clone()), catalog.get("paw").unwrap())
        .map_err(|e| e.to_string())?;
    let grabs = count_events(&out.frames, |e| {
        matches!(e, SessionEvent::Gesture(g) if g.kind == GestureEventKind::GrabStart)
    });
    let attaches = count_events(&out.frames, |e| matches!(e, SessionEvent::Task(TaskEvent::Attached { .. })));
    let pushes = count_events(&out.frames, |e| matches!(e, SessionEvent::Task(TaskEvent::Impulse { .. })));
    // The same trace with the hook does attach, so grab really was in reach.
    let hook = run_replay(&trace, &SessionConfig::new("hook", task), catalog.get("hook").unwrap())
        .map_err(|e| e.to_string())?;
    let hook_attaches = count_events(&hook.frames, |e| matches!(e, SessionEvent::Task(TaskEvent::Attached { .. })));
    let detail = format!(
        "paw: {grabs} grab starts, {attaches} attaches, {pushes} push impulses, time_to_goal {:?}; hook attaches {hook_attaches}",
        out.metrics.time_to_goal_s
    );
    if grabs > 0 && attaches == 0 && pushes > 0 && out.metrics.time_to_goal_s.is_some() && hook_attaches > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ink_after(trace: &PoseTrace, id: &str) -> Result<usize, String> {
    let catalog = catalog();
    let out = run_replay(trace, &SessionConfig::new(id, shipped_task("draw")), catalog.get(id).unwrap())
        .map_err(|e| e.to_string())?;
    match &out.final_state.task {
        TaskState::Draw(d) => Ok(d.ink_count()),
        TaskState::Ball(_) => Err("expected a draw task".into()),
    }
}

/// Tool held 10 mm off the canvas with pinch held: the pen needs contact,
/// the airbrush fires through its nozzle.
pub fn pen_vs_airbrush() -> Outcome {
    let script = GeneratorScript::from_json(
        r#"{"generator":"pen_stroke","polyline":[[-0.1,0.0],[0.1,0.0]],"depth":-0.010,"pinch_strength":1.0}"#,
    )
    .map_err(|e| e.to_string())?;
    let trace = synth_trace(&script, 120.0).map_err(|e| e.to_string())?;
    let pen = ink_after(&trace, "pen")?;
    let airbrush = ink_after(&trace, "airbrush")?;
    let detail = format!("hovering 10 mm with pinch held: pen ink {pen}, airbrush ink {airbrush}");
    if pen == 0 && airbrush > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The butterfly swept through the ball at twice its DelicateTouch limit.
pub fn butterfly_too_fast() -> Outcome {
    let catalog = catalog();
    let spec = catalog.get("butterfly").unwrap();
    let max_speed = spec
        .affordances
        .iter()
        .find_map(|a| match a.action {
            limbswap_core::prosthesis::AffordanceAction::DelicateTouch { max_speed } => Some(max_speed),
            _ => None,
        })
        .ok_or("butterfly has no DelicateTouch")?;
    let script = GeneratorScript::from_json(&format!(
        r#"{{"generator":"reach_and_swipe","speed":{},"direction":[1,0,0]}}"#,
        2.0 * max_speed
    ))
    .map_err(|e| e.to_string())?;
    let trace = synth_trace(&script, 120.0).map_err(|e| e.to_string())?;
    let config = SessionConfig::new("butterfly", TaskConfig::Ball(BallConfig::default()));
    let ticks = limbswap_core::pose::resample_trace(&trace, config.tick_rate_hz).map_err(|e| e.to_string())?;
    let mut session = Session::with_spec(config, spec.clone()).map_err(|e| e.to_string())?;
    let mut overlap_ticks = 0;
    let mut fastest_overlap = 0.0f64;
    let mut worst_dv = 0.0f64;
    for f in ticks.frames() {
        let TaskState::Ball(before) = session.state.task.clone() else { unreachable!() };
        session.step(Some(PoseInput::Valid(f.clone())));
        let TaskState::Ball(after) = &session.state.task else { unreachable!() };
        let touching = session
            .state
            .proxies
            .iter()
            .any(|p| (p.center - before.ball_position).norm() < p.radius + before.ball_radius);
        if touching {
            overlap_ticks += 1;
            fastest_overlap = fastest_overlap.max(session.state.detector.palm_speed);
        }
        worst_dv = worst_dv.max((after.ball_velocity - before.ball_velocity).norm());
    }
    let detail = format!(
        "{overlap_ticks} ticks overlapping the ball at palm speed up to {fastest_overlap:.2} m/s (limit {max_speed}), max |dv| {worst_dv:.1e}"
    );
    if overlap_ticks > 0 && worst_dv <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn affordance_differentiation() -> Outcome {
    let parts = [paw_cannot_grab(), pen_vs_airbrush(), butterfly_too_fast()];
    let ok = parts.iter().all(Result::is_ok);
    let detail = parts
        .into_iter()
        .map(|p| match p {
            Ok(d) => d,
            Err(d) => format!("FAILED {d}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Free ball under damping only, against `v(t) = v0 exp(-λt)` and
/// `x(t) = x0 + v0 (1 - exp(-λt)) / λ`.
pub fn damping_oracle() -> Result<(f64, f64), String> {
    let spec = catalog().get("whisk").unwrap().clone();
    let config = BallConfig {
        goal_center: [50.0, 0.0, 0.0],
        bounds: Aabb {
            min: Vec3::new(-100.0, -100.0, -100.0),
            max: Vec3::new(100.0, 100.0, 100.0),
        },
        ..BallConfig::default()
    };
    let dt = 1.0 / 120.0;
    let v0 = Vec3::new(0.8, -0.3, 0.1);
    let mut state = BallTaskState::new(&config);
    state.ball_velocity = v0;
    let x0 = state.ball_position;
    for tick in 0..100 {
        let input = TaskInput {
            proxies: &[],
            anchors: &[],
            gestures: Default::default(),
            palm_speed: 0.0,
            tick,
        };
        state = ball_step(&state, &input, &spec, &config, dt).0;
    }
    let t = 100.0 * dt;
    let decay = (-config.damping * t).exp();
    let v_expected = v0 * decay;
    let x_expected = x0 + v0 * (1.0 - decay) / config.damping;
    let v_err = (state.ball_velocity - v_expected).norm() / v_expected.norm();
    let x_err = (state.ball_position - x_expected).norm() / (x_expected - x0).norm();
    Ok((v_err, x_err))
}

/// Rays aimed at a known point of a random plane must hit that point.
pub fn ray_plane_oracle(n: usize) -> Result<(f64, usize), String> {
    let mut rng = rng(0xA7);
    let mut worst = 0.0f64;
    let mut misses = 0;
    for _ in 0..n {
        let normal = random_rotation(&mut rng) * Vec3::z();
        let plane = Plane {
            point: random_vec(&mut rng, 1.0),
            normal,
        };
        let (e1, e2) = plane.basis();
        let target = plane.point + e1 * rng.gen_range(-1.0..1.0) + e2 * rng.gen_range(-1.0..1.0);
        let dir = loop {
            let d = random_rotation(&mut rng) * Vec3::z();
            if d.dot(&normal).abs() > 0.05 {
                break d;
            }
        };
        let origin = target - dir * rng.gen_range(0.05..3.0);
        let scaled = dir * rng.gen_range(0.1..10.0);
        match ray_plane(&origin, &scaled, &plane) {
            Some(hit) => worst = worst.max(max_abs_diff(hit.as_slice(), target.as_slice())),
            None => misses += 1,
        }
        // Pointing away from the plane never hits; nor does a parallel ray.
        if ray_plane(&origin, &(-scaled), &plane).is_some() {
            misses += 1;
        }
        if ray_plane(&origin, &e1, &plane).is_some() {
            misses += 1;
        }
    }
    Ok((worst, misses))
}

pub fn physics_oracle() -> Outcome {
    let (v_err, x_err) = damping_oracle()?;
    let (ray_err, misses) = ray_plane_oracle(1000)?;
    let detail = format!(
        "damping after 100 ticks: velocity rel err {:.3}%, position rel err {:.3}%; 1000 rays: max err {ray_err:.1e}, wrong hit/miss {misses}",
        v_err * 100.0,
        x_err * 100.0
    );
    if v_err <= 0.01 && x_err <= 0.01 && ray_err <= 1e-9 && misses == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// A pinch signal on a hand drifting at 0.1 m/s: too fast for stillness,
/// too slow for a swipe.
pub fn drifting_signal(pinch: &[f64], grab: &[f64], heading: f64) -> Vec<HandPoseFrame> {
    let dir = Vec3::new(heading.cos(), heading.sin(), 0.0);
    pinch
        .iter()
        .zip(grab)
        .enumerate()
        .map(|(k, (&p, &g))| {
            let t = k as f64 / 120.0;
            hand_at(t, Vec3::new(0.0, 0.0, 0.45) + dir * (0.1 * t), into_screen(), p, g)
        })
        .collect()
}

/// Start/end events for one channel must alternate, starting with a start,
/// and each must sit on the right side of its threshold.
pub fn check_alternation(values: &[f64], starts: &[u64], ends: &[u64], start_th: f64, end_th: f64) -> Result<(), String> {
    let mut merged: Vec<(u64, bool)> = starts.iter().map(|&t| (t, true)).chain(ends.iter().map(|&t| (t, false))).collect();
    merged.sort();
    for (i, &(tick, is_start)) in merged.iter().enumerate() {
        if is_start != (i % 2 == 0) {
            return Err(format!("event {i} at tick {tick} breaks alternation"));
        }
        let v = values[tick as usize];
        if (is_start && v < start_th) || (!is_start && v > end_th) {
            return Err(format!("event at tick {tick} with value {v}"));
        }
        if i > 0 && merged[i - 1].0 == tick {
            return Err(format!("two events at tick {tick}"));
        }
    }
    Ok(())
}

pub fn gesture_hysteresis() -> Outcome {
    let config = GestureConfig::default();
    let mut rng = rng(0x6E5);
    let mut frames_seen = 0;
    for i in 0..10_000 {
        let len = rng.gen_range(20..120);
        let pinch: Vec<f64> = (0..len)
            .map(|_| loop {
                let v = rng.gen_range(config.pinch_end..config.pinch_start);
                if v > config.pinch_end {
                    break v;
                }
            })
            .collect();
        let grab = vec![0.0; len];
        let window = drifting_signal(&pinch, &grab, rng.gen_range(0.0..std::f64::consts::TAU));
        let (events, _) = detect_gestures(&window, &DetectorState::default(), &config);
        if !events.is_empty() {
            return Err(format!("banded signal {i} produced {events:?}"));
        }
        frames_seen += len;
    }
    let mut transitions = 0;
    for i in 0..10_000 {
        let len = rng.gen_range(10..150);
        let walk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut v: f64 = rng.gen_range(0.0..=1.0);
            (0..len)
                .map(|_| {
                    v = if rng.gen_bool(0.1) {
                        rng.gen_range(0.0..=1.0)
                    } else {
                        (v + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0)
                    };
                    v
                })
                .collect::<Vec<f64>>()
        };
        let pinch = walk(&mut rng);
        let grab = walk(&mut rng);
        let window = drifting_signal(&pinch, &grab, 0.0);
        let (events, _) = detect_gestures(&window, &DetectorState::default(), &config);
        let mut ticks: HashMap<&str, Vec<u64>> = HashMap::new();
        for e in &events {
            let key = match e.kind {
                GestureEventKind::PinchStart => "pinch_start",
                GestureEventKind::PinchEnd => "pinch_end",
                GestureEventKind::GrabStart => "grab_start",
                GestureEventKind::GrabEnd => "grab_end",
                _ => return Err(format!("signal {i}: unexpected {e:?} on a drifting hand")),
            };
            ticks.entry(key).or_default().push(e.tick);
        }
        let get = |k: &str| ticks.get(k).cloned().unwrap_or_default();
        check_alternation(&pinch, &get("pinch_start"), &get("pinch_end"), config.pinch_start, config.pinch_end)
            .map_err(|e| format!("signal {i} pinch: {e}"))?;
        check_alternation(&grab, &get("grab_start"), &get("grab_end"), config.grab_start, config.grab_end)
            .map_err(|e| format!("signal {i} grab: {e}"))?;
        transitions += events.len();
    }
    Ok(format!(
        "10^4 banded signals ({frames_seen} frames): 0 events; 10^4 free signals: {transitions} transitions, all alternating"
    ))
}

/// Points uniformly inside a rotated box with half extents `half`.
pub fn elongated_cloud(rng: &mut impl Rng, half: [f64; 3], n: usize) -> (PointCloud, Vec3) {
    let rotation = random_rotation(rng);
    let offset = random_vec(rng, 0.5);
    let points = (0..n)
        .map(|_| {
            let local = Vec3::new(
                rng.gen_range(-half[0]..half[0]),
                rng.gen_range(-half[1]..half[1]),
                rng.gen_range(-half[2]..half[2]),
            );
            rotation * local + offset
        })
        .collect();
    (PointCloud::new(points, "synthetic"), rotation * Vec3::x())
}

pub fn scan_pipeline() -> Outcome {
    let started = Instant::now();
    let mut rng = rng(0x5CA);
    let mut worst_dot = 1.0f64;
    let mut points_checked = 0;
    for k in 0..20 {
        let (cloud, long_axis) = elongated_cloud(&mut rng, [0.15, 0.04, 0.015], 1500);
        let obb = pca_obb(&cloud).map_err(|e| e.to_string())?;
        worst_dot = worst_dot.min(obb.axes[0].dot(&long_axis).abs());
        let proxy = sphere_proxy(&cloud, 0.02).map_err(|e| e.to_string())?;
        let spec = scan_to_spec(&cloud, &format!("scan_{k}"), &ScanOptions::default()).map_err(|e| e.to_string())?;
        let spheres: Vec<(Vec3, f64)> = spec
            .geometry
            .iter()
            .filter_map(|p| match p {
                Primitive::Sphere { center, radius, .. } => Some((*center, *radius)),
                _ => None,
            })
            .collect();
        for p in &cloud.points {
            if !proxy.iter().any(|s| s.contains(p)) {
                return Err(format!("cloud {k}: point {p:?} outside the sphere proxy"));
            }
            if !spheres.iter().any(|(c, r)| (p - c).norm() <= *r) {
                return Err(format!("cloud {k}: point {p:?} outside the spec geometry"));
            }
            points_checked += 1;
        }
        let report = validate_spec(&spec);
        if !report.is_valid() {
            return Err(format!("cloud {k}: {report}"));
        }
        let reloaded = load_spec(&spec.to_json_pretty()).map_err(|e| e.to_string())?;
        if reloaded != spec {
            return Err(format!("cloud {k}: spec does not round-trip"));
        }
    }
    if worst_dot < 0.999 {
        return Err(format!("principal axis |dot| {worst_dot:.5} < 0.999"));
    }
    within(
        Duration::from_secs(5),
        started,
        format!("20 clouds: min |dot| {worst_dot:.5}, {points_checked} points all covered, specs valid and round-trip"),
    )
}

pub fn round_trip_totality(per_kind: usize, seed: u64) -> Result<usize, String> {
    let mut rng = rng(seed);
    let mut n = 0;
    for kind in 0..gen::CLIENT_KINDS {
        for _ in 0..per_kind {
            let m = gen::client_message(&mut rng, kind);
            let text = encode(&m);
            match decode::<ClientMessage>(&text) {
                Ok(back) if back == m => n += 1,
                other => return Err(format!("{text} -> {other:?}")),
            }
        }
    }
    for kind in 0..gen::SERVER_KINDS {
        for _ in 0..per_kind {
            let m = gen::server_message(&mut rng, kind);
            let text = encode(&m);
            match decode::<ServerMessage>(&text) {
                Ok(back) if back == m => n += 1,
                other => return Err(format!("{text} -> {other:?}")),
            }
        }
    }
    Ok(n)
}

/// A scripted client: the messages it sends and how many frames it waits
/// for.
#[derive(Debug, Clone)]
pub struct Script {
    pub messages: Vec<ClientMessage>,
    pub frames: usize,
}

pub fn test_connection_config() -> ConnectionConfig {
    ConnectionConfig {
        max_pending: 4096,
        ..ConnectionConfig::default()
    }
}

fn hello() -> ClientMessage {
    ClientMessage::Hello {
        version: limbswap_core::protocol::PROTOCOL_VERSION,
        client_name: "scripted".into(),
    }
}

fn poses(trace: &PoseTrace) -> impl Iterator<Item = ClientMessage> + '_ {
    trace.frames().iter().map(|f| ClientMessage::Pose(f.to_raw()))
}

/// Paw pushing the ball with the shipped swipe trace, one pose per tick.
pub fn swipe_client() -> Script {
    let mut messages = vec![hello(), ClientMessage::SelectProsthesis { id: "paw".into() }];
    messages.extend(poses(&shipped_trace("reach_and_swipe")));
    Script { messages, frames: 230 }
}

/// Pen on the canvas, streaming poses at twice the tick rate so that
/// newest-wins drops happen every tick.
pub fn pen_client() -> Script {
    let text = std::fs::read_to_string(super::data_dir().join("traces").join("pen_stroke.script.json"))
        .expect("pen_stroke script");
    let script = GeneratorScript::from_json(&text).expect("script parses");
    let trace = synth_trace(&script, 240.0).expect("synth");
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(super::task_config_path("draw")).unwrap()).unwrap();
    let mut messages = vec![
        hello(),
        ClientMessage::SelectProsthesis { id: "pen".into() },
        ClientMessage::SelectTask {
            id: "draw".into(),
            config: Some(config),
        },
    ];
    messages.extend(poses(&trace));
    Script { messages, frames: 200 }
}

/// Server messages in the order a client would see them, up to and
/// including the `frames`-th frame, from an in-process connection.
pub fn sequential_stream(script: &Script) -> Vec<ServerMessage> {
    let mut conn = Connection::new(Arc::new(catalog()), test_connection_config());
    let mut out = Vec::new();
    for m in &script.messages {
        out.extend(conn.on_message(&encode(m)).messages);
    }
    let mut frames = 0;
    while frames < script.frames {
        for m in conn.tick() {
            if frames < script.frames {
                frames += matches!(m, ServerMessage::Frame(_)) as usize;
                out.push(m);
            }
        }
    }
    out
}

pub fn start_server() -> std::io::Result<limbswap_core::protocol::ServerHandle> {
    serve(
        ServerConfig {
            bind: "127.0.0.1:0".into(),
            connection: test_connection_config(),
            input_delay: Duration::from_millis(250),
        },
        Arc::new(catalog()),
    )
}

/// Plays `script` against a live server, collecting everything up to the
/// `frames`-th frame.
pub fn live_stream(addr: SocketAddr, script: &Script) -> Result<Vec<ServerMessage>, String> {
    let mut client = LineClient::connect(addr).map_err(|e| e.to_string())?;
    client.send_all(&script.messages).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    let mut frames = 0;
    while frames < script.frames {
        match client.recv(Duration::from_secs(10)).map_err(|e| e.to_string())? {
            Some(m) => {
                frames += matches!(m, ServerMessage::Frame(_)) as usize;
                out.push(m);
            }
            None => return Err(format!("server closed the stream after {frames} frames")),
        }
    }
    client.shutdown();
    Ok(out)
}

pub fn last_digest(stream: &[ServerMessage]) -> Option<String> {
    stream.iter().rev().find_map(|m| match m {
        ServerMessage::Frame(f) => Some(f.state_digest.clone()),
        _ => None,
    })
}

pub fn concurrent_clients() -> Result<String, String> {
    let scripts = [swipe_client(), pen_client()];
    let expected: Vec<Vec<ServerMessage>> = scripts.iter().map(sequential_stream).collect();
    let server = start_server().map_err(|e| e.to_string())?;
    let addr = server.local_addr();
    let live: Vec<Result<Vec<ServerMessage>, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = scripts.iter().map(|sc| s.spawn(move || live_stream(addr, sc))).collect();
        handles.into_iter().map(|h| h.join().expect("client thread")).collect()
    });
    server.shutdown();
    for (i, (got, want)) in live.into_iter().zip(&expected).enumerate() {
        let got = got.map_err(|e| format!("client {i}: {e}"))?;
        if &got != want {
            let at = got.iter().zip(want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!("client {i}: live stream differs from sequential run at message {at}"));
        }
    }
    let (a, b) = (last_digest(&expected[0]), last_digest(&expected[1]));
    if a == b {
        return Err("the two sessions ended with the same digest".into());
    }
    Ok(format!(
        "2 concurrent clients matched their sequential streams ({} and {} messages)",
        expected[0].len(),
        expected[1].len()
    ))
}

pub fn protocol() -> Outcome {
    let n = round_trip_totality(500, 0x9E7)?;
    let clients = concurrent_clients()?;
    Ok(format!("{n} generated messages round-trip; {clients}"))
}

/// Runs `limbswap simulate` for swipe + paw + ball into `dir`, returning the
/// metrics and frame log bytes.
pub fn simulate_golden_run(dir: &std::path::Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let metrics = dir.join("metrics.json");
    let frames = dir.join("run.frames.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_limbswap"))
        .arg("simulate")
        .arg("--trace")
        .arg(trace_path("reach_and_swipe"))
        .args(["--prosthesis", "paw", "--task", "ball", "--task-config"])
        .arg(super::task_config_path("ball"))
        .arg("--out")
        .arg(&metrics)
        .arg("--frames")
        .arg(&frames)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("simulate exited with {status}"));
    }
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok((read(&metrics)?, read(&frames)?))
}

pub const GOLDEN_METRICS: &str = "swipe_paw_ball.metrics.json";
pub const GOLDEN_FRAMES: &str = "swipe_paw_ball.frames.jsonl";

pub fn end_to_end_golden() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        runs.push(simulate_golden_run(&dir)?);
    }
    let (first, second) = (&runs[0], &runs[1]);
    if first != second {
        return Err("two simulate runs wrote different bytes".into());
    }
    let doc: serde_json::Value = serde_json::from_slice(&first.0).map_err(|e| e.to_string())?;
    let ttg = doc["time_to_goal_s"].as_f64();
    let eff = doc["path_efficiency"].as_f64();
    let golden = super::golden_dir();
    if std::env::var_os("LIMBSWAP_BLESS").is_some() {
        std::fs::create_dir_all(&golden).map_err(|e| e.to_string())?;
        std::fs::write(golden.join(GOLDEN_METRICS), &first.0).map_err(|e| e.to_string())?;
        std::fs::write(golden.join(GOLDEN_FRAMES), &first.1).map_err(|e| e.to_string())?;
    }
    let stored_metrics = std::fs::read(golden.join(GOLDEN_METRICS)).map_err(|e| format!("golden metrics: {e}"))?;
    let stored_frames = std::fs::read(golden.join(GOLDEN_FRAMES)).map_err(|e| format!("golden frames: {e}"))?;
    let detail = format!("time_to_goal_s {ttg:?}, path_efficiency {eff:?}");
    if ttg.is_none() || !eff.is_some_and(|e| e > 0.0 && e <= 1.0) {
        return Err(detail);
    }
    if stored_metrics != first.0 || stored_frames != first.1 {
        return Err(format!("{detail}; output differs from the stored golden files"));
    }
    Ok(format!("{detail}; repeated runs and stored goldens byte-identical"))
}
