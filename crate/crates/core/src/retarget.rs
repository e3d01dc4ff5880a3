//! Hand pose + prosthesis spec -> world-space object pose, joint angles,
//! anchors and collision proxies.

use serde::{Deserialize, Serialize};

use crate::math::{axis_angle, lerp, lerp3, quat_serde, slerp_short, vec3_serde, Quat, Vec3};
use crate::pose::HandPoseFrame;
use crate::prosthesis::{Attachment, Channel, Primitive, ProsthesisSpec};

/// Similarity transform `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidTransform {
    #[serde(with = "vec3_serde")]
    pub translation: Vec3,
    #[serde(with = "quat_serde")]
    pub rotation: Quat,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Quat::identity(),
            scale: 1.0,
        }
    }

    pub fn new(translation: Vec3, rotation: Quat) -> Self {
        Self {
            translation,
            rotation,
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p * self.scale) + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            translation: self.apply_point(&other.translation),
            rotation: self.rotation * other.rotation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        let inv_scale = 1.0 / self.scale;
        RigidTransform {
            translation: -(inv_rot * self.translation) * inv_scale,
            rotation: inv_rot,
            scale: inv_scale,
        }
    }
}

impl From<&Attachment> for RigidTransform {
    /// The attachment scale also scales its offset.
    fn from(a: &Attachment) -> Self {
        RigidTransform {
            translation: a.translation * a.scale,
            rotation: a.rotation,
            scale: a.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldAnchor {
    pub name: String,
    #[serde(with = "vec3_serde")]
    pub position: Vec3,
    #[serde(with = "vec3_serde")]
    pub direction: Vec3,
}

/// Where the prosthesis is this tick: the thing that follows the hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPose {
    pub transform: RigidTransform,
    pub joint_angles: Vec<f64>,
    pub anchors_world: Vec<WorldAnchor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    #[serde(with = "vec3_serde")]
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

/// Moves a whole hand pose by a rigid motion; strengths and timestamps are
/// unchanged. The scale of `t` is ignored.
pub fn transform_pose(pose: &HandPoseFrame, t: &RigidTransform) -> HandPoseFrame {
    let rigid = RigidTransform::new(t.translation, t.rotation);
    let mut out = pose.clone();
    out.palm_position = rigid.apply_point(&pose.palm_position);
    out.wrist_position = rigid.apply_point(&pose.wrist_position);
    out.palm_orientation = t.rotation * pose.palm_orientation;
    for f in &mut out.fingers {
        f.tip_position = rigid.apply_point(&f.tip_position);
    }
    out
}

pub fn wrist_frame(pose: &HandPoseFrame) -> RigidTransform {
    RigidTransform::new(pose.wrist_position, pose.palm_orientation)
}

/// Object pose from the wrist frame composed with the spec attachment; joint
/// angles and anchors are left empty.
pub fn attach(pose: &HandPoseFrame, spec: &ProsthesisSpec) -> ObjectPose {
    let transform = wrist_frame(pose).compose(&RigidTransform::from(&spec.attachment));
    ObjectPose {
        transform,
        joint_angles: Vec::new(),
        anchors_world: Vec::new(),
    }
}

fn channel_value(pose: &HandPoseFrame, channel: Channel) -> f64 {
    match channel {
        Channel::FingerFlexion(i) => pose
            .fingers
            .get(i as usize)
            .map(|f| f.flexion)
            .unwrap_or(0.0),
        Channel::GrabStrength => pose.grab_strength,
        Channel::PinchStrength => pose.pinch_strength,
    }
}

/// `angle = lo + c * (hi - lo)` with the channel value clamped to [0, 1].
pub fn drive_articulation(pose: &HandPoseFrame, spec: &ProsthesisSpec) -> Vec<f64> {
    spec.articulation
        .iter()
        .map(|j| {
            let c = channel_value(pose, j.channel);
            let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
            if c == 0.0 {
                j.angle_lo
            } else if c == 1.0 {
                j.angle_hi
            } else {
                (j.angle_lo + c * (j.angle_hi - j.angle_lo)).clamp(j.angle_lo, j.angle_hi)
            }
        })
        .collect()
}

/// Rotation of a joint-mounted local point about the joint's pivot.
fn joint_motion(spec: &ProsthesisSpec, angles: &[f64], joint: Option<&str>) -> Option<(Vec3, Quat)> {
    let idx = spec.joint_index(joint?)?;
    let j = &spec.articulation[idx];
    let angle = angles.get(idx).copied().unwrap_or(j.angle_lo);
    Some((j.pivot, axis_angle(&j.axis, angle)))
}

fn articulate_point(motion: Option<(Vec3, Quat)>, p: &Vec3) -> Vec3 {
    match motion {
        Some((pivot, rot)) => pivot + rot * (p - pivot),
        None => *p,
    }
}

fn articulate_dir(motion: Option<(Vec3, Quat)>, d: &Vec3) -> Vec3 {
    match motion {
        Some((_, rot)) => rot * d,
        None => *d,
    }
}

/// World anchors for a given transform and joint angle set.
pub fn world_anchors(spec: &ProsthesisSpec, transform: &RigidTransform, angles: &[f64]) -> Vec<WorldAnchor> {
    spec.anchors
        .iter()
        .map(|a| {
            let motion = joint_motion(spec, angles, a.joint.as_deref());
            let local_p = articulate_point(motion, &a.local_position);
            let local_d = articulate_dir(motion, &a.local_direction);
            WorldAnchor {
                name: a.name.clone(),
                position: transform.apply_point(&local_p),
                direction: transform.apply_vector(&local_d).normalize(),
            }
        })
        .collect()
}

/// Full retarget: attachment, joint angles and world anchors.
pub fn retarget(pose: &HandPoseFrame, spec: &ProsthesisSpec) -> ObjectPose {
    let mut out = attach(pose, spec);
    out.joint_angles = drive_articulation(pose, spec);
    out.anchors_world = world_anchors(spec, &out.transform, &out.joint_angles);
    out
}

/// Exponential smoothing toward `target` with per-tick blend
/// `w = 1 - alpha^(dt / tick_dt)`. `alpha = 0` returns the target,
/// `alpha = 1` freezes at `previous`.
pub fn smooth(previous: &ObjectPose, target: &ObjectPose, alpha: f64, dt: f64, tick_dt: f64) -> ObjectPose {
    let alpha = alpha.clamp(0.0, 1.0);
    let w = 1.0 - alpha.powf(dt / tick_dt);
    if w >= 1.0 {
        return target.clone();
    }
    if w <= 0.0 {
        return previous.clone();
    }
    let transform = RigidTransform {
        translation: lerp3(&previous.transform.translation, &target.transform.translation, w),
        rotation: slerp_short(&previous.transform.rotation, &target.transform.rotation, w),
        scale: lerp(previous.transform.scale, target.transform.scale, w),
    };
    let joint_angles = if previous.joint_angles.len() == target.joint_angles.len() {
        previous
            .joint_angles
            .iter()
            .zip(&target.joint_angles)
            .map(|(a, b)| lerp(*a, *b, w))
            .collect()
    } else {
        target.joint_angles.clone()
    };
    let anchors_world = if previous.anchors_world.len() == target.anchors_world.len() {
        previous
            .anchors_world
            .iter()
            .zip(&target.anchors_world)
            .map(|(a, b)| {
                let d = lerp3(&a.direction, &b.direction, w);
                WorldAnchor {
                    name: b.name.clone(),
                    position: lerp3(&a.position, &b.position, w),
                    direction: if d.norm() > 1e-12 { d.normalize() } else { b.direction },
                }
            })
            .collect()
    } else {
        target.anchors_world.clone()
    };
    ObjectPose {
        transform,
        joint_angles,
        anchors_world,
    }
}

/// Local-frame proxy spheres for one primitive, before articulation.
///
/// Capsules get spheres spaced at most one radius apart along the axis, each
/// inflated to `sqrt(r^2 + (h/2)^2)` so the lateral surface between centers
/// stays covered. Boxes get one sphere per octant, centered in the octant
/// and sized to its half-diagonal.
pub fn primitive_proxies(p: &Primitive) -> Vec<Sphere> {
    match p {
        Primitive::Sphere { center, radius, .. } => vec![Sphere {
            center: *center,
            radius: *radius,
        }],
        Primitive::Capsule { p0, p1, radius, .. } => {
            let len = (p1 - p0).norm();
            let intervals = ((len / radius).ceil() as usize).max(1);
            let spacing = len / intervals as f64;
            let r = (radius * radius + 0.25 * spacing * spacing).sqrt();
            (0..=intervals)
                .map(|i| Sphere {
                    center: p0 + (p1 - p0) * (i as f64 / intervals as f64),
                    radius: r,
                })
                .collect()
        }
        Primitive::Box {
            center,
            half_extents,
            orientation,
            ..
        } => {
            let q = half_extents * 0.5;
            let r = q.norm();
            let mut out = Vec::with_capacity(8);
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        let local = Vec3::new(sx * q.x, sy * q.y, sz * q.z);
                        out.push(Sphere {
                            center: center + orientation * local,
                            radius: r,
                        });
                    }
                }
            }
            out
        }
    }
}

/// World-space collision spheres for the posed prosthesis, in geometry
/// order. Joint-mounted pieces rotate about their pivot first.
pub fn collision_proxy_world(spec: &ProsthesisSpec, object_pose: &ObjectPose) -> Vec<Sphere> {
    let t = &object_pose.transform;
    spec.geometry
        .iter()
        .flat_map(|p| {
            let motion = joint_motion(spec, &object_pose.joint_angles, p.joint());
            primitive_proxies(p).into_iter().map(move |s| Sphere {
                center: t.apply_point(&articulate_point(motion, &s.center)),
                radius: s.radius * t.scale,
            })
        })
        .collect()
}
