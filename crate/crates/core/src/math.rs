//! Vector/quaternion aliases and the serde adapters used by every file format.
//!
//! World convention: right-handed, meters, +Y up, +Z from the screen toward
//! the user. Quaternions are written `[w, x, y, z]` on disk and on the wire.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Builds a unit quaternion from `[w, x, y, z]` without renormalizing.
///
/// Callers that need a guaranteed unit quaternion must check the norm; this
/// keeps stored bit patterns intact across load/save cycles.
pub fn quat_from_wxyz_raw(q: [f64; 4]) -> Quat {
    Unit::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub fn quat_to_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub fn quat_norm(q: &Quat) -> f64 {
    q.as_ref().norm()
}

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn is_finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// `(1 - t) * a + t * b`, which returns `a` at `t = 0` and `b` at `t = 1`
/// exactly.
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

pub fn lerp3(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    Vec3::new(lerp(a.x, b.x, t), lerp(a.y, b.y, t), lerp(a.z, b.z, t))
}

/// Spherical interpolation along the shorter arc.
///
/// The endpoints are returned bit-exactly; near-parallel inputs fall back to
/// a normalized lerp.
pub fn slerp_short(a: &Quat, b: &Quat, t: f64) -> Quat {
    if t <= 0.0 {
        return *a;
    }
    if t >= 1.0 {
        return *b;
    }
    let qa = a.as_ref();
    let mut qb = *b.as_ref();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let (wa, wb) = if dot > 1.0 - 1e-12 {
        (1.0 - t, t)
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        (
            ((1.0 - t) * theta).sin() / sin_theta,
            (t * theta).sin() / sin_theta,
        )
    };
    let q = qa * wa + qb * wb;
    Unit::new_normalize(q)
}

/// Rotation of `angle` radians about `axis` (normalized here).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Quat {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// serde adapter: `Vec3` as `[x, y, z]`.
pub mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

/// serde adapter: `Quat` as `[w, x, y, z]`, stored without renormalization.
pub mod quat_serde {
    use super::{quat_from_wxyz_raw, quat_to_wxyz, Quat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
        quat_to_wxyz(q).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
        Ok(quat_from_wxyz_raw(<[f64; 4]>::deserialize(d)?))
    }
}

/// serde adapter for `Option<Vec3>`.
pub mod opt_vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec3>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|v| [v.x, v.y, v.z]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec3>, D::Error> {
        Ok(Option::<[f64; 3]>::deserialize(d)?.map(|a| Vec3::new(a[0], a[1], a[2])))
    }
}
