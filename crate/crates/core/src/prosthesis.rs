//! Prosthesis specifications: the object that replaces the hand.
//!
//! A spec carries collision primitives in its own local frame, the attachment
//! into the wrist frame, named anchors, declared gesture affordances and an
//! optional flat list of single-axis joints. Specs with no joints are static.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{quat_norm, quat_serde, vec3_serde, Quat, Vec3};

pub const SPEC_VERSION: u32 = 1;
pub const SPEC_EXTENSION: &str = ".prosthesis.json";
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        #[serde(with = "vec3_serde")]
        center: Vec3,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joint: Option<String>,
    },
    Capsule {
        #[serde(with = "vec3_serde")]
        p0: Vec3,
        #[serde(with = "vec3_serde")]
        p1: Vec3,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joint: Option<String>,
    },
    Box {
        #[serde(with = "vec3_serde")]
        center: Vec3,
        #[serde(with = "vec3_serde")]
        half_extents: Vec3,
        #[serde(with = "quat_serde")]
        orientation: Quat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joint: Option<String>,
    },
}

impl Primitive {
    /// Name of the joint this piece hangs from, if articulated.
    pub fn joint(&self) -> Option<&str> {
        match self {
            Self::Sphere { joint, .. } | Self::Capsule { joint, .. } | Self::Box { joint, .. } => {
                joint.as_deref()
            }
        }
    }

    /// Radius of a ball about the local origin that contains this piece.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Self::Sphere { center, radius, .. } => center.norm() + radius,
            Self::Capsule { p0, p1, radius, .. } => p0.norm().max(p1.norm()) + radius,
            Self::Box {
                center, half_extents, ..
            } => center.norm() + half_extents.norm(),
        }
    }
}

/// Maps object-local coordinates into the wrist frame:
/// `p_wrist = scale * (rotation * p_local + translation)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attachment {
    #[serde(with = "vec3_serde")]
    pub translation: Vec3,
    #[serde(with = "quat_serde")]
    pub rotation: Quat,
    pub scale: f64,
}

impl Default for Attachment {
    fn default() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Quat::identity(),
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRole {
    Tip,
    Nozzle,
    Grip,
    Surface,
    EffectorBase,
}

impl fmt::Display for AnchorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Tip => "Tip",
            Self::Nozzle => "Nozzle",
            Self::Grip => "Grip",
            Self::Surface => "Surface",
            Self::EffectorBase => "EffectorBase",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub name: String,
    #[serde(with = "vec3_serde")]
    pub local_position: Vec3,
    #[serde(with = "vec3_serde")]
    pub local_direction: Vec3,
    pub role: AnchorRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureKind {
    Pinch,
    Grab,
    Swipe,
    Stillness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AffordanceAction {
    /// Emits ink from a Nozzle (or Tip) while the bound gesture is held.
    Trigger { emission_rate: f64 },
    /// Bound gesture attaches a nearby ball to the Grip anchor.
    GrabAttach,
    /// Contacts shove the ball with `impulse_gain` times the approach speed.
    Push { impulse_gain: f64 },
    /// Contacts only move the ball while the palm is slower than `max_speed`.
    DelicateTouch { max_speed: f64 },
}

impl AffordanceAction {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Trigger { .. } => "Trigger",
            Self::GrabAttach => "GrabAttach",
            Self::Push { .. } => "Push",
            Self::DelicateTouch { .. } => "DelicateTouch",
        }
    }

    /// Anchor roles any one of which must be present for this action.
    pub fn required_roles(&self) -> &'static [AnchorRole] {
        match self {
            Self::Trigger { .. } => &[AnchorRole::Nozzle, AnchorRole::Tip],
            Self::GrabAttach => &[AnchorRole::Grip],
            Self::Push { .. } | Self::DelicateTouch { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affordance {
    pub gesture: GestureKind,
    pub action: AffordanceAction,
}

/// Scalar of the hand pose that drives a joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    FingerFlexion(u8),
    GrabStrength,
    PinchStrength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub name: String,
    #[serde(with = "vec3_serde")]
    pub axis: Vec3,
    #[serde(with = "vec3_serde")]
    pub pivot: Vec3,
    pub angle_lo: f64,
    pub angle_hi: f64,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsthesisSpec {
    pub spec_version: u32,
    pub id: String,
    pub display_name: String,
    pub geometry: Vec<Primitive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_ref: Option<String>,
    pub attachment: Attachment,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
    #[serde(default)]
    pub affordances: Vec<Affordance>,
    #[serde(default)]
    pub articulation: Vec<Joint>,
    #[serde(default)]
    pub motion_smoothing_alpha: f64,
}

impl ProsthesisSpec {
    pub fn is_static(&self) -> bool {
        self.articulation.is_empty()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.articulation.iter().position(|j| j.name == name)
    }

    pub fn first_anchor(&self, role: AnchorRole) -> Option<(usize, &Anchor)> {
        self.anchors.iter().enumerate().find(|(_, a)| a.role == role)
    }

    pub fn has_action(&self, pred: impl Fn(&AffordanceAction) -> bool) -> bool {
        self.affordances.iter().any(|a| pred(&a.action))
    }

    /// Geometry bounding radius about the local origin.
    pub fn bounding_radius(&self) -> f64 {
        self.geometry
            .iter()
            .map(Primitive::bounding_radius)
            .fold(0.0, f64::max)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization is infallible")
    }

    /// Short listing used by the catalog command and the protocol handshake.
    pub fn summary(&self) -> CatalogSummary {
        CatalogSummary {
            id: self.id.clone(),
            display_name: self.display_name.clone(),
            is_static: self.is_static(),
            affordances: self
                .affordances
                .iter()
                .map(|a| format!("{:?}:{}", a.gesture, a.action.label()))
                .collect(),
        }
    }
}

/// First affordance bound to `gesture`, in declaration order.
pub fn affordance_lookup(spec: &ProsthesisSpec, gesture: GestureKind) -> Option<AffordanceAction> {
    spec.affordances
        .iter()
        .find(|a| a.gesture == gesture)
        .map(|a| a.action)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSummary {
    pub id: String,
    pub display_name: String,
    pub is_static: bool,
    pub affordances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invariant violated: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invariant(Vec<Violation>),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("duplicate prosthesis id `{0}` in catalog")]
    DuplicateId(String),
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

fn check_unit_vec(report: &mut ValidationReport, path: &str, v: &Vec3, zero_label: &str) {
    if !finite3(v) {
        report.push(path, "non-finite component");
        return;
    }
    let n = v.norm();
    if n < 1e-12 {
        report.push(path, zero_label);
    } else if (n - 1.0).abs() > UNIT_TOLERANCE {
        report.push(path, format!("not unit length (norm {n})"));
    }
}

fn check_unit_quat(report: &mut ValidationReport, path: &str, q: &Quat) {
    let n = quat_norm(q);
    if !n.is_finite() {
        report.push(path, "non-finite component");
    } else if (n - 1.0).abs() > UNIT_TOLERANCE {
        report.push(path, format!("quaternion not unit length (norm {n})"));
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

/// Collects every invariant violation; an empty report means the spec is
/// usable.
pub fn validate_spec(spec: &ProsthesisSpec) -> ValidationReport {
    let mut r = ValidationReport::default();
    if spec.spec_version != SPEC_VERSION {
        r.push("spec_version", format!("unsupported version {}", spec.spec_version));
    }
    if !is_token(&spec.id) {
        r.push("id", format!("`{}` is not a token of [a-z0-9_-]", spec.id));
    }
    if spec.geometry.is_empty() {
        r.push("geometry", "at least one primitive is required");
    }

    let joint_known = |name: &Option<String>| match name {
        Some(n) => spec.joint_index(n).is_some(),
        None => true,
    };

    for (i, p) in spec.geometry.iter().enumerate() {
        let path = format!("geometry[{i}]");
        match p {
            Primitive::Sphere {
                center,
                radius,
                joint,
            } => {
                if !finite3(center) {
                    r.push(format!("{path}.center"), "non-finite component");
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    r.push(format!("{path}.radius"), "radius must be positive");
                }
                if !joint_known(joint) {
                    r.push(format!("{path}.joint"), "references an unknown joint");
                }
            }
            Primitive::Capsule {
                p0,
                p1,
                radius,
                joint,
            } => {
                if !finite3(p0) || !finite3(p1) {
                    r.push(path.clone(), "non-finite endpoint");
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    r.push(format!("{path}.radius"), "radius must be positive");
                }
                if !joint_known(joint) {
                    r.push(format!("{path}.joint"), "references an unknown joint");
                }
            }
            Primitive::Box {
                center,
                half_extents,
                orientation,
                joint,
            } => {
                if !finite3(center) {
                    r.push(format!("{path}.center"), "non-finite component");
                }
                if !(finite3(half_extents) && half_extents.iter().all(|h| *h > 0.0)) {
                    r.push(format!("{path}.half_extents"), "half extents must be positive");
                }
                check_unit_quat(&mut r, &format!("{path}.orientation"), orientation);
                if !joint_known(joint) {
                    r.push(format!("{path}.joint"), "references an unknown joint");
                }
            }
        }
    }

    let a = &spec.attachment;
    if !finite3(&a.translation) {
        r.push("attachment.translation", "non-finite component");
    }
    check_unit_quat(&mut r, "attachment.rotation", &a.rotation);
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        r.push("attachment.scale", "scale must be positive");
    }

    let bound = 2.0 * spec.bounding_radius();
    for (i, anchor) in spec.anchors.iter().enumerate() {
        let path = format!("anchors[{i}]");
        if anchor.name.is_empty() {
            r.push(format!("{path}.name"), "empty anchor name");
        }
        if spec.anchors[..i].iter().any(|b| b.name == anchor.name) {
            r.push(format!("{path}.name"), format!("duplicate anchor name `{}`", anchor.name));
        }
        if !finite3(&anchor.local_position) {
            r.push(format!("{path}.local_position"), "non-finite component");
        } else if anchor.local_position.norm() > bound {
            r.push(
                format!("{path}.local_position"),
                format!(
                    "anchor outside bounds ({:.3} m from origin, limit {:.3} m)",
                    anchor.local_position.norm(),
                    bound
                ),
            );
        }
        check_unit_vec(&mut r, &format!("{path}.local_direction"), &anchor.local_direction, "zero direction");
        if !joint_known(&anchor.joint) {
            r.push(format!("{path}.joint"), "references an unknown joint");
        }
    }

    for (i, aff) in spec.affordances.iter().enumerate() {
        let path = format!("affordances[{i}].action");
        let param = match aff.action {
            AffordanceAction::Trigger { emission_rate } => Some(("emission_rate", emission_rate)),
            AffordanceAction::Push { impulse_gain } => Some(("impulse_gain", impulse_gain)),
            AffordanceAction::DelicateTouch { max_speed } => Some(("max_speed", max_speed)),
            AffordanceAction::GrabAttach => None,
        };
        if let Some((name, v)) = param {
            if !(v > 0.0 && v.is_finite()) {
                r.push(format!("{path}.{name}"), "parameter must be positive");
            }
        }
        let roles = aff.action.required_roles();
        if !roles.is_empty() && !spec.anchors.iter().any(|an| roles.contains(&an.role)) {
            let names: Vec<String> = roles.iter().map(|r| r.to_string()).collect();
            r.push(
                path,
                format!(
                    "{} requires a {} anchor",
                    aff.action.label(),
                    names.join(" or ")
                ),
            );
        }
    }

    for (i, j) in spec.articulation.iter().enumerate() {
        let path = format!("articulation[{i}]");
        if spec.articulation[..i].iter().any(|k| k.name == j.name) {
            r.push(format!("{path}.name"), format!("duplicate joint name `{}`", j.name));
        }
        check_unit_vec(&mut r, &format!("{path}.axis"), &j.axis, "zero axis");
        if !finite3(&j.pivot) {
            r.push(format!("{path}.pivot"), "non-finite component");
        }
        if !(j.angle_lo.is_finite() && j.angle_hi.is_finite()) {
            r.push(path.clone(), "non-finite angle limit");
        } else if j.angle_lo > j.angle_hi {
            r.push(path.clone(), "angle_lo exceeds angle_hi");
        }
        if let Channel::FingerFlexion(idx) = j.channel {
            if idx > 4 {
                r.push(format!("{path}.channel"), format!("finger index {idx} not in 0..4"));
            }
        }
    }

    let alpha = spec.motion_smoothing_alpha;
    if !(0.0..=1.0).contains(&alpha) {
        r.push("motion_smoothing_alpha", format!("{alpha} not in [0, 1]"));
    }
    r
}

/// Parses and validates a `.prosthesis.json` document.
pub fn load_spec(document: &str) -> Result<ProsthesisSpec, SpecError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| SpecError::Parse(e.to_string()))?;
    if let Some(v) = value.get("spec_version") {
        if v.as_u64() != Some(SPEC_VERSION as u64) {
            return Err(SpecError::Schema {
                path: "spec_version".into(),
                message: format!("unsupported version {v}"),
            });
        }
    }
    let spec: ProsthesisSpec = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        SpecError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    let report = validate_spec(&spec);
    if !report.is_valid() {
        return Err(SpecError::Invariant(report.violations));
    }
    Ok(spec)
}

pub fn load_spec_file(path: &Path) -> Result<ProsthesisSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    load_spec(&text)
}

/// An immutable set of specs keyed by id, sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    specs: Vec<ProsthesisSpec>,
}

impl Catalog {
    pub fn from_specs(mut specs: Vec<ProsthesisSpec>) -> Result<Self, SpecError> {
        specs.sort_by(|a, b| a.id.cmp(&b.id));
        for w in specs.windows(2) {
            if w[0].id == w[1].id {
                return Err(SpecError::DuplicateId(w[0].id.clone()));
            }
        }
        Ok(Self { specs })
    }

    /// Loads every `*.prosthesis.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, SpecError> {
        let io = |e: std::io::Error| SpecError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(SPEC_EXTENSION))
            })
            .collect();
        paths.sort();
        let specs = paths
            .iter()
            .map(|p| {
                load_spec_file(p).map_err(|e| match e {
                    SpecError::Io { .. } => e,
                    other => SpecError::Io {
                        path: p.clone(),
                        message: other.to_string(),
                    },
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_specs(specs)
    }

    pub fn get(&self, id: &str) -> Option<&ProsthesisSpec> {
        self.specs
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.specs[i])
    }

    pub fn specs(&self) -> &[ProsthesisSpec] {
        &self.specs
    }

    pub fn ids(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn summaries(&self) -> Vec<CatalogSummary> {
        self.specs.iter().map(ProsthesisSpec::summary).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Directory holding the shipped catalog files.
pub fn builtin_catalog_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("catalog")
}

/// Catalog directory honoring the `LIMBSWAP_CATALOG` override.
pub fn catalog_dir_from_env() -> PathBuf {
    std::env::var_os("LIMBSWAP_CATALOG")
        .map(PathBuf::from)
        .unwrap_or_else(builtin_catalog_dir)
}

/// The shipped object catalog (whisk, hammer, paintbrush, pen, airbrush,
/// paw, butterfly, hook, tentacle_octet, wheel).
pub fn builtin_catalog() -> Result<Catalog, SpecError> {
    Catalog::load_dir(&builtin_catalog_dir())
}
