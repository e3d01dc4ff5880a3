//! Scanned point clouds to prosthesis specs.
//!
//! The pipeline fits an oriented box by principal component analysis, holds
//! the object at its near end like a tool handle, and approximates the
//! surface with voxel spheres.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::math::{Quat, Vec3};
use crate::prosthesis::{
    validate_spec, Affordance, AffordanceAction, Anchor, AnchorRole, Attachment, GestureKind, Primitive,
    ProsthesisSpec, SPEC_VERSION,
};
use crate::retarget::Sphere;

/// Floor for the thinnest half extent, so planar scans still produce a valid
/// box.
pub const MIN_HALF_EXTENT: f64 = 1e-6;
/// Relative eigenvalue gap under which two axes count as tied.
const EIGEN_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScanError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("invalid spec produced: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source_label: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, source_label: impl Into<String>) -> Self {
        Self {
            points,
            source_label: source_label.into(),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub centroid: Vec3,
    /// Right-handed, ordered by descending extent.
    pub axes: [Vec3; 3],
    pub half_extents: [f64; 3],
}

/// Parses an ASCII PLY file; only the `x`, `y`, `z` vertex properties are
/// kept. Elements after the vertices (faces and so on) are skipped.
pub fn load_ply(content: &[u8], source_label: &str) -> Result<PointCloud, ScanError> {
    let text = std::str::from_utf8(content).map_err(|_| {
        if content.windows(6).any(|w| w == b"binary") {
            ScanError::UnsupportedFormat("binary PLY is not supported; convert to ASCII".into())
        } else {
            ScanError::Parse {
                line: 0,
                message: "file is not valid UTF-8 text".into(),
            }
        }
    })?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let parse_err = |line: usize, message: String| ScanError::Parse { line, message };

    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing `ply` magic".into())),
    }

    struct Element {
        name: String,
        count: usize,
        properties: Vec<String>,
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(ScanError::UnsupportedFormat(format!(
                    "PLY format `{other}` is not supported; only ascii"
                )))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(n, format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ..] => match elements.last_mut() {
                Some(e) => e.properties.push("<list>".into()),
                None => return Err(parse_err(n, "property before any element".into())),
            },
            ["property", _ty, name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err(parse_err(n, "property before any element".into())),
            },
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(n, format!("unrecognized header line `{line}`"))),
        }
    }
    if !header_done {
        return Err(parse_err(0, "missing end_header".into()));
    }
    if !saw_format {
        return Err(parse_err(0, "missing format line".into()));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(0, "no vertex element".into()))?;
    let v = &elements[vertex_pos];
    let idx = |axis: &str| {
        v.properties
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| parse_err(0, format!("vertex element has no `{axis}` property")))
    };
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);

    let skip: usize = elements[..vertex_pos].iter().map(|e| e.count).sum();
    let mut body = lines.filter(|(_, l)| !l.is_empty()).skip(skip);
    let mut points = Vec::with_capacity(v.count);
    for k in 0..v.count {
        let (n, line) = body.next().ok_or_else(|| {
            parse_err(
                0,
                format!("header declares {} vertices but the file has {k}", v.count),
            )
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < v.properties.len() {
            return Err(parse_err(n, format!("expected {} values", v.properties.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(n, format!("bad number `{}`", fields[i])))
        };
        points.push(Vec3::new(num(ix)?, num(iy)?, num(iz)?));
    }
    Ok(PointCloud::new(points, source_label))
}

/// Writes an ASCII PLY with only vertex positions.
pub fn ply_to_string(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\ncomment {}\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.source_label,
        cloud.points.len()
    );
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

/// Flips `v` so its first clearly non-zero component is positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    let first = v.iter().copied().find(|c| c.abs() > 1e-9).unwrap_or(1.0);
    if first < 0.0 {
        -v
    } else {
        v
    }
}

/// Fits an oriented box by PCA of the point covariance.
pub fn pca_obb(cloud: &PointCloud) -> Result<OrientedBox, ScanError> {
    if cloud.points.iter().any(|p| !crate::math::is_finite3(p)) {
        return Err(ScanError::DegenerateCloud("non-finite point".into()));
    }
    if cloud.points.len() < 3 {
        return Err(ScanError::DegenerateCloud(format!(
            "{} points cannot span a plane",
            cloud.points.len()
        )));
    }
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= cloud.points.len() as f64;

    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned().normalize()))
        .collect();
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if scale <= 0.0 {
        return Err(ScanError::DegenerateCloud("all points coincide".into()));
    }
    let tie = EIGEN_TIE * scale;
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= tie {
            let key = |v: &Vec3| (v.x.abs(), v.y.abs());
            key(&b.1).partial_cmp(&key(&a.1)).unwrap_or(std::cmp::Ordering::Equal)
        } else {
            b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal)
        }
    });
    if pairs[1].0 <= tie {
        return Err(ScanError::DegenerateCloud("points are collinear (rank < 2)".into()));
    }

    let extent = |axis: &Vec3| {
        cloud
            .points
            .iter()
            .map(|p| (p - c).dot(axis).abs())
            .fold(0.0, f64::max)
    };
    let mut axes: Vec<(f64, Vec3)> = pairs
        .iter()
        .take(2)
        .map(|(_, v)| {
            let v = canonical_sign(*v);
            (extent(&v), v)
        })
        .collect();
    // Variance and extent orders can disagree for skewed clouds; extent wins.
    if axes[1].0 > axes[0].0 {
        axes.swap(0, 1);
    }
    let a0 = axes[0].1;
    let mut a1 = axes[1].1;
    let mut a2 = a0.cross(&a1).normalize();
    let mut e2 = extent(&a2);
    let e1 = axes[1].0;
    let mut e1v = e1;
    if e2 > e1 {
        // Keep right-handedness while moving the thicker axis forward.
        std::mem::swap(&mut a1, &mut a2);
        a2 = -a2;
        std::mem::swap(&mut e1v, &mut e2);
    }
    Ok(OrientedBox {
        centroid: c,
        axes: [a0, a1, a2],
        half_extents: [axes[0].0, e1v, e2.max(MIN_HALF_EXTENT)],
    })
}

/// Attachment that holds the object at the near end of its longest axis:
/// that axis maps to wrist +Z, the second axis to +Y.
pub fn derive_attachment(obb: &OrientedBox) -> Attachment {
    let [a0, a1, a2] = obb.axes;
    let m = Matrix3::from_rows(&[(-a2).transpose(), a1.transpose(), a0.transpose()]);
    let rotation = Quat::from_matrix(&m);
    let near_end = obb.centroid - a0 * obb.half_extents[0];
    Attachment {
        translation: -(rotation * near_end),
        rotation,
        scale: 1.0,
    }
}

/// One sphere per occupied voxel, centered on the mean of its points. The
/// radius is the voxel half-diagonal, grown when needed so every member point
/// is inside.
pub fn sphere_proxy(cloud: &PointCloud, voxel: f64) -> Result<Vec<Sphere>, ScanError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(ScanError::BadParameter(format!("voxel must be positive, got {voxel}")));
    }
    let mut cells: BTreeMap<(i64, i64, i64), Vec<Vec3>> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        cells.entry(key).or_default().push(*p);
    }
    let base = voxel * 3f64.sqrt() / 2.0;
    Ok(cells
        .values()
        .map(|members| {
            let center: Vec3 = members.iter().sum::<Vec3>() / members.len() as f64;
            let farthest = members.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
            Sphere {
                center,
                radius: base.max(farthest * (1.0 + 1e-12)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    pub voxel: f64,
    pub display_name: Option<String>,
    pub push_gain: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            voxel: 0.02,
            display_name: None,
            push_gain: 1.0,
        }
    }
}

/// Full scan pipeline. Object-local coordinates are the scan's own; the
/// attachment carries the rigging.
pub fn scan_to_spec(cloud: &PointCloud, id: &str, options: &ScanOptions) -> Result<ProsthesisSpec, ScanError> {
    let obb = pca_obb(cloud)?;
    let attachment = derive_attachment(&obb);
    let spheres = sphere_proxy(cloud, options.voxel)?;
    let [a0, a1, _] = obb.axes;
    let spec = ProsthesisSpec {
        spec_version: SPEC_VERSION,
        id: id.to_string(),
        display_name: options
            .display_name
            .clone()
            .unwrap_or_else(|| format!("Scanned {id}")),
        geometry: spheres
            .into_iter()
            .map(|s| Primitive::Sphere {
                center: s.center,
                radius: s.radius,
                joint: None,
            })
            .collect(),
        mesh_ref: None,
        attachment,
        anchors: vec![
            Anchor {
                name: "tip".into(),
                local_position: obb.centroid + a0 * obb.half_extents[0],
                local_direction: a0,
                role: AnchorRole::Tip,
                joint: None,
            },
            Anchor {
                name: "grip".into(),
                local_position: obb.centroid,
                local_direction: a1,
                role: AnchorRole::Grip,
                joint: None,
            },
        ],
        affordances: vec![Affordance {
            gesture: GestureKind::Swipe,
            action: AffordanceAction::Push {
                impulse_gain: options.push_gain,
            },
        }],
        articulation: vec![],
        motion_smoothing_alpha: 0.0,
    };
    let report = validate_spec(&spec);
    if !report.is_valid() {
        return Err(ScanError::InvalidSpec(report.to_string()));
    }
    Ok(spec)
}

/// Writes `spec` through a sibling temporary file so a failure never leaves
/// a partial spec behind.
pub fn write_spec_atomically(spec: &ProsthesisSpec, path: &Path) -> Result<(), ScanError> {
    let io = |e: std::io::Error| ScanError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| ScanError::BadParameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(spec.to_json_pretty().as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}
