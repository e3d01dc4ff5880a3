#![allow(dead_code)]

pub mod criteria;
pub mod gen;

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use limbswap_core::math::{Quat, Vec3};
use limbswap_core::pose::{hand_at, read_trace, HandPoseFrame, PoseTrace};
use limbswap_core::prosthesis::{builtin_catalog, Catalog};
use limbswap_core::retarget::RigidTransform;
use limbswap_core::tasks::TaskConfig;
use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SHIPPED_TRACES: [&str; 4] = ["reach_and_swipe", "pen_stroke", "airbrush_sweep", "hold_still"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn trace_path(name: &str) -> PathBuf {
    data_dir().join("traces").join(format!("{name}.poses.jsonl"))
}

pub fn shipped_trace(name: &str) -> PoseTrace {
    let path = trace_path(name);
    let file = File::open(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    read_trace(BufReader::new(file), name).expect("shipped trace parses")
}

pub fn task_config_path(task: &str) -> PathBuf {
    data_dir().join("tasks").join(format!("{task}.task.json"))
}

pub fn shipped_task(task: &str) -> TaskConfig {
    let text = std::fs::read_to_string(task_config_path(task)).expect("task config readable");
    let doc: serde_json::Value = serde_json::from_str(&text).expect("task config is JSON");
    TaskConfig::from_json(task, &doc).expect("task config valid")
}

pub fn catalog() -> Catalog {
    builtin_catalog().expect("builtin catalog loads")
}

pub fn random_rotation(rng: &mut impl Rng) -> Quat {
    // Uniform in the unit 4-ball, normalized: uniform over rotations.
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return UnitQuaternion::new_normalize(q);
        }
    }
}

pub fn random_vec(rng: &mut impl Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-half..half),
        rng.gen_range(-half..half),
        rng.gen_range(-half..half),
    )
}

pub fn random_rigid(rng: &mut impl Rng) -> RigidTransform {
    RigidTransform::new(random_vec(rng, 1.0), random_rotation(rng))
}

/// A valid hand pose anywhere in a 1 m cube with random grip strengths.
pub fn random_pose(rng: &mut impl Rng) -> HandPoseFrame {
    hand_at(
        rng.gen_range(0.0..10.0),
        random_vec(rng, 0.5),
        random_rotation(rng),
        rng.gen_range(0.0..=1.0),
        rng.gen_range(0.0..=1.0),
    )
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
