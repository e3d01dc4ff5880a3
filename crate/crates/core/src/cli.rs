//! `limbswap` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input
//! files, invalid specs, failed runs). Diagnostics go to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::gesture::GestureConfig;
use crate::pose::{read_trace, write_trace, PoseTrace};
use crate::prosthesis::{catalog_dir_from_env, load_spec_file, validate_spec, Catalog, ProsthesisSpec};
use crate::protocol::{serve, ConnectionConfig, ServerConfig};
use crate::scan::{load_ply, scan_to_spec, write_spec_atomically, ScanOptions};
use crate::session::{digest_hex, load_frames, record_frames, run_replay, SessionConfig};
use crate::synth::{synth_trace, GeneratorScript, DEFAULT_RATE_HZ};
use crate::tasks::TaskConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "limbswap", version, about = "Virtual prosthesis engine: replay, simulate and serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a pose trace through a prosthesis and task, writing metrics.
    Simulate {
        /// Pose trace (.poses.jsonl) or generator script (.script.json).
        #[arg(long)]
        trace: PathBuf,
        /// Catalog id or path to a .prosthesis.json file.
        #[arg(long)]
        prosthesis: String,
        /// `ball` or `draw`.
        #[arg(long)]
        task: String,
        #[arg(long)]
        task_config: Option<PathBuf>,
        #[arg(long)]
        gesture_config: Option<PathBuf>,
        /// Metrics output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frame log output (.frames.jsonl).
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Accept live clients.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Prosthesis each new connection starts with.
        #[arg(long, default_value = "whisk")]
        prosthesis: String,
        #[arg(long, default_value = "ball")]
        task: String,
        #[arg(long)]
        gesture_config: Option<PathBuf>,
    },
    /// Check a prosthesis spec file.
    Validate { spec: PathBuf },
    /// Turn a scanned ASCII PLY point cloud into a prosthesis spec.
    IngestScan {
        cloud: PathBuf,
        #[arg(long)]
        id: String,
        /// Voxel edge for the collision spheres, meters.
        #[arg(long, default_value_t = 0.02)]
        voxel: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read a frame log back.
    Replay {
        #[arg(long)]
        frames: PathBuf,
        /// Print only the final state digest.
        #[arg(long)]
        hash: bool,
    },
    /// List catalog prostheses.
    Catalog {
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Render a generator script into a pose trace file.
    Synth {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
    },
}

/// A data error with its message for stderr.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn with_path<T, E: std::fmt::Display>(path: &Path, r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    with_path(path, std::fs::read_to_string(path))
}

fn open_catalog(dir: Option<&Path>) -> Result<Catalog, Failure> {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(catalog_dir_from_env);
    with_path(&dir, Catalog::load_dir(&dir))
}

fn load_gesture_config(path: Option<&Path>) -> Result<GestureConfig, Failure> {
    let Some(path) = path else {
        return Ok(GestureConfig::default());
    };
    let cfg: GestureConfig = with_path(path, serde_json::from_str(&read_text(path)?))?;
    let problems = cfg.problems();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Failure(format!("{}: {}", path.display(), problems.join("; "))))
    }
}

fn load_task_config(task: &str, path: Option<&Path>) -> Result<TaskConfig, Failure> {
    match path {
        None => Ok(TaskConfig::default_for(task)?),
        Some(p) => {
            let doc: serde_json::Value = with_path(p, serde_json::from_str(&read_text(p)?))?;
            with_path(p, TaskConfig::from_json(task, &doc))
        }
    }
}

/// Reads a pose trace, or synthesizes one from a generator script.
pub fn load_trace_or_script(path: &Path) -> Result<PoseTrace, String> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let fail = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    if name.ends_with(".script.json") {
        let text = std::fs::read_to_string(path).map_err(|e| fail(&e))?;
        let script = GeneratorScript::from_json(&text).map_err(|e| fail(&e))?;
        synth_trace(&script, DEFAULT_RATE_HZ).map_err(|e| fail(&e))
    } else {
        let file = File::open(path).map_err(|e| fail(&e))?;
        read_trace(BufReader::new(file), &name).map_err(|e| fail(&e))
    }
}

fn resolve_prosthesis(arg: &str, catalog_dir: Option<&Path>) -> Result<ProsthesisSpec, Failure> {
    let as_path = Path::new(arg);
    if arg.ends_with(".json") || as_path.components().count() > 1 {
        return with_path(as_path, load_spec_file(as_path));
    }
    let catalog = open_catalog(catalog_dir)?;
    catalog
        .get(arg)
        .cloned()
        .ok_or_else(|| Failure(format!("unknown prosthesis `{arg}` (known: {})", catalog.ids().join(", "))))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<File>, Failure> {
    Ok(std::io::BufWriter::new(with_path(path, File::create(path))?))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    trace: &Path,
    prosthesis: &str,
    task: &str,
    task_config: Option<&Path>,
    gesture_config: Option<&Path>,
    out: Option<&Path>,
    frames_out: Option<&Path>,
    catalog: Option<&Path>,
) -> CmdResult {
    let trace = load_trace_or_script(trace).map_err(Failure)?;
    let spec = resolve_prosthesis(prosthesis, catalog)?;
    let mut config = SessionConfig::new(spec.id.clone(), load_task_config(task, task_config)?);
    config.gesture = load_gesture_config(gesture_config)?;
    let output = run_replay(&trace, &config, &spec)?;
    if let Some(path) = frames_out {
        let mut w = create_file(path)?;
        with_path(path, record_frames(&output.frames, &mut w))?;
    }
    let mut doc = serde_json::to_string_pretty(&output.metrics)?;
    doc.push('\n');
    match out {
        Some(path) => with_path(path, std::fs::write(path, doc))?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn run_serve(bind: String, catalog: Option<&Path>, prosthesis: String, task: &str, gesture: Option<&Path>) -> CmdResult {
    let catalog = Arc::new(open_catalog(catalog)?);
    if catalog.get(&prosthesis).is_none() {
        return Err(Failure(format!("unknown prosthesis `{prosthesis}`")));
    }
    let connection = ConnectionConfig {
        default_prosthesis: prosthesis,
        default_task: TaskConfig::default_for(task)?,
        gesture: load_gesture_config(gesture)?,
        ..ConnectionConfig::default()
    };
    let handle = serve(
        ServerConfig {
            bind: bind.clone(),
            connection,
            ..ServerConfig::default()
        },
        catalog,
    )
    .map_err(|e| Failure(format!("cannot bind {bind}: {e}")))?;
    eprintln!("serving on {}", handle.local_addr());
    handle.join();
    Ok(())
}

fn validate(path: &Path) -> CmdResult {
    let spec = with_path(path, load_spec_file(path));
    match spec {
        Ok(spec) => {
            let report = validate_spec(&spec);
            if report.is_valid() {
                println!("valid");
                Ok(())
            } else {
                Err(Failure(format!("{}: {report}", path.display())))
            }
        }
        Err(e) => Err(e),
    }
}

fn ingest(cloud: &Path, id: &str, voxel: f64, out: &Path) -> CmdResult {
    let bytes = with_path(cloud, std::fs::read(cloud))?;
    let label = cloud.display().to_string();
    let points = with_path(cloud, load_ply(&bytes, &label))?;
    let options = ScanOptions {
        voxel,
        ..ScanOptions::default()
    };
    let spec = with_path(cloud, scan_to_spec(&points, id, &options))?;
    write_spec_atomically(&spec, out)?;
    eprintln!(
        "wrote {} ({} proxy spheres from {} points)",
        out.display(),
        spec.geometry.len(),
        points.points.len()
    );
    Ok(())
}

fn replay(frames: &Path, hash_only: bool) -> CmdResult {
    let file = with_path(frames, File::open(frames))?;
    let frames_read = with_path(frames, load_frames(BufReader::new(file)))?;
    let last = frames_read.last();
    let digest = last.map(|f| f.state_digest.clone()).unwrap_or_else(|| digest_hex(0));
    if hash_only {
        println!("{digest}");
    } else {
        println!(
            "frames: {}\nlast tick: {}\nfinal digest: {digest}",
            frames_read.len(),
            last.map(|f| f.tick.to_string()).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

fn list_catalog(dir: Option<&Path>) -> CmdResult {
    let catalog = open_catalog(dir)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for s in catalog.summaries() {
        writeln!(
            out,
            "{:<16} {:<16} {:<11} {}",
            s.id,
            s.display_name,
            if s.is_static { "static" } else { "articulated" },
            s.affordances.join(", ")
        )?;
    }
    Ok(())
}

fn synth(script: &Path, out: &Path, rate: f64) -> CmdResult {
    let text = read_text(script)?;
    let script_doc = with_path(script, GeneratorScript::from_json(&text))?;
    let trace = with_path(script, synth_trace(&script_doc, rate))?;
    let mut w = create_file(out)?;
    with_path(out, write_trace(&trace, &mut w))?;
    with_path(out, w.flush())?;
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate {
            trace,
            prosthesis,
            task,
            task_config,
            gesture_config,
            out,
            frames,
            catalog,
        } => simulate(
            &trace,
            &prosthesis,
            &task,
            task_config.as_deref(),
            gesture_config.as_deref(),
            out.as_deref(),
            frames.as_deref(),
            catalog.as_deref(),
        ),
        Command::Serve {
            bind,
            catalog,
            prosthesis,
            task,
            gesture_config,
        } => run_serve(bind, catalog.as_deref(), prosthesis, &task, gesture_config.as_deref()),
        Command::Validate { spec } => validate(&spec),
        Command::IngestScan { cloud, id, voxel, out } => ingest(&cloud, &id, voxel, &out),
        Command::Replay { frames, hash } => replay(&frames, hash),
        Command::Catalog { catalog } => list_catalog(catalog.as_deref()),
        Command::Synth { script, out, rate } => synth(&script, &out, rate),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            EXIT_DATA
        }
    }
}
