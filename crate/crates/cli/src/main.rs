//! `roomweave` command-line driver.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration error, 4 backend
//! error, 5 I/O error, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use roomweave::backends::{BackendError, BackendSession, RemoteConfig};
use roomweave::config::{ConfigError, PipelineConfig};
use roomweave::geometry::{Camera, Vec3};
use roomweave::mesh_io::{load_mesh, MeshIoError};
use roomweave::pipeline::{
    finalize_and_export, run_completion_stage, run_generation_stage, PipelineError, RunOptions, SceneState,
};
use roomweave::planner::{build_generation_schedule, pose_from_6dof};
use roomweave::raster::{encode_depth_png16, encode_rgb_png, save_png, RasterError};
use roomweave::rasterizer::render;

#[derive(Parser)]
#[command(name = "roomweave", version, about = "Grow a textured room mesh view by view")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the generation stage and, unless skipped, the completion stage.
    Generate(GenerateArgs),
    /// Run only the completion stage on an existing mesh.
    Complete(CompleteArgs),
    /// Render a mesh from one pose to PNG.
    Render(RenderArgs),
    /// Print the built-in configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Oracle,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MeshFormatChoice {
    Ply,
    Obj,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendChoice,
    /// Base URL of the remote inpainting service.
    #[arg(long, default_value = "http://127.0.0.1:8765")]
    endpoint: String,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    /// Remote retries after a failed attempt.
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dump per-iteration PNGs under <out>/snapshots.
    #[arg(long)]
    snapshots: bool,
    /// External surface reconstruction command; `{input}` and `{output}`
    /// are replaced by the exported and the reconstructed mesh paths.
    #[arg(long)]
    poisson_cmd: Option<String>,
    #[arg(long, value_enum, default_value = "ply")]
    format: MeshFormatChoice,
    /// Overrides halt-on-error (default: halt for remote, continue for oracle).
    #[arg(long)]
    halt_on_error: Option<bool>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    skip_completion: bool,
}

#[derive(Args)]
struct CompleteArgs {
    /// Mesh to complete (PLY or OBJ).
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Camera as `x,y,z,yaw,pitch,roll` (angles in degrees, yaw 0 looks
    /// along +z, positive pitch looks up).
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    /// Color PNG to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional 16-bit depth PNG (millimeters).
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Configuration supplying the camera intrinsics.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<MeshIoError> for CliError {
    fn from(e: MeshIoError) -> Self {
        match e {
            MeshIoError::UnknownFormat(_) => CliError::Config(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e.root() {
            PipelineError::Backend(_) => CliError::Backend(message),
            PipelineError::MeshIo(_) | PipelineError::Io(_) | PipelineError::Raster(_) => CliError::Io(message),
            _ => CliError::Other(message),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn open_backend(args: &RunArgs, config: &PipelineConfig) -> Result<BackendSession, CliError> {
    match args.backend {
        BackendChoice::Oracle => Ok(BackendSession::oracle(config.oracle.clone())?),
        BackendChoice::Remote => {
            if !(args.timeout > 0.0 && args.timeout.is_finite()) {
                return Err(CliError::Config(format!("timeout {} must be positive", args.timeout)));
            }
            let session = BackendSession::remote(RemoteConfig {
                endpoint: args.endpoint.clone(),
                timeout: Duration::from_secs_f64(args.timeout),
                retries: args.retries,
            })
            .map_err(|e| match e {
                BackendError::InvalidInput(m) => CliError::Config(m),
                other => other.into(),
            })?;
            if let roomweave::backends::BackendKind::Remote(client) = session.kind() {
                let health = client.health()?;
                log::info!(
                    "remote backend {}: {} {:?}",
                    args.endpoint,
                    health.status,
                    health.model_ids
                );
            }
            Ok(session)
        }
    }
}

/// Shared driver for `generate` and `complete`.
fn run(args: &RunArgs, initial: SceneState, generate: bool, complete: bool) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(h) = args.halt_on_error {
        config.halt_on_error = Some(h);
    }
    let backend = open_backend(args, &config)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_toml_string())?;
    let mut options =
        RunOptions::new(config.halt_on_error(backend.is_remote())).with_log_file(&args.out.join("run.jsonl"))?;
    if args.snapshots {
        options = options.with_snapshots(args.out.join("snapshots"));
    }
    let mut state = initial;
    if generate {
        let schedule = build_generation_schedule(&config.trajectories).map_err(|e| CliError::Config(e.to_string()))?;
        let s = run_generation_stage(&mut state, &schedule, &backend, &config, &mut options)?;
        log::info!(
            "generation: {} fused, {} rejected, {} failed, {} faces",
            s.fused,
            s.rejected,
            s.failed,
            state.mesh.face_count()
        );
    }
    if complete {
        let s = run_completion_stage(&mut state, &backend, &config, &mut options)?;
        log::info!(
            "completion: {} fused, {} failed, {} faces",
            s.fused,
            s.failed,
            state.mesh.face_count()
        );
    }
    let ext = match args.format {
        MeshFormatChoice::Ply => "ply",
        MeshFormatChoice::Obj => "obj",
    };
    let artifacts = finalize_and_export(
        &state,
        &args.out.join(format!("scene.{ext}")),
        args.poisson_cmd.as_deref(),
    )?;
    println!("{}", artifacts.mesh.display());
    if let Some(r) = artifacts.reconstruction {
        println!("{}", r.display());
    }
    Ok(())
}

fn parse_pose(text: &str) -> Result<[f64; 6], CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("pose {text:?}: {e}")))?;
    <[f64; 6]>::try_from(values).map_err(|v| CliError::Config(format!("pose needs 6 values, got {}", v.len())))
}

fn render_command(args: &RenderArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    let mesh = load_mesh(&args.mesh)?;
    let [x, y, z, yaw, pitch, roll] = parse_pose(&args.pose)?;
    let pose = pose_from_6dof(Vec3::new(x, y, z), yaw, pitch, roll).map_err(|e| CliError::Config(e.to_string()))?;
    let camera = Camera::new(config.camera.intrinsics(), pose).map_err(|e| CliError::Config(e.to_string()))?;
    let frame = render(&mesh, &camera);
    save_png(&args.out, &encode_rgb_png(&frame.rgb)?)?;
    if let Some(path) = &args.depth_out {
        save_png(path, &encode_depth_png16(&frame.depth)?)?;
    }
    log::info!("{} of {} pixels unobserved", frame.mask.count_ones(), frame.mask.len());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => run(&a.run, SceneState::default(), true, !a.skip_completion),
        Command::Complete(a) => {
            let mesh = load_mesh(&a.mesh)?;
            run(&a.run, SceneState::new(mesh), false, true)
        }
        Command::Render(a) => render_command(&a),
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
