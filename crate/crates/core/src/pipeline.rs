//! The two-stage scene generation loop.
//!
//! Generation walks the pose schedule: back off, render, inpaint color,
//! predict and align depth, fuse. Completion then samples poses that see
//! holes, cleans their masks, deletes the faces around large holes and
//! regenerates them. Each iteration either commits completely or leaves the
//! mesh untouched.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{BackendError, BackendSession, ViewRequest};
use crate::config::PipelineConfig;
use crate::depth_align::{predict_and_align, AlignError, DisparityAlignment};
use crate::exec::{self, Execution};
use crate::fusion::{filtered_patch, fuse_into, remove_faces_in_region, FusionError};
use crate::geometry::{Camera, TriangleMesh};
use crate::imaging::{clean_inpaint_mask, mask_stats, ImagingError};
use crate::mesh_io::{save_mesh, MeshIoError};
use crate::planner::{backoff_camera, sample_completion_poses, Backoff, ScheduleEntry};
use crate::raster::{encode_depth_png16, encode_mask_png, encode_rgb_png, save_png, FrameBundle, RasterError, NO_HIT};
use crate::rasterizer::render_with;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Align(AlignError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    MeshIo(#[from] MeshIoError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Raster(#[from] RasterError),
    #[error("iteration {iteration} failed: {source}")]
    Halted {
        iteration: usize,
        source: Box<PipelineError>,
    },
}

impl From<AlignError> for PipelineError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Backend(b) => PipelineError::Backend(b),
            other => PipelineError::Align(other),
        }
    }
}

impl PipelineError {
    /// The innermost error, looking through [`PipelineError::Halted`].
    pub fn root(&self) -> &PipelineError {
        match self {
            PipelineError::Halted { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generation,
    Completion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Fused,
    /// Nothing unobserved in view.
    NothingToDo,
    /// Backoff found no acceptable position.
    Rejected,
    Failed,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    pub eye: [f64; 3],
    pub forward: [f64; 3],
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backoff_steps: Option<usize>,
    pub unobserved: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub alignment_fallback: bool,
    pub faces_added: usize,
    pub faces_removed: usize,
    pub vertices: usize,
    pub faces: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneState {
    pub mesh: TriangleMesh,
    pub records: Vec<IterationRecord>,
}

impl SceneState {
    pub fn new(mesh: TriangleMesh) -> Self {
        Self {
            mesh,
            records: Vec::new(),
        }
    }

    /// Alignment of the most recent view that could be fit on its own;
    /// identity before any such view.
    pub fn alignment_prior(&self) -> DisparityAlignment {
        self.records
            .iter()
            .rev()
            .filter(|r| !r.alignment_fallback && r.error.is_none())
            .find_map(|r| {
                Some(DisparityAlignment {
                    gamma: r.gamma?,
                    beta: r.beta?,
                })
            })
            .unwrap_or(DisparityAlignment::IDENTITY)
    }

    fn next_iteration(&self) -> usize {
        self.records.len()
    }
}

/// Execution knobs that do not affect the produced geometry.
#[derive(Debug)]
pub struct RunOptions {
    pub exec: Execution,
    /// Stop at the first failed iteration instead of skipping it.
    pub halt_on_error: bool,
    /// Per-iteration PNG dumps go here when set.
    pub snapshot_dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
}

impl RunOptions {
    pub fn new(halt_on_error: bool) -> Self {
        Self {
            exec: Execution::default(),
            halt_on_error,
            snapshot_dir: None,
            log: None,
        }
    }

    /// Appends one JSON line per iteration to `path`.
    pub fn with_log_file(mut self, path: &Path) -> Result<Self, PipelineError> {
        self.log = Some(BufWriter::new(File::create(path)?));
        Ok(self)
    }

    pub fn with_snapshots(mut self, dir: PathBuf) -> Self {
        self.snapshot_dir = Some(dir);
        self
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn emit(&mut self, state: &mut SceneState, record: IterationRecord) -> Result<(), PipelineError> {
        match record.outcome {
            Outcome::Failed => log::warn!(
                "iteration {} failed: {}",
                record.iteration,
                record.error.as_deref().unwrap_or("")
            ),
            Outcome::Rejected => log::info!("iteration {}: pose rejected by backoff", record.iteration),
            _ => log::debug!(
                "iteration {}: {:?}, +{} -{} faces, {} total",
                record.iteration,
                record.outcome,
                record.faces_added,
                record.faces_removed,
                record.faces
            ),
        }
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut *log, &record).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        state.records.push(record);
        Ok(())
    }

    fn snapshot(
        &self,
        iteration: usize,
        frame: &FrameBundle,
        inpainted: Option<&crate::raster::RgbImage>,
        depth: Option<&crate::raster::DepthMap>,
    ) -> Result<(), PipelineError> {
        let Some(root) = &self.snapshot_dir else {
            return Ok(());
        };
        let dir = root.join(format!("{iteration:04}"));
        std::fs::create_dir_all(&dir)?;
        save_png(&dir.join("render.png"), &encode_rgb_png(&frame.rgb)?)?;
        save_png(&dir.join("mask.png"), &encode_mask_png(&frame.mask)?)?;
        if let Some(rgb) = inpainted {
            save_png(&dir.join("inpainted.png"), &encode_rgb_png(rgb)?)?;
        }
        if let Some(d) = depth {
            save_png(&dir.join("depth.png"), &encode_depth_png16(d)?)?;
        }
        Ok(())
    }
}

fn view_seed(config: &PipelineConfig, iteration: usize) -> u64 {
    config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(iteration as u64)
}

fn base_record(iteration: usize, stage: Stage, camera: &Camera, prompt: &str, mesh: &TriangleMesh) -> IterationRecord {
    let (c, f) = (camera.center(), camera.forward());
    IterationRecord {
        iteration,
        stage,
        outcome: Outcome::NothingToDo,
        trajectory: None,
        frame: None,
        round: None,
        eye: [c.x, c.y, c.z],
        forward: [f.x, f.y, f.z],
        prompt: prompt.to_string(),
        backoff_steps: None,
        unobserved: 0,
        gamma: None,
        beta: None,
        alignment_fallback: false,
        faces_added: 0,
        faces_removed: 0,
        vertices: mesh.vertex_count(),
        faces: mesh.face_count(),
        error: None,
    }
}

/// Inpaints and fuses the unobserved pixels of `frame` into `mesh`.
/// `mesh` is modified only on success.
#[allow(clippy::too_many_arguments)]
fn generate_view(
    mesh: &mut TriangleMesh,
    camera: &Camera,
    frame: &FrameBundle,
    prompt: &str,
    seed: u64,
    backend: &BackendSession,
    config: &PipelineConfig,
    options: &RunOptions,
    prior: DisparityAlignment,
    record: &mut IterationRecord,
) -> Result<(), PipelineError> {
    let view = ViewRequest { camera, seed };
    let rgb = backend.inpaint_rgb(&view, &frame.rgb, &frame.mask, prompt)?;
    let aligned = predict_and_align(backend, &view, frame, &rgb, &config.depth, prior)?;
    record.gamma = Some(aligned.alignment.gamma);
    record.beta = Some(aligned.alignment.beta);
    record.alignment_fallback = aligned.fallback;
    options.snapshot(record.iteration, frame, Some(&rgb), Some(&aligned.depth))?;
    let stats = fuse_into(mesh, camera, frame, &rgb, &aligned.depth, &frame.mask, &config.fusion)?;
    record.faces_added = stats.faces_added;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageSummary {
    pub fused: usize,
    pub rejected: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl StageSummary {
    fn count(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Fused => self.fused += 1,
            Outcome::Rejected => self.rejected += 1,
            Outcome::Failed => self.failed += 1,
            Outcome::NothingToDo => self.skipped += 1,
        }
    }
}

/// Fails the stage on `err` when halting, otherwise records it and goes on.
fn handle_failure(
    err: PipelineError,
    mut record: IterationRecord,
    state: &mut SceneState,
    options: &mut RunOptions,
) -> Result<(), PipelineError> {
    record.outcome = Outcome::Failed;
    record.error = Some(err.to_string());
    record.faces_added = 0;
    record.faces_removed = 0;
    record.vertices = state.mesh.vertex_count();
    record.faces = state.mesh.face_count();
    let iteration = record.iteration;
    options.emit(state, record)?;
    if options.halt_on_error {
        return Err(PipelineError::Halted {
            iteration,
            source: Box::new(err),
        });
    }
    Ok(())
}

pub fn run_generation_stage(
    state: &mut SceneState,
    schedule: &[ScheduleEntry],
    backend: &BackendSession,
    config: &PipelineConfig,
    options: &mut RunOptions,
) -> Result<StageSummary, PipelineError> {
    let intrinsics = config.camera.intrinsics();
    let mut summary = StageSummary::default();
    for entry in schedule {
        let iteration = state.next_iteration();
        let camera = Camera {
            intrinsics,
            pose: entry.pose.clone(),
        };
        let backoff = backoff_camera(&state.mesh, &camera, &config.backoff, options.exec);
        let (camera, steps, frame) = match backoff {
            Backoff::Accepted { camera, steps, frame } => (camera, Some(steps), frame),
            Backoff::Rejected => (camera, None, FrameBundle::unobserved(0, 0)),
        };
        let mut record = base_record(iteration, Stage::Generation, &camera, &entry.prompt, &state.mesh);
        record.trajectory = Some(entry.trajectory);
        record.frame = Some(entry.frame);
        record.backoff_steps = steps;
        if steps.is_none() {
            record.outcome = Outcome::Rejected;
        } else {
            record.unobserved = frame.mask.count_ones();
            if record.unobserved > 0 {
                let seed = view_seed(config, iteration);
                let prior = state.alignment_prior();
                let mut mesh = std::mem::take(&mut state.mesh);
                let result = generate_view(
                    &mut mesh,
                    &camera,
                    &frame,
                    &entry.prompt,
                    seed,
                    backend,
                    config,
                    options,
                    prior,
                    &mut record,
                );
                state.mesh = mesh;
                if let Err(e) = result {
                    summary.count(Outcome::Failed);
                    handle_failure(e, record, state, options)?;
                    continue;
                }
                record.outcome = Outcome::Fused;
            }
        }
        record.vertices = state.mesh.vertex_count();
        record.faces = state.mesh.face_count();
        summary.count(record.outcome);
        options.emit(state, record)?;
    }
    Ok(summary)
}

/// Cleans the mask, regenerates the dilated holes and replaces the old
/// faces there with the new patch. Works on a copy of the mesh, returned only
/// on success.
///
/// Old faces are removed only where the filtered patch actually covers the
/// dilated region, so a view that cannot produce acceptable triangles (too
/// far away or too oblique) never opens new holes.
#[allow(clippy::too_many_arguments)]
fn complete_view(
    mesh: &TriangleMesh,
    camera: &Camera,
    prompt: &str,
    seed: u64,
    backend: &BackendSession,
    config: &PipelineConfig,
    options: &RunOptions,
    prior: DisparityAlignment,
    record: &mut IterationRecord,
) -> Result<Option<TriangleMesh>, PipelineError> {
    let before = render_with(mesh, camera, options.exec).frame;
    record.unobserved = before.mask.count_ones();
    if record.unobserved == 0 {
        return Ok(None);
    }
    let cleaned = clean_inpaint_mask(&before, &config.mask_cleaning)?;
    let fuse_mask = before.mask.or(&cleaned.dilated);
    let mut frame = FrameBundle {
        rgb: before.rgb.clone(),
        depth: before.depth.clone(),
        mask: fuse_mask,
    };
    for (i, &m) in frame.mask.data().iter().enumerate() {
        if m {
            frame.depth.data_mut()[i] = NO_HIT;
        }
        if cleaned.small_holes.data()[i] {
            frame.rgb.data_mut()[i] = cleaned.rgb.data()[i];
        }
    }
    let view = ViewRequest { camera, seed };
    let generate = frame.mask.and_not(&cleaned.small_holes);
    let rgb = backend.inpaint_rgb(&view, &frame.rgb, &generate, prompt)?;
    let aligned = predict_and_align(backend, &view, &frame, &rgb, &config.depth, prior)?;
    record.gamma = Some(aligned.alignment.gamma);
    record.beta = Some(aligned.alignment.beta);
    record.alignment_fallback = aligned.fallback;
    options.snapshot(record.iteration, &frame, Some(&rgb), Some(&aligned.depth))?;
    let (patch, stats) = filtered_patch(camera, &before.depth, &rgb, &aligned.depth, &frame.mask, &config.fusion)?;
    let covered = render_with(&patch, camera, options.exec).frame.mask.not();
    let region = cleaned.dilated.and(&covered);
    let mut work = mesh.clone();
    record.faces_removed = remove_faces_in_region(&mut work, camera, &region, &before.depth, config.fusion.eps_depth);
    work.append(patch);
    record.faces_added = stats.faces_added;
    Ok(Some(work))
}

pub fn run_completion_stage(
    state: &mut SceneState,
    backend: &BackendSession,
    config: &PipelineConfig,
    options: &mut RunOptions,
) -> Result<StageSummary, PipelineError> {
    let intrinsics = config.camera.intrinsics();
    let prompt = config.completion_prompt().to_string();
    let mut summary = StageSummary::default();
    for round in 0..config.completion.rounds {
        let seed = config.seed.wrapping_add(0x5EED_0000 + round as u64);
        let poses = sample_completion_poses(&state.mesh, &config.completion, &intrinsics, seed, options.exec);
        log::info!("completion round {round}: {} poses", poses.len());
        if poses.is_empty() {
            break;
        }
        for pose in poses {
            let iteration = state.next_iteration();
            let mut record = base_record(iteration, Stage::Completion, &pose.camera, &prompt, &state.mesh);
            record.round = Some(round);
            let seed = view_seed(config, iteration);
            match complete_view(
                &state.mesh,
                &pose.camera,
                &prompt,
                seed,
                backend,
                config,
                options,
                state.alignment_prior(),
                &mut record,
            ) {
                Ok(Some(mesh)) => {
                    state.mesh = mesh;
                    record.outcome = Outcome::Fused;
                }
                Ok(None) => record.outcome = Outcome::NothingToDo,
                Err(e) => {
                    summary.count(Outcome::Failed);
                    handle_failure(e, record, state, options)?;
                    continue;
                }
            }
            record.vertices = state.mesh.vertex_count();
            record.faces = state.mesh.face_count();
            summary.count(record.outcome);
            options.emit(state, record)?;
        }
    }
    Ok(summary)
}

/// Mean unobserved fraction over `cameras`.
pub fn unobserved_fraction(mesh: &TriangleMesh, cameras: &[Camera], exec: Execution) -> f64 {
    if cameras.is_empty() {
        return 0.0;
    }
    let fractions = exec::map_slice(exec, cameras, |c| {
        mask_stats(&render_with(mesh, c, Execution::Sequential).frame).unobserved_fraction()
    });
    fractions.iter().sum::<f64>() / cameras.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportArtifacts {
    pub mesh: PathBuf,
    /// Output of the external reconstruction command, when it ran.
    pub reconstruction: Option<PathBuf>,
}

/// Splits a command template on whitespace and substitutes `{input}` and
/// `{output}` in each argument.
fn expand_command(template: &str, input: &Path, output: &Path) -> Vec<String> {
    template
        .split_whitespace()
        .map(|arg| {
            arg.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
        })
        .collect()
}

/// Writes the mesh (format from the extension of `path`) and optionally runs
/// an external surface reconstruction command on it. A missing or failing
/// tool is logged and otherwise ignored.
pub fn finalize_and_export(
    state: &SceneState,
    path: &Path,
    reconstruction_cmd: Option<&str>,
) -> Result<ExportArtifacts, PipelineError> {
    state.mesh.validate().map_err(MeshIoError::Invalid)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_mesh(&state.mesh, path)?;
    let mut artifacts = ExportArtifacts {
        mesh: path.to_path_buf(),
        reconstruction: None,
    };
    let Some(template) = reconstruction_cmd else {
        return Ok(artifacts);
    };
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    let output = path.with_file_name(format!("{stem}_poisson.ply"));
    let argv = expand_command(template, path, &output);
    let Some((program, args)) = argv.split_first() else {
        log::warn!("empty reconstruction command; skipping");
        return Ok(artifacts);
    };
    match Command::new(program).args(args).status() {
        Ok(status) if status.success() && output.exists() => artifacts.reconstruction = Some(output),
        Ok(status) if status.success() => {
            log::warn!("reconstruction command produced no {}", output.display())
        }
        Ok(status) => log::warn!("reconstruction command exited with {status}"),
        Err(e) => log::warn!("could not run reconstruction command {program:?}: {e}"),
    }
    Ok(artifacts)
}
