//! Run configuration, read from TOML.
//!
//! Every section has defaults, so a file only needs the keys it changes;
//! unknown keys are rejected. `configs/default.toml` at the repository root
//! is the serialized [`PipelineConfig::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::OracleConfig;
use crate::depth_align::DepthParams;
use crate::fusion::FusionParams;
use crate::geometry::Intrinsics;
use crate::imaging::MaskCleaningParams;
use crate::planner::{build_generation_schedule, default_trajectories, BackoffParams, CompletionConfig, Trajectory};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            fov_deg: 90.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.fov_deg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene_prompt: String,
    /// Stop at the first failed iteration. When absent: true for the remote
    /// backend, false for the oracle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub halt_on_error: Option<bool>,
    pub camera: CameraConfig,
    pub fusion: FusionParams,
    pub depth: DepthParams,
    pub backoff: BackoffParams,
    pub mask_cleaning: MaskCleaningParams,
    pub completion: CompletionConfig,
    pub oracle: OracleConfig,
    pub trajectories: Vec<Trajectory>,
}

pub const DEFAULT_SCENE_PROMPT: &str = "a cozy living room";

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_prompt: DEFAULT_SCENE_PROMPT.to_string(),
            halt_on_error: None,
            camera: CameraConfig::default(),
            fusion: FusionParams::default(),
            depth: DepthParams::default(),
            backoff: BackoffParams::default(),
            mask_cleaning: MaskCleaningParams::default(),
            completion: CompletionConfig::default(),
            oracle: OracleConfig::default(),
            trajectories: default_trajectories(DEFAULT_SCENE_PROMPT),
        }
    }
}

fn odd(name: &str, k: usize) -> Result<(), ConfigError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(ConfigError::Invalid(format!("{name} must be odd, got {k}")));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.camera
            .intrinsics()
            .validate()
            .map_err(|e| invalid(format!("camera: {e}")))?;
        if !(self.camera.fov_deg > 0.0 && self.camera.fov_deg < 180.0) {
            return Err(invalid(format!(
                "camera.fov_deg {} out of (0, 180)",
                self.camera.fov_deg
            )));
        }
        let f = &self.fusion;
        if !(f.delta_edge > 0.0) {
            return Err(invalid("fusion.delta_edge must be positive".into()));
        }
        if !(0.0..1.0).contains(&f.delta_sn) {
            return Err(invalid("fusion.delta_sn must lie in [0, 1)".into()));
        }
        if !(f.eps_depth >= 0.0) {
            return Err(invalid("fusion.eps_depth must be non-negative".into()));
        }
        let d = &self.depth;
        odd("depth.smoothing_kernel", d.smoothing_kernel)?;
        if !(d.smoothing_sigma > 0.0 && d.min_depth > 0.0 && d.max_depth > d.min_depth) {
            return Err(invalid("depth: need sigma > 0 and 0 < min_depth < max_depth".into()));
        }
        let b = &self.backoff;
        if !(b.step > 0.0 && b.depth_threshold >= 0.0) {
            return Err(invalid("backoff: step must be positive, threshold non-negative".into()));
        }
        let m = &self.mask_cleaning;
        odd("mask_cleaning.erosion_kernel", m.erosion_kernel)?;
        odd("mask_cleaning.dilation_kernel", m.dilation_kernel)?;
        if m.telea_radius == 0 {
            return Err(invalid("mask_cleaning.telea_radius must be positive".into()));
        }
        self.completion
            .validate()
            .map_err(|e| invalid(format!("completion: {e}")))?;
        crate::backends::OracleRoom::new(self.oracle.clone()).map_err(|e| invalid(format!("oracle: {e}")))?;
        if self.trajectories.is_empty() {
            return Err(invalid("at least one trajectory is required".into()));
        }
        build_generation_schedule(&self.trajectories).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn halt_on_error(&self, remote: bool) -> bool {
        self.halt_on_error.unwrap_or(remote)
    }

    /// Completion-stage prompt: the configured override or the scene prompt.
    pub fn completion_prompt(&self) -> &str {
        self.completion.prompt.as_deref().unwrap_or(&self.scene_prompt)
    }
}
