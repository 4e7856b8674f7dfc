//! RGB and depth inpainting providers.
//!
//! A [`BackendSession`] wraps exactly one implementation: the procedural
//! [`oracle::OracleRoom`] or a [`remote::RemoteClient`]. The session checks
//! inputs, restores unmasked RGB pixels bit-exactly after every call and
//! validates the returned rasters. The camera of the current view travels
//! with each request in a [`ViewRequest`]; remote implementations ignore it.

pub mod oracle;
pub mod protocol;
pub mod remote;

use thiserror::Error;

use crate::geometry::Camera;
use crate::raster::{DepthMap, Mask, RgbImage};

pub use oracle::{OracleConfig, OracleRoom};
pub use remote::{RemoteClient, RemoteConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("invalid response: {0}")]
    InvalidOutput(String),
}

/// Per-view context passed along with every backend call.
#[derive(Clone, Copy, Debug)]
pub struct ViewRequest<'a> {
    pub camera: &'a Camera,
    pub seed: u64,
}

#[derive(Debug)]
pub enum BackendKind {
    Oracle(OracleRoom),
    Remote(RemoteClient),
}

#[derive(Debug)]
pub struct BackendSession {
    kind: BackendKind,
}

impl BackendSession {
    pub fn oracle(config: OracleConfig) -> Result<Self, BackendError> {
        Ok(Self {
            kind: BackendKind::Oracle(OracleRoom::new(config)?),
        })
    }

    pub fn remote(config: RemoteConfig) -> Result<Self, BackendError> {
        Ok(Self {
            kind: BackendKind::Remote(RemoteClient::new(config)?),
        })
    }

    pub fn kind(&self) -> &BackendKind {
        &self.kind
    }

    pub fn kind_mut(&mut self) -> &mut BackendKind {
        &mut self.kind
    }

    pub fn is_remote(&self) -> bool {
        matches!(self.kind, BackendKind::Remote(_))
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BackendKind::Oracle(_) => "oracle",
            BackendKind::Remote(_) => "remote",
        }
    }

    fn check_dims(rgb: &RgbImage, mask: &Mask) -> Result<(), BackendError> {
        if !rgb.same_dims(mask) {
            return Err(BackendError::InvalidInput(format!(
                "image {}x{} vs mask {}x{}",
                rgb.width(),
                rgb.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(())
    }

    /// Fills the masked pixels of `rgb` according to `prompt`.
    pub fn inpaint_rgb(
        &self,
        view: &ViewRequest<'_>,
        rgb: &RgbImage,
        mask: &Mask,
        prompt: &str,
    ) -> Result<RgbImage, BackendError> {
        Self::check_dims(rgb, mask)?;
        if !mask.any() {
            return Ok(rgb.clone());
        }
        let raw = match &self.kind {
            BackendKind::Oracle(room) => {
                log::debug!("oracle inpaint, prompt {prompt:?}");
                room.inpaint_rgb(view.camera, rgb, mask)
            }
            BackendKind::Remote(client) => client.inpaint_rgb(rgb, mask, prompt, view.seed)?,
        };
        if !raw.same_dims(rgb) {
            return Err(BackendError::InvalidOutput(format!(
                "inpainted image is {}x{}, expected {}x{}",
                raw.width(),
                raw.height(),
                rgb.width(),
                rgb.height()
            )));
        }
        let mut out = rgb.clone();
        for (i, &m) in mask.data().iter().enumerate() {
            if m {
                out.data_mut()[i] = raw.data()[i].map(|c| c.clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }

    /// Predicts a full depth raster conditioned on the known depth.
    pub fn inpaint_depth(
        &self,
        view: &ViewRequest<'_>,
        rgb: &RgbImage,
        known_depth: &DepthMap,
        mask: &Mask,
    ) -> Result<DepthMap, BackendError> {
        Self::check_dims(rgb, mask)?;
        if !known_depth.same_dims(mask) {
            return Err(BackendError::InvalidInput("known depth size differs from mask".into()));
        }
        let out = match &self.kind {
            BackendKind::Oracle(room) => room.inpaint_depth(view.camera, known_depth, mask),
            BackendKind::Remote(client) => client.inpaint_depth(rgb, known_depth, mask)?,
        };
        if !out.same_dims(mask) {
            return Err(BackendError::InvalidOutput("depth size differs from request".into()));
        }
        if let Some(i) = out.data().iter().position(|d| !d.is_finite()) {
            return Err(BackendError::InvalidOutput(format!("non-finite depth at pixel {i}")));
        }
        Ok(out)
    }
}
