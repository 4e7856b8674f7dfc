//! Wire types for the remote inpainting service.
//!
//! All bodies are JSON. RGB images and masks travel as base64 PNG; depth
//! grids travel as base64 raw little-endian `f32` in row-major order, with
//! `0.0` marking unknown depth. Every message carries `protocol`, which must
//! equal [`PROTOCOL_VERSION`]. The JSON schema lives in
//! `protocol/schema.json` at the repository root.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::raster::{DepthMap, Raster};

use super::BackendError;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintRequest {
    pub protocol: u32,
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub protocol: u32,
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthGrid {
    pub data: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthRequest {
    pub protocol: u32,
    pub image: String,
    pub known_depth: DepthGrid,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    pub protocol: u32,
    pub depth: DepthGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub protocol: u32,
    pub status: String,
    #[serde(default)]
    pub model_ids: Vec<String>,
}

pub fn check_version(found: u32) -> Result<(), BackendError> {
    if found != PROTOCOL_VERSION {
        return Err(BackendError::Protocol(format!(
            "protocol version {found}, expected {PROTOCOL_VERSION}"
        )));
    }
    Ok(())
}

pub fn encode_b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, BackendError> {
    B64.decode(text)
        .map_err(|e| BackendError::Protocol(format!("base64: {e}")))
}

/// Packs a depth map as f32le; non-finite values become `0.0`.
pub fn encode_depth_grid(depth: &DepthMap) -> DepthGrid {
    let mut bytes = Vec::with_capacity(depth.len() * 4);
    for &d in depth.data() {
        let x = if d.is_finite() { d as f32 } else { 0.0 };
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    DepthGrid {
        data: encode_b64(&bytes),
        width: depth.width(),
        height: depth.height(),
    }
}

pub fn decode_depth_grid(grid: &DepthGrid) -> Result<DepthMap, BackendError> {
    let bytes = decode_b64(&grid.data)?;
    if bytes.len() != grid.width * grid.height * 4 {
        return Err(BackendError::Protocol(format!(
            "depth grid carries {} bytes for {}x{}",
            bytes.len(),
            grid.width,
            grid.height
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Raster::from_vec(grid.width, grid.height, values).map_err(|e| BackendError::Protocol(e.to_string()))
}
