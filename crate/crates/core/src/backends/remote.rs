//! HTTP client for a remote inpainting service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::raster::{decode_rgb_png, encode_mask_png, encode_rgb_png, DepthMap, Mask, RgbImage};

use super::protocol::{self, *};
use super::BackendError;

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8765`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first failed one.
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(120),
            retries: 2,
        }
    }
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("config", &self.config).finish()
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.timeout.is_zero() {
            return Err(BackendError::InvalidInput("timeout must be positive".into()));
        }
        if !config.endpoint.starts_with("http://") {
            return Err(BackendError::InvalidInput(format!(
                "endpoint {:?} must be an http:// URL",
                config.endpoint
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, Attempt>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.config.retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("remote call failed (attempt {}): {e}", attempt + 1);
                    std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                    attempt += 1;
                }
            }
        }
    }

    fn classify(err: ureq::Error) -> Attempt {
        match err {
            ureq::Error::Timeout(t) => Attempt::Retry(BackendError::Timeout(t.to_string())),
            ureq::Error::Json(e) => Attempt::Fatal(BackendError::Protocol(e.to_string())),
            other => Attempt::Retry(BackendError::Transport(other.to_string())),
        }
    }

    fn read<R: DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> Result<R, Attempt> {
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let err = BackendError::Status { code: status, body };
            return Err(if status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| Attempt::Fatal(BackendError::Protocol(e.to_string())))
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = self.url(path);
        self.with_retries(|| {
            let resp = self.agent.post(&url).send_json(body).map_err(Self::classify)?;
            Self::read(resp)
        })
    }

    pub fn health(&self) -> Result<HealthResponse, BackendError> {
        let url = self.url("/health");
        let health: HealthResponse = self.with_retries(|| {
            let resp = self.agent.get(&url).call().map_err(Self::classify)?;
            Self::read(resp)
        })?;
        protocol::check_version(health.protocol)?;
        Ok(health)
    }

    pub fn inpaint_rgb(&self, rgb: &RgbImage, mask: &Mask, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        let request = InpaintRequest {
            protocol: PROTOCOL_VERSION,
            image: encode_b64(&encode_rgb_png(rgb).map_err(codec)?),
            mask: encode_b64(&encode_mask_png(mask).map_err(codec)?),
            prompt: prompt.to_string(),
            seed,
        };
        let response: InpaintResponse = self.post("/inpaint", &request)?;
        protocol::check_version(response.protocol)?;
        decode_rgb_png(&decode_b64(&response.image)?).map_err(codec)
    }

    pub fn inpaint_depth(&self, rgb: &RgbImage, known_depth: &DepthMap, mask: &Mask) -> Result<DepthMap, BackendError> {
        let request = DepthRequest {
            protocol: PROTOCOL_VERSION,
            image: encode_b64(&encode_rgb_png(rgb).map_err(codec)?),
            known_depth: encode_depth_grid(known_depth),
            mask: encode_b64(&encode_mask_png(mask).map_err(codec)?),
        };
        let response: DepthResponse = self.post("/depth", &request)?;
        protocol::check_version(response.protocol)?;
        decode_depth_grid(&response.depth)
    }
}

fn codec(e: crate::raster::RasterError) -> BackendError {
    BackendError::Protocol(e.to_string())
}
