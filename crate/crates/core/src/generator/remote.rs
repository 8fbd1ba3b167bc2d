//! HTTP client for the generator wire protocol.
//!
//! `POST {base}/v1/generate` with a JSON [`WireRequest`]; the reply is a
//! [`WireResponse`]. Images travel as base64 PNGs: depth as 8-bit grayscale
//! (near bright), mask as 8-bit grayscale (255 = regenerate), init and output
//! as 8-bit RGB. `GET {base}/v1/health` answers 200 once the backend is ready.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GenerationParams, GeneratorError, GeneratorRequest, GeneratorResponse, ImageGenerator};
use crate::imaging::{decode_png, encode_png, ColorImage, GrayImage, MaskImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub seed: u64,
    pub strength: f64,
    pub w_depth: f64,
    pub w_inpaint: f64,
    /// Image height; equal to the width except for grid requests.
    pub size: usize,
    /// Present only when the images are wider than tall (grids).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub depth_png_b64: String,
    pub mask_png_b64: String,
    pub init_png_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub rgb_png_b64: String,
    pub generator_id: String,
}

fn protocol(msg: impl std::fmt::Display) -> GeneratorError {
    GeneratorError::Protocol(msg.to_string())
}

fn png_b64(img: impl Into<image::DynamicImage>) -> Result<String, GeneratorError> {
    Ok(B64.encode(encode_png(img).map_err(protocol)?))
}

fn decode_b64_png(field: &str, data: &str) -> Result<image::DynamicImage, GeneratorError> {
    let bytes = B64.decode(data.trim()).map_err(|e| protocol(format!("{field}: invalid base64: {e}")))?;
    decode_png(&bytes).map_err(|e| protocol(format!("{field}: invalid PNG: {e}")))
}

impl WireRequest {
    pub fn encode(req: &GeneratorRequest) -> Result<Self, GeneratorError> {
        let (w, h) = req.dims();
        let p = &req.params;
        Ok(Self {
            prompt: p.prompt.clone(),
            seed: p.seed,
            strength: p.strength,
            w_depth: p.w_depth,
            w_inpaint: p.w_inpaint,
            size: h,
            width: (w != h).then_some(w),
            depth_png_b64: png_b64(req.depth.to_gray8())?,
            mask_png_b64: png_b64(req.inpaint_mask.to_gray8())?,
            init_png_b64: png_b64(req.init_rgb.to_rgb8())?,
        })
    }

    /// Server-side view of the request, with images quantized to 8 bits.
    pub fn decode(&self) -> Result<GeneratorRequest, GeneratorError> {
        let depth = GrayImage::from_gray8(&decode_b64_png("depth_png_b64", &self.depth_png_b64)?.to_luma8());
        let mask = MaskImage::from_gray8(&decode_b64_png("mask_png_b64", &self.mask_png_b64)?.to_luma8());
        let init = ColorImage::from_rgb8(&decode_b64_png("init_png_b64", &self.init_png_b64)?.to_rgb8());
        let expected = (self.width.unwrap_or(self.size), self.size);
        if depth.dims() != expected {
            return Err(protocol(format!("depth is {:?}, size fields say {expected:?}", depth.dims())));
        }
        let req = GeneratorRequest::new(
            GenerationParams {
                prompt: self.prompt.clone(),
                w_depth: self.w_depth,
                w_inpaint: self.w_inpaint,
                strength: self.strength,
                seed: self.seed,
            },
            depth,
            mask,
            init,
        );
        req.validate().map_err(protocol)?;
        Ok(req)
    }
}

impl WireResponse {
    pub fn encode(rgb: &ColorImage, generator_id: &str) -> Result<Self, GeneratorError> {
        Ok(Self { rgb_png_b64: png_b64(rgb.to_rgb8())?, generator_id: generator_id.to_string() })
    }

    pub fn decode_rgb(&self) -> Result<ColorImage, GeneratorError> {
        Ok(ColorImage::from_rgb8(&decode_b64_png("rgb_png_b64", &self.rgb_png_b64)?.to_rgb8()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(120), max_in_flight: 4 }
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), cond: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

pub struct RemoteGenerator {
    base_url: String,
    agent: ureq::Agent,
    config: RemoteConfig,
    slots: Semaphore,
}

impl RemoteGenerator {
    pub fn new(base_url: &str, config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            slots: Semaphore::new(config.max_in_flight),
            config,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// True when `/v1/health` answers 200.
    pub fn health(&self) -> Result<bool, GeneratorError> {
        match self.agent.get(&format!("{}/v1/health", self.base_url)).call() {
            Ok(resp) => Ok(resp.status() == 200),
            Err(ureq::Error::Status(_, _)) => Ok(false),
            Err(e) => Err(self.transport_error(e)),
        }
    }

    fn transport_error(&self, err: ureq::Error) -> GeneratorError {
        match err {
            ureq::Error::Status(code, resp) => {
                let body = resp.into_string().unwrap_or_default();
                GeneratorError::BackendUnavailable(format!("HTTP {code}: {}", body.chars().take(200).collect::<String>()))
            }
            ureq::Error::Transport(t) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("timeout") {
                    GeneratorError::Timeout(self.config.timeout)
                } else {
                    GeneratorError::BackendUnavailable(msg)
                }
            }
        }
    }
}

impl ImageGenerator for RemoteGenerator {
    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn generate(&self, req: &GeneratorRequest) -> Result<GeneratorResponse, GeneratorError> {
        req.validate()?;
        let body = WireRequest::encode(req)?;
        let _permit = self.slots.acquire();
        let start = Instant::now();
        let resp = self
            .agent
            .post(&format!("{}/v1/generate", self.base_url))
            .send_json(&body)
            .map_err(|e| self.transport_error(e))?;
        let text = resp.into_string().map_err(|e| protocol(format!("reading body: {e}")))?;
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| protocol(format!("malformed body: {e}")))?;
        let rgb = wire.decode_rgb()?;
        if rgb.dims() != req.dims() {
            return Err(protocol(format!("response is {:?}, request was {:?}", rgb.dims(), req.dims())));
        }
        Ok(GeneratorResponse { rgb, generator_id: wire.generator_id, elapsed: start.elapsed() })
    }

    fn generate_batch(
        &self,
        reqs: &[GeneratorRequest],
    ) -> Result<Vec<Result<GeneratorResponse, GeneratorError>>, GeneratorError> {
        if reqs.is_empty() {
            return Err(GeneratorError::InvalidBatch);
        }
        // Threads block on the semaphore, so at most `max_in_flight` run at once.
        Ok(std::thread::scope(|s| {
            let handles: Vec<_> = reqs.iter().map(|r| s.spawn(move || self.generate(r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(protocol("request thread panicked"))))
                .collect()
        }))
    }
}
