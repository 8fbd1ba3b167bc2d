//! The depth-aware inpainting image generator behind a trait, with hermetic mock
//! backends and an HTTP client for out-of-process models.

mod grid;
mod mock;
mod remote;

use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{ColorImage, GrayImage, MaskImage};

pub use grid::{make_grid, GridLayout, SlotRect};
pub use mock::{MockGenerator, MockKind};
pub use remote::{RemoteConfig, RemoteGenerator, WireRequest, WireResponse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("generator backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("generator request timed out after {0:?}")]
    Timeout(Duration),
    #[error("generator protocol error: {0}")]
    Protocol(String),
    #[error("invalid generator request: {0}")]
    InvalidRequest(String),
    #[error("batch must contain at least one request")]
    InvalidBatch,
    #[error("grid views differ in size: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("unknown generator `{0}` (expected mock:flat, mock:depthshade, mock:checker or http:<url>)")]
    UnknownGenerator(String),
}

/// Scalar conditioning shared by every request of a stage.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationParams {
    /// Prompt including the view clause.
    pub prompt: String,
    /// Depth control weight in `[0, 2]`.
    pub w_depth: f64,
    /// Inpainting control weight in `[0, 2]`.
    pub w_inpaint: f64,
    /// Noise strength in `[0, 1]`; 1 regenerates from scratch.
    pub strength: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorRequest {
    pub params: GenerationParams,
    /// Normalized depth: near is bright, background 0.
    pub depth: GrayImage,
    /// True where the generator must synthesize new content.
    pub inpaint_mask: MaskImage,
    /// Current render; mid-gray where untextured.
    pub init_rgb: ColorImage,
}

impl GeneratorRequest {
    pub fn new(params: GenerationParams, depth: GrayImage, inpaint_mask: MaskImage, init_rgb: ColorImage) -> Self {
        Self { params, depth, inpaint_mask, init_rgb }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let dims = self.depth.dims();
        if self.inpaint_mask.dims() != dims || self.init_rgb.dims() != dims {
            return Err(GeneratorError::InvalidRequest(format!(
                "image sizes differ: depth {dims:?}, mask {:?}, init {:?}",
                self.inpaint_mask.dims(),
                self.init_rgb.dims()
            )));
        }
        if dims.0 == 0 || dims.1 == 0 {
            return Err(GeneratorError::InvalidRequest("empty images".into()));
        }
        let p = &self.params;
        for (name, value, hi) in [("w_depth", p.w_depth, 2.0), ("w_inpaint", p.w_inpaint, 2.0), ("strength", p.strength, 1.0)] {
            if !(0.0..=hi).contains(&value) {
                return Err(GeneratorError::InvalidRequest(format!("{name} = {value} outside [0, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorResponse {
    pub rgb: ColorImage,
    pub generator_id: String,
    pub elapsed: Duration,
}

pub trait ImageGenerator: Send + Sync {
    fn id(&self) -> String;

    fn generate(&self, req: &GeneratorRequest) -> Result<GeneratorResponse, GeneratorError>;

    /// Responses come back in request order with per-item results. The default
    /// runs requests concurrently; results match sequential calls.
    fn generate_batch(
        &self,
        reqs: &[GeneratorRequest],
    ) -> Result<Vec<Result<GeneratorResponse, GeneratorError>>, GeneratorError> {
        if reqs.is_empty() {
            return Err(GeneratorError::InvalidBatch);
        }
        Ok(reqs.par_iter().map(|r| self.generate(r)).collect())
    }
}

/// Parses a generator URI: `mock:flat`, `mock:depthshade`, `mock:checker` or
/// `http:<url>`. A bare `http` or `http:` uses `default_url`.
pub fn from_uri(uri: &str, default_url: &str, remote: RemoteConfig) -> Result<Box<dyn ImageGenerator>, GeneratorError> {
    let uri = uri.trim();
    if let Some(kind) = uri.strip_prefix("mock:") {
        let kind = match kind {
            "flat" => MockKind::Flat,
            "depthshade" => MockKind::DepthShade,
            "checker" => MockKind::Checker,
            _ => return Err(GeneratorError::UnknownGenerator(uri.to_string())),
        };
        return Ok(Box::new(MockGenerator::new(kind)));
    }
    if uri == "http" {
        return Ok(Box::new(RemoteGenerator::new(default_url, remote)));
    }
    if let Some(url) = uri.strip_prefix("http:") {
        let url = url.trim();
        let url = if url.is_empty() { default_url } else { url };
        return Ok(Box::new(RemoteGenerator::new(url, remote)));
    }
    Err(GeneratorError::UnknownGenerator(uri.to_string()))
}
