use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeneratorError, GeneratorRequest, GeneratorResponse, ImageGenerator};
use crate::imaging::ColorImage;

/// Content produced by a [`MockGenerator`] over foreground (depth > 0) pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MockKind {
    /// One color whose hue is hashed from the subject prompt (view clause ignored).
    Flat,
    /// Normalized depth replicated to three channels.
    DepthShade,
    /// Image-space checkerboard whose colors and phase derive from the seed.
    Checker,
}

/// Deterministic stand-in for a diffusion backend.
///
/// The mock content is blended with the init image by `1 - strength`, and in
/// keep regions (`inpaint_mask` false) the result is pulled toward the init by
/// `min(w_inpaint, 1)`, so `w_inpaint >= 1` reproduces the init exactly there.
#[derive(Clone, Debug)]
pub struct MockGenerator {
    kind: MockKind,
}

impl MockGenerator {
    pub fn new(kind: MockKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> MockKind {
        self.kind
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// The prompt without a trailing `", ... view"` clause.
fn subject(prompt: &str) -> &str {
    match prompt.rfind(", ") {
        Some(cut) if prompt.ends_with(" view") => &prompt[..cut],
        _ => prompt,
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl MockGenerator {
    fn content(&self, req: &GeneratorRequest) -> ColorImage {
        let (w, h) = req.dims();
        let depth = &req.depth;
        match self.kind {
            MockKind::Flat => {
                let hue = (fnv1a(subject(&req.params.prompt).as_bytes()) % 3600) as f64 / 3600.0;
                let color = hsv_to_rgb(hue, 0.6, 0.85);
                ColorImage::from_fn(w, h, |x, y| if *depth.get(x, y) > 0.0 { color } else { [0.0; 3] })
            }
            MockKind::DepthShade => ColorImage::from_fn(w, h, |x, y| [*depth.get(x, y); 3]),
            MockKind::Checker => {
                let mut rng = ChaCha8Rng::seed_from_u64(req.params.seed);
                let a: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
                let b: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
                let cell = (h / 16).max(1);
                let (ox, oy) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
                ColorImage::from_fn(w, h, |x, y| {
                    if *depth.get(x, y) <= 0.0 {
                        [0.0; 3]
                    } else if ((x + ox) / cell + (y + oy) / cell) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                })
            }
        }
    }
}

impl ImageGenerator for MockGenerator {
    fn id(&self) -> String {
        match self.kind {
            MockKind::Flat => "mock:flat",
            MockKind::DepthShade => "mock:depthshade",
            MockKind::Checker => "mock:checker",
        }
        .to_string()
    }

    fn generate(&self, req: &GeneratorRequest) -> Result<GeneratorResponse, GeneratorError> {
        req.validate()?;
        let start = Instant::now();
        let content = self.content(req);
        let s = req.params.strength;
        let keep = req.params.w_inpaint.min(1.0);
        let (w, h) = req.dims();
        let rgb = ColorImage::from_fn(w, h, |x, y| {
            let init = *req.init_rgb.get(x, y);
            let new = *content.get(x, y);
            let mut out = [0.0; 3];
            for c in 0..3 {
                let generated = s * new[c] + (1.0 - s) * init[c];
                out[c] = if *req.inpaint_mask.get(x, y) { generated } else { keep * init[c] + (1.0 - keep) * generated };
            }
            out
        });
        Ok(GeneratorResponse { rgb, generator_id: self.id(), elapsed: start.elapsed() })
    }
}
