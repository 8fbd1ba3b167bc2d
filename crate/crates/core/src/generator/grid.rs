use serde::{Deserialize, Serialize};

use super::{GenerationParams, GeneratorError, GeneratorRequest};
use crate::imaging::{ColorImage, GrayImage, Image, MaskImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Where each view sits inside a grid image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub slots: Vec<SlotRect>,
}

impl GridLayout {
    /// Cuts a grid-shaped image back into per-view images.
    pub fn split<T: Clone>(&self, grid: &Image<T>) -> Vec<Image<T>> {
        self.slots.iter().map(|s| grid.crop(s.x, s.y, s.width, s.height)).collect()
    }
}

fn concat<T: Clone>(views: &[Image<T>], fill: T) -> Image<T> {
    let (w, h) = views[0].dims();
    let mut out = Image::filled(w * views.len(), h, fill);
    for (k, v) in views.iter().enumerate() {
        out.paste(v, k * w, 0);
    }
    out
}

/// Concatenates 2 to 4 equally sized views left to right into one request.
pub fn make_grid(
    depths: &[GrayImage],
    masks: &[MaskImage],
    inits: &[ColorImage],
    params: GenerationParams,
) -> Result<(GeneratorRequest, GridLayout), GeneratorError> {
    let n = depths.len();
    if !(2..=4).contains(&n) || masks.len() != n || inits.len() != n {
        return Err(GeneratorError::InvalidRequest(format!(
            "a grid needs 2 to 4 views with one depth, mask and init each (got {n}, {}, {})",
            masks.len(),
            inits.len()
        )));
    }
    let dims = depths[0].dims();
    let all = depths.iter().map(|d| d.dims()).chain(masks.iter().map(|m| m.dims())).chain(inits.iter().map(|i| i.dims()));
    for other in all {
        if other != dims {
            return Err(GeneratorError::SizeMismatch(dims, other));
        }
    }
    let layout = GridLayout {
        slots: (0..n).map(|k| SlotRect { x: k * dims.0, y: 0, width: dims.0, height: dims.1 }).collect(),
    };
    let req = GeneratorRequest::new(params, concat(depths, 0.0), concat(masks, false), concat(inits, [0.0; 3]));
    Ok((req, layout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GenerationParams {
        GenerationParams { prompt: "x".into(), w_depth: 1.0, w_inpaint: 0.0, strength: 1.0, seed: 0 }
    }

    fn views(n: usize, size: usize) -> (Vec<GrayImage>, Vec<MaskImage>, Vec<ColorImage>) {
        let d = (0..n).map(|k| GrayImage::from_fn(size, size, |x, y| (x + y + k) as f64 / 100.0)).collect();
        let m = (0..n).map(|k| MaskImage::from_fn(size, size, |x, _| (x + k) % 2 == 0)).collect();
        let i = (0..n).map(|k| ColorImage::from_fn(size, size, |x, y| [x as f64, y as f64, k as f64])).collect();
        (d, m, i)
    }

    #[test]
    fn two_views_side_by_side() {
        let (d, m, i) = views(2, 512);
        let (req, layout) = make_grid(&d, &m, &i, params()).unwrap();
        assert_eq!(req.dims(), (1024, 512));
        assert_eq!(
            layout.slots,
            vec![SlotRect { x: 0, y: 0, width: 512, height: 512 }, SlotRect { x: 512, y: 0, width: 512, height: 512 }]
        );
    }

    #[test]
    fn split_inverts_grid() {
        let (d, m, i) = views(3, 16);
        let (req, layout) = make_grid(&d, &m, &i, params()).unwrap();
        assert_eq!(req.dims(), (48, 16));
        assert_eq!(layout.slots.len(), 3);
        assert_eq!(layout.split(&req.depth), d);
        assert_eq!(layout.split(&req.inpaint_mask), m);
        assert_eq!(layout.split(&req.init_rgb), i);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let (mut d, m, i) = views(2, 8);
        d[1] = GrayImage::filled(4, 4, 0.0);
        assert!(matches!(make_grid(&d, &m, &i, params()), Err(GeneratorError::SizeMismatch(..))));
        let (d, m, i) = views(1, 8);
        assert!(make_grid(&d, &m, &i, params()).is_err());
    }
}
