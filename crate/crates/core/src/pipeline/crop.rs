//! Square object crops between the render frame and the generator resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ColorImage, GrayImage, MaskImage};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CropError {
    #[error("view has no foreground pixels")]
    EmptyForeground,
}

/// The per-view images sent to the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewImages {
    pub depth: GrayImage,
    pub inpaint_mask: MaskImage,
    pub init_rgb: ColorImage,
    pub foreground: MaskImage,
}

/// Crops a view to its foreground square and resizes it to `gen_size`: bilinear
/// for depth, foreground-only bilinear for color, nearest for masks.
pub fn crop_and_resize(view: &ViewImages, gen_size: usize) -> Result<(ViewImages, CropRecord), CropError> {
    let rec = crop_box(&view.foreground, gen_size).ok_or(CropError::EmptyForeground)?;
    let out = ViewImages {
        depth: rec.crop_gray(&view.depth),
        inpaint_mask: rec.crop_mask(&view.inpaint_mask),
        init_rgb: rec.crop_color(&view.init_rgb, &view.foreground),
        foreground: rec.crop_mask(&view.foreground),
    };
    Ok((out, rec))
}

/// Fraction of the bounding-box size added on each side.
pub const CROP_MARGIN: f64 = 0.05;

/// Square window of the render frame that maps onto the generator image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub gen_size: usize,
}

/// Tight foreground bounding box grown by [`CROP_MARGIN`] per side, made square
/// around its center and shifted (or shrunk) to stay inside the frame.
/// Returns `None` when the mask is empty.
pub fn crop_box(foreground: &MaskImage, gen_size: usize) -> Option<CropRecord> {
    let (w, h) = foreground.dims();
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if *foreground.get(x, y) {
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
            }
        }
    }
    if min_x == usize::MAX {
        return None;
    }
    let (bw, bh) = ((max_x - min_x + 1) as f64, (max_y - min_y + 1) as f64);
    let x_lo = min_x as f64 - CROP_MARGIN * bw;
    let x_hi = (max_x + 1) as f64 + CROP_MARGIN * bw;
    let y_lo = min_y as f64 - CROP_MARGIN * bh;
    let y_hi = (max_y + 1) as f64 + CROP_MARGIN * bh;
    let side = ((x_hi - x_lo).max(y_hi - y_lo).ceil() as usize).clamp(1, w.min(h));
    let place = |lo: f64, hi: f64, n: usize| {
        let start = ((lo + hi) * 0.5 - side as f64 * 0.5).round();
        start.clamp(0.0, (n - side) as f64) as usize
    };
    Some(CropRecord {
        x0: place(x_lo, x_hi, w),
        y0: place(y_lo, y_hi, h),
        side,
        frame_width: w,
        frame_height: h,
        gen_size,
    })
}

impl CropRecord {
    fn check_frame(&self, dims: (usize, usize)) {
        assert_eq!(dims, (self.frame_width, self.frame_height), "image does not match the cropped frame");
    }

    pub fn crop_gray(&self, img: &GrayImage) -> GrayImage {
        self.check_frame(img.dims());
        img.crop(self.x0, self.y0, self.side, self.side).resize_bilinear(self.gen_size, self.gen_size)
    }

    /// Bilinear crop that only blends pixels where `valid` is set.
    pub fn crop_color(&self, img: &ColorImage, valid: &MaskImage) -> ColorImage {
        self.check_frame(img.dims());
        let window = img.crop(self.x0, self.y0, self.side, self.side);
        let valid = valid.crop(self.x0, self.y0, self.side, self.side);
        window.resize_bilinear_masked(&valid, self.gen_size, self.gen_size)
    }

    pub fn crop_mask(&self, mask: &MaskImage) -> MaskImage {
        self.check_frame(mask.dims());
        mask.crop(self.x0, self.y0, self.side, self.side).resize_nearest(self.gen_size, self.gen_size)
    }

    fn gen_coords(&self, x: usize, y: usize) -> (f64, f64) {
        let s = self.gen_size as f64 / self.side as f64;
        (((x - self.x0) as f64 + 0.5) * s, ((y - self.y0) as f64 + 0.5) * s)
    }

    fn inside(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x0 + self.side).contains(&x) && (self.y0..self.y0 + self.side).contains(&y)
    }

    /// Maps a generator-size image back onto the frame, blending only taps where
    /// `gen_valid` is set. Pixels outside the window are black.
    pub fn uncrop_color(&self, img: &ColorImage, gen_valid: &MaskImage) -> ColorImage {
        assert_eq!(img.dims(), (self.gen_size, self.gen_size));
        ColorImage::from_fn(self.frame_width, self.frame_height, |x, y| {
            if !self.inside(x, y) {
                return [0.0; 3];
            }
            let (gx, gy) = self.gen_coords(x, y);
            img.sample_bilinear_masked(gen_valid, gx, gy)
        })
    }

    pub fn uncrop_mask(&self, mask: &MaskImage) -> MaskImage {
        assert_eq!(mask.dims(), (self.gen_size, self.gen_size));
        MaskImage::from_fn(self.frame_width, self.frame_height, |x, y| {
            if !self.inside(x, y) {
                return false;
            }
            let (gx, gy) = self.gen_coords(x, y);
            let ix = (gx as usize).min(self.gen_size - 1);
            let iy = (gy as usize).min(self.gen_size - 1);
            *mask.get(ix, iy)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(n: usize, lo: usize, hi: usize) -> MaskImage {
        MaskImage::from_fn(n, n, |x, y| (lo..hi).contains(&x) && (lo..hi).contains(&y))
    }

    #[test]
    fn centered_object_gives_centered_square() {
        let rec = crop_box(&square_mask(200, 50, 150), 64).unwrap();
        // 100 px box plus 5 px per side.
        assert_eq!(rec.side, 110);
        assert_eq!((rec.x0, rec.y0), (45, 45));
    }

    #[test]
    fn crop_is_clamped_to_frame() {
        let mask = MaskImage::from_fn(100, 100, |x, y| x < 30 && (20..60).contains(&y));
        let rec = crop_box(&mask, 32).unwrap();
        assert_eq!(rec.x0, 0);
        assert!(rec.x0 + rec.side <= 100 && rec.y0 + rec.side <= 100);
        let full = crop_box(&MaskImage::filled(50, 50, true), 32).unwrap();
        assert_eq!((full.x0, full.y0, full.side), (0, 0, 50));
    }

    #[test]
    fn empty_foreground_has_no_crop() {
        assert!(crop_box(&MaskImage::filled(10, 10, false), 8).is_none());
    }

    #[test]
    fn mask_round_trip_within_one_pixel() {
        let mask = MaskImage::from_fn(300, 300, |x, y| {
            let (dx, dy) = (x as f64 - 140.0, y as f64 - 160.0);
            dx * dx / 90.0f64.powi(2) + dy * dy / 60.0f64.powi(2) <= 1.0
        });
        let rec = crop_box(&mask, 128).unwrap();
        let back = rec.uncrop_mask(&rec.crop_mask(&mask));
        // Every mismatch lies within one pixel of the true boundary.
        let dilated = mask.not().erode().not();
        let eroded = mask.erode();
        for y in 0..300 {
            for x in 0..300 {
                if *back.get(x, y) != *mask.get(x, y) {
                    assert!(*dilated.get(x, y) && !*eroded.get(x, y), "({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn color_round_trip_preserves_smooth_images() {
        let fg = square_mask(128, 20, 100);
        let img = ColorImage::from_fn(128, 128, |x, y| if *fg.get(x, y) { [x as f64 / 128.0, y as f64 / 128.0, 0.5] } else { [0.0; 3] });
        let rec = crop_box(&fg, 64).unwrap();
        let small = rec.crop_color(&img, &fg);
        let small_fg = rec.crop_mask(&fg);
        let back = rec.uncrop_color(&small, &small_fg);
        for y in 22..98 {
            for x in 22..98 {
                for c in 0..3 {
                    assert!((back.get(x, y)[c] - img.get(x, y)[c]).abs() < 0.02);
                }
            }
        }
    }
}
