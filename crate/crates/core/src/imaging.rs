//! Dense row-major image buffers (row 0 at the top), resampling and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ColorImage = Image<[f64; 3]>;
pub type GrayImage = Image<f64>;
pub type MaskImage = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "buffer length does not match dimensions");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Image<U> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    /// Copies the `w × h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop window outside image");
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y).clone())
    }

    /// Writes `src` into this image with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &Self, x0: usize, y0: usize) {
        assert!(x0 + src.width <= self.width && y0 + src.height <= self.height);
        for y in 0..src.height {
            let dst = (y0 + y) * self.width + x0;
            self.data[dst..dst + src.width].clone_from_slice(&src.data[y * src.width..(y + 1) * src.width]);
        }
    }

    /// Nearest-neighbour resample using pixel-center alignment.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            let ix = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
            let iy = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            self.get(ix, iy).clone()
        })
    }
}

impl MaskImage {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims());
        Self::from_vec(self.width, self.height, self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect())
    }

    pub fn or(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims());
        Self::from_vec(self.width, self.height, self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect())
    }

    pub fn not(&self) -> Self {
        self.map(|b| !b)
    }

    /// A pixel survives when it and all of its 8 neighbours inside the image are set.
    pub fn erode(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            if !*self.get(x, y) {
                return false;
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                        continue;
                    }
                    if !*self.get(nx as usize, ny as usize) {
                        return false;
                    }
                }
            }
            true
        })
    }

    /// True when `self` sets no pixel that `other` leaves clear.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }
}

/// Values that can be blended with scalar weights.
pub trait Blend: Copy {
    const ZERO: Self;
    fn add_scaled(self, other: Self, w: f64) -> Self;
    fn scale(self, w: f64) -> Self;
}

impl Blend for f64 {
    const ZERO: Self = 0.0;
    fn add_scaled(self, other: Self, w: f64) -> Self {
        self + other * w
    }
    fn scale(self, w: f64) -> Self {
        self * w
    }
}

impl Blend for [f64; 3] {
    const ZERO: Self = [0.0; 3];
    fn add_scaled(self, o: Self, w: f64) -> Self {
        [self[0] + o[0] * w, self[1] + o[1] * w, self[2] + o[2] * w]
    }
    fn scale(self, w: f64) -> Self {
        [self[0] * w, self[1] * w, self[2] * w]
    }
}

/// Bilinear taps around continuous pixel position `(px, py)` (pixel centers at `.5`),
/// clamped to the image border. Returns `(index, weight)` pairs.
fn bilinear_taps(width: usize, height: usize, px: f64, py: f64) -> [(usize, f64); 4] {
    let fx = px - 0.5;
    let fy = py - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    let (xa, xb) = (clamp(x0, width), clamp(x0 + 1.0, width));
    let (ya, yb) = (clamp(y0, height), clamp(y0 + 1.0, height));
    [
        (ya * width + xa, (1.0 - tx) * (1.0 - ty)),
        (ya * width + xb, tx * (1.0 - ty)),
        (yb * width + xa, (1.0 - tx) * ty),
        (yb * width + xb, tx * ty),
    ]
}

impl<T: Blend> Image<T> {
    /// Bilinear sample at continuous pixel coordinates (pixel centers at `.5`), clamped to the border.
    pub fn sample_bilinear(&self, px: f64, py: f64) -> T {
        bilinear_taps(self.width, self.height, px, py)
            .iter()
            .fold(T::ZERO, |acc, &(i, w)| acc.add_scaled(self.data[i], w))
    }

    /// Bilinear sample that ignores taps where `valid` is false and renormalizes the rest.
    /// Falls back to the plain sample when no tap is valid.
    pub fn sample_bilinear_masked(&self, valid: &MaskImage, px: f64, py: f64) -> T {
        let taps = bilinear_taps(self.width, self.height, px, py);
        let mut acc = T::ZERO;
        let mut total = 0.0;
        for &(i, w) in &taps {
            if valid.data[i] && w > 0.0 {
                acc = acc.add_scaled(self.data[i], w);
                total += w;
            }
        }
        if total > 0.0 {
            acc.scale(1.0 / total)
        } else {
            taps.iter().fold(T::ZERO, |acc, &(i, w)| acc.add_scaled(self.data[i], w))
        }
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| self.sample_bilinear((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy))
    }

    pub fn resize_bilinear_masked(&self, valid: &MaskImage, width: usize, height: usize) -> Self {
        assert_eq!(self.dims(), valid.dims());
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            self.sample_bilinear_masked(valid, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
        })
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

impl ColorImage {
    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb(self.get(x as usize, y as usize).map(to_u8))
        })
    }

    pub fn from_rgb8(buf: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        Self::from_fn(buf.width() as usize, buf.height() as usize, |x, y| {
            buf.get_pixel(x as u32, y as u32).0.map(|c| c as f64 / 255.0)
        })
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        self.map(|c| c.map(|v| to_u8(v) as f64 / 255.0))
    }
}

impl GrayImage {
    pub fn to_gray8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| Luma([to_u8(*self.get(x as usize, y as usize))]))
    }

    pub fn to_gray16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([to_u16(*self.get(x as usize, y as usize))])
        })
    }

    pub fn from_gray8(buf: &ImageBuffer<Luma<u8>, Vec<u8>>) -> Self {
        Self::from_fn(buf.width() as usize, buf.height() as usize, |x, y| {
            buf.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
        })
    }
}

impl MaskImage {
    pub fn to_gray8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if *self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Pixels at or above 128 are set.
    pub fn from_gray8(buf: &ImageBuffer<Luma<u8>, Vec<u8>>) -> Self {
        Self::from_fn(buf.width() as usize, buf.height() as usize, |x, y| buf.get_pixel(x as u32, y as u32).0[0] >= 128)
    }
}

/// Encodes an 8-bit image as PNG bytes.
pub fn encode_png(img: impl Into<DynamicImage>) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Vec::new();
    img.into().write_to(&mut Cursor::new(&mut out), ImageFormat::Png)?;
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<DynamicImage, image::ImageError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
}

pub fn save_png(img: impl Into<DynamicImage>, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
    img.into().save_with_format(path, ImageFormat::Png)
}
