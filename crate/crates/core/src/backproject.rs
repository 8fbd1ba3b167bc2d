//! Backprojection of view images into the UV texture.
//!
//! Every gated foreground pixel deposits its color into the four texels around
//! its interpolated UV with bilinear weights. Texel-space positions are snapped
//! to a 1/4096 sub-texel grid, which makes every weight a dyadic rational: the
//! weights of one pixel sum to exactly 1 and weight accumulation is exact and
//! independent of order.
//!
//! Texel `(i, j)` has its center at `((i + 0.5) / R, (j + 0.5) / R)` in UV space;
//! row `j = 0` is at `v = 0` (the bottom of the image once exported).

use image::{ImageBuffer, Rgb};
use thiserror::Error;

use crate::imaging::{to_u8, ColorImage, MaskImage};
use crate::mesh::TriMesh;
use crate::raster::{FragmentBuffer, UNTEXTURED_GRAY};

/// Accumulated weight above which a texel counts as textured.
pub const DEFAULT_W_MIN: f64 = 1e-3;

/// Sub-texel positions are snapped to multiples of `2^-SUBTEXEL_BITS`.
pub const SUBTEXEL_BITS: i32 = 12;

#[derive(Debug, Error, PartialEq)]
pub enum BackprojectError {
    #[error("resolution mismatch: image {image:?}, fragments {fragments:?}, reject mask {reject:?}")]
    ResolutionMismatch { image: (usize, usize), fragments: (usize, usize), reject: (usize, usize) },
}

/// Per-texel boolean over an `R × R` texture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextureMask {
    res: usize,
    bits: Vec<bool>,
}

impl TextureMask {
    pub fn filled(res: usize, value: bool) -> Self {
        Self { res, bits: vec![value; res * res] }
    }

    /// `f(i, j)` with `i` along u and `j` along v.
    pub fn from_fn(res: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(res * res);
        for j in 0..res {
            for i in 0..res {
                bits.push(f(i, j));
            }
        }
        Self { res, bits }
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.res + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[j * self.res + i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Value of the texel containing `uv`.
    pub fn sample_nearest(&self, uv: [f64; 2]) -> bool {
        let (i, j) = nearest_texel(uv, self.res);
        self.bits[j * self.res + i]
    }
}

/// Texel containing `uv`, clamped to the texture.
pub fn nearest_texel(uv: [f64; 2], res: usize) -> (usize, usize) {
    let i = ((uv[0] * res as f64).floor().max(0.0) as usize).min(res - 1);
    let j = ((uv[1] * res as f64).floor().max(0.0) as usize).min(res - 1);
    (i, j)
}

/// Weighted color accumulator for an `R × R` texture.
#[derive(Clone, Debug, PartialEq)]
pub struct UvTexture {
    res: usize,
    color_accum: Vec<[f64; 3]>,
    weight_accum: Vec<f64>,
    w_min: f64,
}

impl UvTexture {
    pub fn new(res: usize) -> Self {
        Self::with_w_min(res, DEFAULT_W_MIN)
    }

    pub fn with_w_min(res: usize, w_min: f64) -> Self {
        assert!(res > 0);
        Self { res, color_accum: vec![[0.0; 3]; res * res], weight_accum: vec![0.0; res * res], w_min }
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn w_min(&self) -> f64 {
        self.w_min
    }

    pub fn color_accum(&self) -> &[[f64; 3]] {
        &self.color_accum
    }

    pub fn weight_accum(&self) -> &[f64] {
        &self.weight_accum
    }

    pub fn total_weight(&self) -> f64 {
        self.weight_accum.iter().sum()
    }

    /// Adds `weight` of `color` (already premultiplied by nothing) to texel `index`.
    pub fn deposit(&mut self, index: usize, color: [f64; 3], weight: f64) {
        let acc = &mut self.color_accum[index];
        acc[0] += color[0] * weight;
        acc[1] += color[1] * weight;
        acc[2] += color[2] * weight;
        self.weight_accum[index] += weight;
    }

    /// The textured-texel mask: weight above `w_min`.
    pub fn mask(&self) -> TextureMask {
        TextureMask { res: self.res, bits: self.weight_accum.iter().map(|&w| w > self.w_min).collect() }
    }

    /// Normalizes accumulated colors; texels at or below `w_min` take `fill`.
    pub fn commit(&self, fill: [f64; 3]) -> CommittedTexture {
        let mask = self.mask();
        let colors = self
            .color_accum
            .iter()
            .zip(&self.weight_accum)
            .zip(&mask.bits)
            .map(|((c, &w), &textured)| {
                if textured {
                    c.map(|v| (v / w).clamp(0.0, 1.0))
                } else {
                    fill
                }
            })
            .collect();
        CommittedTexture { res: self.res, colors, mask }
    }
}

/// Normalized texture colors together with the textured mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CommittedTexture {
    res: usize,
    colors: Vec<[f64; 3]>,
    mask: TextureMask,
}

impl CommittedTexture {
    /// Fully textured texture from row-major colors (row 0 at `v = 0`).
    pub fn from_colors(res: usize, colors: Vec<[f64; 3]>) -> Self {
        assert_eq!(colors.len(), res * res);
        Self { res, colors, mask: TextureMask::filled(res, true) }
    }

    pub fn from_parts(colors: Vec<[f64; 3]>, mask: TextureMask) -> Self {
        assert_eq!(colors.len(), mask.bits.len());
        Self { res: mask.res, colors, mask }
    }

    pub fn constant(res: usize, color: [f64; 3]) -> Self {
        Self::from_colors(res, vec![color; res * res])
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn mask(&self) -> &TextureMask {
        &self.mask
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        self.colors[j * self.res + i]
    }

    /// Bilinear lookup with clamp-to-edge over textured taps only, renormalized;
    /// mid-gray when no tap is textured.
    pub fn sample_bilinear(&self, uv: [f64; 2]) -> [f64; 3] {
        let r = self.res as f64;
        let (x, y) = (uv[0] * r - 0.5, uv[1] * r - 0.5);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.res - 1);
        let taps = [
            (clamp(x0), clamp(y0), (1.0 - fx) * (1.0 - fy)),
            (clamp(x0 + 1.0), clamp(y0), fx * (1.0 - fy)),
            (clamp(x0), clamp(y0 + 1.0), (1.0 - fx) * fy),
            (clamp(x0 + 1.0), clamp(y0 + 1.0), fx * fy),
        ];
        let mut out = [0.0; 3];
        let mut total = 0.0;
        for (i, j, w) in taps {
            let idx = j * self.res + i;
            if self.mask.bits[idx] && w > 0.0 {
                total += w;
                for (o, c) in out.iter_mut().zip(self.colors[idx]) {
                    *o += c * w;
                }
            }
        }
        if total <= 0.0 {
            return [UNTEXTURED_GRAY; 3];
        }
        out.map(|c| c / total)
    }

    /// 8-bit image with texel row 0 at the bottom (OBJ `vt` convention).
    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let res = self.res as u32;
        ImageBuffer::from_fn(res, res, |x, y| {
            let j = self.res - 1 - y as usize;
            Rgb(self.colors[j * self.res + x as usize].map(to_u8))
        })
    }

    /// Inverse of [`CommittedTexture::to_rgb8`]; every texel is marked textured.
    pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        assert_eq!(img.width(), img.height(), "textures are square");
        let res = img.width() as usize;
        let mut colors = Vec::with_capacity(res * res);
        for j in 0..res {
            let y = (res - 1 - j) as u32;
            for i in 0..res {
                colors.push(img.get_pixel(i as u32, y).0.map(|c| c as f64 / 255.0));
            }
        }
        Self::from_colors(res, colors)
    }
}

fn snap(v: f64) -> f64 {
    let scale = (1i64 << SUBTEXEL_BITS) as f64;
    (v * scale).round() / scale
}

/// Texels and bilinear weights that a pixel at `uv` deposits into.
///
/// Out-of-range neighbours are clamped onto the nearest border texel, so the
/// weights always sum to exactly 1. Entries may repeat the same texel.
pub fn splat_footprint(uv: [f64; 2], res: usize) -> [(usize, f64); 4] {
    let r = res as f64;
    let x = snap(uv[0] * r - 0.5);
    let y = snap(uv[1] * r - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let clamp = |v: f64| (v.max(0.0) as usize).min(res - 1);
    let (xa, xb, ya, yb) = (clamp(x0), clamp(x0 + 1.0), clamp(y0), clamp(y0 + 1.0));
    [
        (ya * res + xa, (1.0 - fx) * (1.0 - fy)),
        (ya * res + xb, fx * (1.0 - fy)),
        (yb * res + xa, (1.0 - fx) * fy),
        (yb * res + xb, fx * fy),
    ]
}

/// Outcome of one splat pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplatStats {
    /// Foreground, non-rejected pixels that deposited weight.
    pub contributing_pixels: usize,
}

fn check_dims(image: &ColorImage, frag: &FragmentBuffer, reject: &MaskImage) -> Result<(), BackprojectError> {
    if image.dims() != frag.dims() || reject.dims() != frag.dims() {
        return Err(BackprojectError::ResolutionMismatch {
            image: image.dims(),
            fragments: frag.dims(),
            reject: reject.dims(),
        });
    }
    Ok(())
}

/// Bilinearly splats every foreground, non-rejected pixel of `image` into `tex`
/// following the fragment UVs.
pub fn splat(
    image: &ColorImage,
    frag: &FragmentBuffer,
    reject: &MaskImage,
    tex: &mut UvTexture,
) -> Result<SplatStats, BackprojectError> {
    splat_traced(image, frag, reject, tex, |_, _, _| {})
}

/// [`splat`] that reports every deposit as `(pixel, texel, weight)`.
pub fn splat_traced(
    image: &ColorImage,
    frag: &FragmentBuffer,
    reject: &MaskImage,
    tex: &mut UvTexture,
    mut on_deposit: impl FnMut(usize, usize, f64),
) -> Result<SplatStats, BackprojectError> {
    check_dims(image, frag, reject)?;
    let res = tex.res;
    let mut stats = SplatStats::default();
    let colors = image.data();
    let rejected = reject.data();
    for (p, &uv) in frag.uvs().iter().enumerate() {
        if !frag.is_foreground(p) || rejected[p] {
            continue;
        }
        stats.contributing_pixels += 1;
        for (texel, w) in splat_footprint(uv, res) {
            if w > 0.0 {
                tex.deposit(texel, colors[p], w);
                on_deposit(p, texel, w);
            }
        }
    }
    Ok(stats)
}

/// Texels whose center lies inside at least one UV triangle of the mesh.
/// Triangles with zero UV area cannot receive texture and are skipped.
pub fn chart_mask(mesh: &TriMesh, res: usize) -> TextureMask {
    let mut mask = TextureMask::filled(res, false);
    let r = res as f64;
    for uvs in mesh.uv_corners() {
        let p = uvs.map(|t| [t.x * r, t.y * r]);
        let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        if area == 0.0 {
            continue;
        }
        let lo = |k: usize| p.iter().map(|q| q[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| p.iter().map(|q| q[k]).fold(f64::NEG_INFINITY, f64::max);
        let i0 = (lo(0) - 0.5).ceil().max(0.0) as usize;
        let i1 = ((hi(0) - 0.5).floor().min(r - 1.0)).max(-1.0);
        let j0 = (lo(1) - 0.5).ceil().max(0.0) as usize;
        let j1 = ((hi(1) - 0.5).floor().min(r - 1.0)).max(-1.0);
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        let edge = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        for j in j0..=j1 as usize {
            for i in i0..=i1 as usize {
                let c = [i as f64 + 0.5, j as f64 + 0.5];
                let w = [edge(p[1], p[2], c), edge(p[2], p[0], c), edge(p[0], p[1], c)];
                if w.iter().all(|&x| x >= 0.0) || w.iter().all(|&x| x <= 0.0) {
                    mask.set(i, j, true);
                }
            }
        }
    }
    mask
}

/// Fraction of chart texels that are textured; 0 for an empty chart.
pub fn uv_coverage(tmask: &TextureMask, chart: &TextureMask) -> f64 {
    assert_eq!(tmask.res, chart.res, "coverage needs matching resolutions");
    let in_chart = chart.count();
    if in_chart == 0 {
        return 0.0;
    }
    let textured = tmask.bits.iter().zip(&chart.bits).filter(|(t, c)| **t && **c).count();
    textured as f64 / in_chart as f64
}

#[derive(Clone, Debug)]
pub struct FillOutcome {
    pub texture: CommittedTexture,
    /// Rounds that changed at least one texel.
    pub rounds: usize,
}

/// Dilates textured colors into untextured chart texels.
///
/// Each round, every untextured chart texel with at least one textured
/// 8-neighbour takes the mean of those neighbours. Rounds repeat until nothing
/// changes or `max_rounds` is reached. Untextured texels outside the chart get
/// `fill`; textured texels are never modified.
pub fn uv_fill(tex: &CommittedTexture, chart: &TextureMask, max_rounds: usize, fill: [f64; 3]) -> FillOutcome {
    assert_eq!(tex.res, chart.res, "fill needs matching resolutions");
    let res = tex.res;
    let mut colors = tex.colors.clone();
    let mut mask = tex.mask.bits.clone();
    for (k, c) in colors.iter_mut().enumerate() {
        if !mask[k] && !chart.bits[k] {
            *c = fill;
        }
    }

    let mut rounds = 0;
    let mut frontier: Vec<(usize, [f64; 3])> = Vec::new();
    while rounds < max_rounds {
        frontier.clear();
        for j in 0..res {
            for i in 0..res {
                let k = j * res + i;
                if mask[k] || !chart.bits[k] {
                    continue;
                }
                let mut sum = [0.0; 3];
                let mut n = 0usize;
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if (di == 0 && dj == 0) || ni < 0 || nj < 0 || ni >= res as i64 || nj >= res as i64 {
                            continue;
                        }
                        let nk = nj as usize * res + ni as usize;
                        if mask[nk] {
                            for c in 0..3 {
                                sum[c] += colors[nk][c];
                            }
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    frontier.push((k, sum.map(|s| s / n as f64)));
                }
            }
        }
        if frontier.is_empty() {
            break;
        }
        for &(k, c) in &frontier {
            colors[k] = c;
            mask[k] = true;
        }
        rounds += 1;
    }
    FillOutcome { texture: CommittedTexture { res, colors, mask: TextureMask { res, bits: mask } }, rounds }
}
