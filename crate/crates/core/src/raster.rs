//! Software rasterization of [`TriMesh`]es into fragment buffers, plus the
//! image-space products derived from them: depth maps, texture-mask and RGB
//! renders, normals from depth, and the two rejection masks used before splatting.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::backproject::{CommittedTexture, TextureMask};
use crate::camera::CameraPose;
use crate::imaging::{ColorImage, GrayImage, MaskImage};
use crate::mesh::TriMesh;

/// Face id of background pixels.
pub const NO_FACE: u32 = u32::MAX;

/// Rows per work unit when rasterizing in parallel.
const BAND_ROWS: usize = 32;

/// Gray level that untextured texels render as.
pub const UNTEXTURED_GRAY: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("resolution mismatch: {0:?} vs {1:?}")]
    ResolutionMismatch((usize, usize), (usize, usize)),
}

/// Per-pixel rasterization result for one camera.
#[derive(Clone, Debug)]
pub struct FragmentBuffer {
    width: usize,
    height: usize,
    face_id: Vec<u32>,
    bary: Vec<[f64; 3]>,
    depth: Vec<f64>,
    uv: Vec<[f64; 2]>,
    pose: CameraPose,
}

impl FragmentBuffer {
    fn empty(pose: &CameraPose) -> Self {
        let (w, h) = (pose.image_size, pose.image_size);
        Self {
            width: w,
            height: h,
            face_id: vec![NO_FACE; w * h],
            bary: vec![[0.0; 3]; w * h],
            depth: vec![f64::INFINITY; w * h],
            uv: vec![[0.0; 2]; w * h],
            pose: *pose,
        }
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

    pub fn pose(&self) -> &CameraPose {
        &self.pose
    }

    pub fn len(&self) -> usize {
        self.face_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face_id.is_empty()
    }

    pub fn face_ids(&self) -> &[u32] {
        &self.face_id
    }

    pub fn barycentrics(&self) -> &[[f64; 3]] {
        &self.bary
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn uvs(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn is_foreground(&self, i: usize) -> bool {
        self.face_id[i] != NO_FACE
    }

    pub fn foreground_mask(&self) -> MaskImage {
        MaskImage::from_vec(self.width, self.height, self.face_id.iter().map(|&f| f != NO_FACE).collect())
    }

    pub fn foreground_count(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != NO_FACE).count()
    }

    /// Builds a buffer from raw per-pixel data; intended for tests and tools that
    /// synthesize coordinate mappings directly.
    pub fn from_parts(pose: CameraPose, face_id: Vec<u32>, bary: Vec<[f64; 3]>, depth: Vec<f64>, uv: Vec<[f64; 2]>) -> Self {
        let n = pose.image_size * pose.image_size;
        assert!(face_id.len() == n && bary.len() == n && depth.len() == n && uv.len() == n);
        Self { width: pose.image_size, height: pose.image_size, face_id, bary, depth, uv, pose }
    }
}

/// Screen-space setup for one triangle.
struct ScreenTri {
    face: u32,
    xy: [[f64; 2]; 3],
    z: [f64; 3],
    uv: [[f64; 2]; 3],
    x_range: (usize, usize),
    y_range: (usize, usize),
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

impl ScreenTri {
    /// Barycentric weights of `p`, or `None` outside the triangle (edges included).
    #[inline]
    fn barycentric(&self, p: [f64; 2]) -> Option<[f64; 3]> {
        let w0 = edge(self.xy[1], self.xy[2], p);
        let w1 = edge(self.xy[2], self.xy[0], p);
        let w2 = edge(self.xy[0], self.xy[1], p);
        let inside = (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) || (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
        if !inside {
            return None;
        }
        let sum = w0 + w1 + w2;
        Some([w0 / sum, w1 / sum, w2 / sum])
    }
}

/// Pixel index range whose centers lie inside `[lo, hi]`, or `None` when empty.
fn covered_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Maps a view-space point to continuous screen coordinates (pixel centers at `.5`, y down).
pub fn view_to_screen(pose: &CameraPose, view: &Vector3<f64>) -> [f64; 2] {
    let size = pose.image_size as f64;
    let ext = pose.ortho_half_extent;
    [(view.x / ext + 1.0) * 0.5 * size, (1.0 - view.y / ext) * 0.5 * size]
}

/// View-space `(right, up)` coordinates of a pixel center.
pub fn pixel_to_view(pose: &CameraPose, x: usize, y: usize) -> [f64; 2] {
    let size = pose.image_size as f64;
    let ext = pose.ortho_half_extent;
    [((x as f64 + 0.5) / size * 2.0 - 1.0) * ext, (1.0 - (y as f64 + 0.5) / size * 2.0) * ext]
}

fn setup_triangles(mesh: &TriMesh, pose: &CameraPose, cull_backfaces: bool) -> Vec<ScreenTri> {
    let basis = pose.basis();
    let eye = pose.eye();
    let size = pose.image_size;
    let view: Vec<Vector3<f64>> = mesh
        .positions()
        .iter()
        .map(|p| {
            let rel = p - eye;
            Vector3::new(rel.dot(&basis.right), rel.dot(&basis.up), rel.dot(&basis.forward))
        })
        .collect();
    let to_camera = -basis.forward;

    let mut tris = Vec::with_capacity(mesh.face_count());
    for (fi, face) in mesh.faces().iter().enumerate() {
        if cull_backfaces && mesh.face_normals()[fi].dot(&to_camera) <= 0.0 {
            continue;
        }
        let v = face.map(|i| view[i as usize]);
        let xy = v.map(|p| view_to_screen(pose, &p));
        if edge(xy[0], xy[1], xy[2]) == 0.0 {
            continue;
        }
        let min_x = xy.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = xy.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = xy.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = xy.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let (Some(x_range), Some(y_range)) = (covered_range(min_x, max_x, size), covered_range(min_y, max_y, size)) else {
            continue;
        };
        let uv = mesh.uv_corners()[fi].map(|t| [t.x, t.y]);
        tris.push(ScreenTri { face: fi as u32, xy, z: v.map(|p| p.z), uv, x_range, y_range });
    }
    tris
}

/// Z-buffered rasterization with one sample at each pixel center.
///
/// With `cull_backfaces`, faces whose normal does not point toward the camera
/// produce no fragments. Equal depths resolve to the lower face id.
pub fn rasterize(mesh: &TriMesh, pose: &CameraPose, cull_backfaces: bool) -> FragmentBuffer {
    let tris = setup_triangles(mesh, pose, cull_backfaces);
    let mut out = FragmentBuffer::empty(pose);
    let width = out.width;
    let n_bands = out.height.div_ceil(BAND_ROWS);

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bands];
    for (ti, t) in tris.iter().enumerate() {
        for band in bins.iter_mut().take(t.y_range.1 / BAND_ROWS + 1).skip(t.y_range.0 / BAND_ROWS) {
            band.push(ti);
        }
    }

    let chunk = BAND_ROWS * width;
    out.face_id
        .par_chunks_mut(chunk)
        .zip(out.bary.par_chunks_mut(chunk))
        .zip(out.depth.par_chunks_mut(chunk))
        .zip(out.uv.par_chunks_mut(chunk))
        .enumerate()
        .for_each(|(band, (((face_id, bary), depth), uv))| {
            let row0 = band * BAND_ROWS;
            let rows = face_id.len() / width;
            for &ti in &bins[band] {
                let t = &tris[ti];
                let y_lo = t.y_range.0.max(row0);
                let y_hi = t.y_range.1.min(row0 + rows - 1);
                for y in y_lo..=y_hi {
                    let py = y as f64 + 0.5;
                    for x in t.x_range.0..=t.x_range.1 {
                        let p = [x as f64 + 0.5, py];
                        let Some(b) = t.barycentric(p) else {
                            continue;
                        };
                        let z = b[0] * t.z[0] + b[1] * t.z[1] + b[2] * t.z[2];
                        let i = (y - row0) * width + x;
                        if z < depth[i] {
                            depth[i] = z;
                            face_id[i] = ti as u32;
                        }
                    }
                }
            }
            // Attributes are computed once, for the surviving triangle only.
            for (i, slot) in face_id.iter_mut().enumerate() {
                if *slot == NO_FACE {
                    continue;
                }
                let t = &tris[*slot as usize];
                let p = [(i % width) as f64 + 0.5, (row0 + i / width) as f64 + 0.5];
                let b = t.barycentric(p).expect("pixel was covered by this triangle");
                *slot = t.face;
                bary[i] = b;
                uv[i] = [
                    (b[0] * t.uv[0][0] + b[1] * t.uv[1][0] + b[2] * t.uv[2][0]).clamp(0.0, 1.0),
                    (b[0] * t.uv[0][1] + b[1] * t.uv[1][1] + b[2] * t.uv[2][1]).clamp(0.0, 1.0),
                ];
            }
        });
    out
}

/// View-space depth per pixel with `+∞` for background.
#[derive(Clone, Debug)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    near: f64,
    far: f64,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, near: f64, far: f64) -> Self {
        assert_eq!(depth.len(), width * height);
        Self { width, height, depth, near, far }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.depth
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn is_foreground(&self, i: usize) -> bool {
        self.depth[i].is_finite()
    }

    pub fn foreground_mask(&self) -> MaskImage {
        MaskImage::from_vec(self.width, self.height, self.depth.iter().map(|d| d.is_finite()).collect())
    }

    /// Conditioning image: near maps to 1, far to 0, background 0.
    pub fn normalized(&self) -> GrayImage {
        let range = self.far - self.near;
        GrayImage::from_vec(
            self.width,
            self.height,
            self.depth
                .iter()
                .map(|&d| if d.is_finite() { (1.0 - (d - self.near) / range).clamp(0.0, 1.0) } else { 0.0 })
                .collect(),
        )
    }
}

pub fn render_depth(frag: &FragmentBuffer) -> DepthMap {
    DepthMap::new(frag.width, frag.height, frag.depth.clone(), frag.pose.near(), frag.pose.far())
}

/// Projects the textured-texel mask into the view with a nearest-texel lookup.
pub fn render_texture_mask(frag: &FragmentBuffer, tmask: &TextureMask) -> MaskImage {
    MaskImage::from_vec(
        frag.width,
        frag.height,
        (0..frag.len())
            .map(|i| frag.is_foreground(i) && tmask.sample_nearest(frag.uv[i]))
            .collect(),
    )
}

/// Bilinear texture lookup at every foreground pixel; background is black and
/// untextured texels read as mid-gray.
pub fn render_rgb(frag: &FragmentBuffer, tex: &CommittedTexture) -> ColorImage {
    ColorImage::from_vec(
        frag.width,
        frag.height,
        (0..frag.len())
            .map(|i| if frag.is_foreground(i) { tex.sample_bilinear(frag.uv[i]) } else { [0.0; 3] })
            .collect(),
    )
}

/// Per-pixel view-space normals. Axes: x right, y up, z toward the camera, so
/// `z` is the facing ratio.
#[derive(Clone, Debug)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Option<Vector3<f64>>>,
    foreground: Vec<bool>,
}

impl NormalMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        self.normals[y * self.width + x]
    }

    pub fn normals(&self) -> &[Option<Vector3<f64>>] {
        &self.normals
    }

    /// Debug visualization `n * 0.5 + 0.5`, black where invalid.
    pub fn to_color_image(&self) -> ColorImage {
        ColorImage::from_vec(
            self.width,
            self.height,
            self.normals
                .iter()
                .map(|n| n.map_or([0.0; 3], |n| [n.x * 0.5 + 0.5, n.y * 0.5 + 0.5, n.z * 0.5 + 0.5]))
                .collect(),
        )
    }
}

/// Normals from screen-space differences of the view-space position.
///
/// Central differences where both neighbours are foreground, one-sided next to
/// background; pixels without a foreground neighbour along an axis stay invalid.
pub fn normals_from_depth(depth: &DepthMap, pose: &CameraPose) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let step_x = 2.0 * pose.ortho_half_extent / w as f64;
    let step_y = 2.0 * pose.ortho_half_extent / h as f64;
    let d = |x: i64, y: i64| -> Option<f64> {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return None;
        }
        let v = depth.depth[y as usize * w + x as usize];
        v.is_finite().then_some(v)
    };
    let slope = |lo: Option<f64>, mid: f64, hi: Option<f64>| match (lo, hi) {
        (Some(a), Some(b)) => Some((b - a) * 0.5),
        (None, Some(b)) => Some(b - mid),
        (Some(a), None) => Some(mid - a),
        (None, None) => None,
    };

    let mut normals = vec![None; w * h];
    let mut foreground = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i64, y as i64);
            let Some(mid) = d(xi, yi) else { continue };
            foreground[y * w + x] = true;
            let (Some(dzx), Some(dzy)) = (slope(d(xi - 1, yi), mid, d(xi + 1, yi)), slope(d(xi, yi - 1), mid, d(xi, yi + 1)))
            else {
                continue;
            };
            // Tangents of P = (x, y, -depth): (step_x, 0, -dzx) and (0, -step_y, -dzy).
            let n = Vector3::new(dzx * step_y, -step_x * dzy, step_x * step_y);
            normals[y * w + x] = Some(n.normalize());
        }
    }
    NormalMap { width: w, height: h, normals, foreground }
}

/// Pixels to reject because they face the camera at a grazing angle (`n_z < tau_keep`).
/// Foreground pixels without a valid normal are rejected whenever `tau_keep > 0`.
pub fn frontal_filter_mask(normals: &NormalMap, tau_keep: f64) -> MaskImage {
    MaskImage::from_vec(
        normals.width,
        normals.height,
        normals
            .normals
            .iter()
            .zip(&normals.foreground)
            .map(|(n, &fg)| fg && n.map_or(tau_keep > 0.0, |n| n.z < tau_keep))
            .collect(),
    )
}

/// Pixels where culled and unculled depth disagree: the unculled render sees an
/// internal (back-facing) surface there.
pub fn internal_face_mask(culled: &DepthMap, nocull: &DepthMap, eps: f64) -> Result<MaskImage, RasterError> {
    if culled.dims() != nocull.dims() {
        return Err(RasterError::ResolutionMismatch(culled.dims(), nocull.dims()));
    }
    let tol = eps * (culled.far - culled.near);
    Ok(MaskImage::from_vec(
        culled.width,
        culled.height,
        culled
            .depth
            .iter()
            .zip(&nocull.depth)
            .map(|(&a, &b)| match (a.is_finite(), b.is_finite()) {
                (true, true) => (a - b).abs() > tol,
                (false, false) => false,
                _ => true,
            })
            .collect(),
    ))
}

/// Settings for the pixel gates applied before backprojection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    pub tau_keep: f64,
    pub depth_eps: f64,
    pub frontal_filter: bool,
    pub internal_mask: bool,
}

impl Default for GateParams {
    fn default() -> Self {
        Self { tau_keep: 0.3, depth_eps: 1e-3, frontal_filter: true, internal_mask: true }
    }
}

/// Everything rendered from the geometry for one camera.
///
/// The culled render is what the generator is conditioned on; splatting uses the
/// unculled coordinate mapping, gated by `reject`.
#[derive(Clone, Debug)]
pub struct ViewGeometry {
    pub pose: CameraPose,
    pub culled: FragmentBuffer,
    pub nocull: FragmentBuffer,
    pub depth_culled: DepthMap,
    pub depth_nocull: DepthMap,
    pub normals: NormalMap,
    pub frontal_reject: MaskImage,
    pub internal_reject: MaskImage,
    /// Union of the enabled rejection masks.
    pub reject: MaskImage,
}

pub fn render_view(mesh: &TriMesh, pose: &CameraPose, gates: &GateParams) -> ViewGeometry {
    let (culled, nocull) = rayon::join(|| rasterize(mesh, pose, true), || rasterize(mesh, pose, false));
    let depth_culled = render_depth(&culled);
    let depth_nocull = render_depth(&nocull);
    let normals = normals_from_depth(&depth_nocull, pose);
    let frontal_reject = frontal_filter_mask(&normals, gates.tau_keep);
    let internal_reject =
        internal_face_mask(&depth_culled, &depth_nocull, gates.depth_eps).expect("same pose, same resolution");
    let (w, h) = culled.dims();
    let mut reject = MaskImage::filled(w, h, false);
    if gates.frontal_filter {
        reject = reject.or(&frontal_reject);
    }
    if gates.internal_mask {
        reject = reject.or(&internal_reject);
    }
    ViewGeometry { pose: *pose, culled, nocull, depth_culled, depth_nocull, normals, frontal_reject, internal_reject, reject }
}
