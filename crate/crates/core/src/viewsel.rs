//! Greedy view selection: repeatedly pick the candidate camera that sees the
//! most untextured surface.

use rayon::prelude::*;
use thiserror::Error;

use crate::backproject::{nearest_texel, splat, TextureMask, UvTexture};
use crate::camera::{fibonacci_lattice, CameraError, CameraPose};
use crate::imaging::ColorImage;
use crate::mesh::TriMesh;
use crate::raster::{rasterize, render_texture_mask, render_view, GateParams};

#[derive(Debug, Error, PartialEq)]
pub enum ViewSelError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Candidate poses with a used flag each; a pose is selected at most once.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    poses: Vec<CameraPose>,
    used: Vec<bool>,
}

impl CandidateSet {
    pub fn new(poses: Vec<CameraPose>) -> Self {
        let used = vec![false; poses.len()];
        Self { poses, used }
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_used(&self, i: usize) -> bool {
        self.used[i]
    }

    pub fn mark_used(&mut self, i: usize) {
        assert!(!self.used[i], "candidate {i} selected twice");
        self.used[i] = true;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionParams {
    /// Resolution of the scoring renders.
    pub image_size: usize,
    /// Stop once no candidate sees at least this fraction of its pixels untextured.
    pub min_gain_fraction: f64,
    pub texture_size: usize,
    pub radius: f64,
    pub gates: GateParams,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            image_size: 1024,
            min_gain_fraction: 0.005,
            texture_size: 1024,
            radius: crate::camera::DEFAULT_RADIUS,
            gates: GateParams::default(),
        }
    }
}

impl SelectionParams {
    pub fn min_gain(&self) -> usize {
        (self.min_gain_fraction * (self.image_size * self.image_size) as f64).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    View(usize),
    Done,
}

/// Foreground pixels of the culled render whose texel is not yet textured.
pub fn untextured_count(mesh: &TriMesh, pose: &CameraPose, tmask: &TextureMask) -> usize {
    let frag = rasterize(mesh, pose, true);
    let textured = render_texture_mask(&frag, tmask);
    (0..frag.len()).filter(|&i| frag.is_foreground(i) && !textured.data()[i]).count()
}

/// Untextured-pixel score per candidate; `None` for used ones.
pub fn score_candidates(mesh: &TriMesh, tmask: &TextureMask, cands: &CandidateSet, image_size: usize) -> Vec<Option<usize>> {
    cands
        .poses
        .par_iter()
        .zip(&cands.used)
        .map(|(pose, &used)| (!used).then(|| untextured_count(mesh, &pose.with_image_size(image_size), tmask)))
        .collect()
}

/// Picks the unused candidate with the most untextured foreground pixels (lowest
/// index on ties), or `Done` when none reaches the minimum gain.
pub fn select_next(
    mesh: &TriMesh,
    tmask: &TextureMask,
    cands: &CandidateSet,
    params: &SelectionParams,
) -> Result<Selection, ViewSelError> {
    if cands.is_empty() {
        return Err(ViewSelError::EmptyCandidates);
    }
    let scores = score_candidates(mesh, tmask, cands, params.image_size);
    Ok(pick_best(&scores, params.min_gain()))
}

/// What each candidate sees, rasterized once: the visible texels with the number
/// of foreground pixels landing on each. Scores against any texture mask are
/// then a sum over untextured texels, equal to [`untextured_count`].
#[derive(Clone, Debug)]
pub struct VisibilityCache {
    texture_size: usize,
    visible: Vec<Vec<(u32, u32)>>,
}

impl VisibilityCache {
    pub fn build(mesh: &TriMesh, cands: &CandidateSet, image_size: usize, texture_size: usize) -> Self {
        let visible = cands
            .poses
            .par_iter()
            .map(|pose| {
                let frag = rasterize(mesh, &pose.with_image_size(image_size), true);
                let mut texels: Vec<u32> = (0..frag.len())
                    .filter(|&i| frag.is_foreground(i))
                    .map(|i| {
                        let (ti, tj) = nearest_texel(frag.uvs()[i], texture_size);
                        (tj * texture_size + ti) as u32
                    })
                    .collect();
                texels.sort_unstable();
                let mut runs: Vec<(u32, u32)> = Vec::new();
                for t in texels {
                    match runs.last_mut() {
                        Some((last, n)) if *last == t => *n += 1,
                        _ => runs.push((t, 1)),
                    }
                }
                runs
            })
            .collect();
        Self { texture_size, visible }
    }

    pub fn score(&self, candidate: usize, tmask: &TextureMask) -> usize {
        assert_eq!(tmask.resolution(), self.texture_size, "mask resolution differs from the cache");
        let bits = tmask.bits();
        self.visible[candidate].iter().filter(|(t, _)| !bits[*t as usize]).map(|&(_, n)| n as usize).sum()
    }
}

/// [`select_next`] scored from a [`VisibilityCache`] built for the same candidates.
pub fn select_next_cached(
    cache: &VisibilityCache,
    tmask: &TextureMask,
    cands: &CandidateSet,
    params: &SelectionParams,
) -> Result<Selection, ViewSelError> {
    if cands.is_empty() {
        return Err(ViewSelError::EmptyCandidates);
    }
    let scores: Vec<Option<usize>> =
        (0..cands.len()).map(|i| (!cands.used[i]).then(|| cache.score(i, tmask))).collect();
    Ok(pick_best(&scores, params.min_gain()))
}

pub(crate) fn pick_best(scores: &[Option<usize>], min_gain: usize) -> Selection {
    let mut best: Option<(usize, usize)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    match best {
        Some((i, s)) if s >= min_gain && s > 0 => Selection::View(i),
        _ => Selection::Done,
    }
}

/// Marks every texel that a view would texture: the bilinear footprint of each
/// visible, non-rejected pixel.
pub fn simulate_view(mesh: &TriMesh, pose: &CameraPose, gates: &GateParams, tex: &mut UvTexture) {
    let geo = render_view(mesh, pose, gates);
    let (w, h) = geo.nocull.dims();
    let black = ColorImage::filled(w, h, [0.0; 3]);
    splat(&black, &geo.nocull, &geo.reject, tex).expect("buffers share the view resolution");
}

/// Greedy order over an explicit candidate set, starting from `tex`.
pub fn selection_order_from(
    mesh: &TriMesh,
    params: &SelectionParams,
    cands: &mut CandidateSet,
    tex: &mut UvTexture,
    max_views: usize,
) -> Result<Vec<usize>, ViewSelError> {
    let mut order = Vec::new();
    if max_views == 0 {
        return Ok(order);
    }
    if cands.is_empty() {
        return Err(ViewSelError::EmptyCandidates);
    }
    let cache = VisibilityCache::build(mesh, cands, params.image_size, tex.resolution());
    while order.len() < max_views {
        match select_next_cached(&cache, &tex.mask(), cands, params)? {
            Selection::Done => break,
            Selection::View(i) => {
                cands.mark_used(i);
                order.push(i);
                simulate_view(mesh, &cands.poses[i].with_image_size(params.image_size), &params.gates, tex);
            }
        }
    }
    Ok(order)
}

/// Greedy order over an `n_candidates` Fibonacci lattice, starting from an empty texture.
pub fn selection_order(
    mesh: &TriMesh,
    params: &SelectionParams,
    n_candidates: usize,
    max_views: usize,
) -> Result<Vec<usize>, ViewSelError> {
    if max_views == 0 {
        return Ok(Vec::new());
    }
    let poses = fibonacci_lattice(n_candidates, params.radius)?
        .into_iter()
        .map(|p| p.with_image_size(params.image_size))
        .collect();
    let mut cands = CandidateSet::new(poses);
    let mut tex = UvTexture::new(params.texture_size);
    selection_order_from(mesh, params, &mut cands, &mut tex, max_views)
}
