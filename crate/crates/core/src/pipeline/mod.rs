//! The texturing loop: a front/back grid first, then greedily selected views,
//! each generated, gated and splatted into the shared texture, followed by UV
//! fill. Enhancement reruns the same loop conditioned on an existing texture.

mod crop;
mod export;

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crop::{crop_and_resize, crop_box, CropError, CropRecord, ViewImages, CROP_MARGIN};
pub use export::{write_outputs, write_texture_png, IntermediateDumper};

use crate::backproject::{chart_mask, splat_traced, uv_coverage, uv_fill, CommittedTexture, TextureMask, UvTexture};
use crate::camera::{fibonacci_lattice, front_back_pair, CameraError, CameraPose, ViewLabel};
use crate::generator::{make_grid, GenerationParams, GeneratorError, GeneratorRequest, ImageGenerator};
use crate::imaging::{ColorImage, MaskImage};
use crate::mesh::{normalize, MeshError, MeshNormalization, TriMesh};
use crate::raster::{render_rgb, render_texture_mask, render_view, GateParams, ViewGeometry, UNTEXTURED_GRAY};
use crate::viewsel::{select_next_cached, CandidateSet, Selection, SelectionParams, ViewSelError, VisibilityCache};

/// Conditioning weights for one kind of stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    pub w_depth: f64,
    pub w_inpaint: f64,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub texture_size: usize,
    /// Resolution of every render; the object crop is resized to `gen_size`.
    pub render_size: usize,
    pub gen_size: usize,
    /// Total views including the front/back pair.
    pub n_views: usize,
    pub n_candidates: usize,
    pub radius: f64,
    pub half_extent: f64,
    pub tau_keep: f64,
    pub depth_diff_eps: f64,
    pub coverage_stop: f64,
    pub seed: u64,
    pub first_stage: StageWeights,
    pub later_stages: StageWeights,
    pub min_gain_fraction: f64,
    /// Scoring render size for view selection; `None` uses `render_size`.
    pub score_size: Option<usize>,
    pub frontal_filter: bool,
    pub internal_mask: bool,
    /// Dilation round cap; `None` uses `texture_size`.
    pub fill_rounds: Option<usize>,
    /// Color of texels outside every UV triangle.
    pub fill_color: [f64; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            texture_size: 1024,
            render_size: 1024,
            gen_size: 512,
            n_views: 6,
            n_candidates: 32,
            radius: crate::camera::DEFAULT_RADIUS,
            half_extent: crate::camera::DEFAULT_HALF_EXTENT,
            tau_keep: 0.3,
            depth_diff_eps: 1e-3,
            coverage_stop: 0.98,
            seed: 0,
            first_stage: StageWeights { w_depth: 1.0, w_inpaint: 0.0, strength: 1.0 },
            later_stages: StageWeights { w_depth: 1.0, w_inpaint: 1.0, strength: 1.0 },
            min_gain_fraction: 0.005,
            score_size: None,
            frontal_filter: true,
            internal_mask: true,
            fill_rounds: None,
            fill_color: [UNTEXTURED_GRAY; 3],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.texture_size == 0 || self.render_size == 0 || self.gen_size == 0 {
            return bad("sizes must be positive".into());
        }
        if self.gen_size > self.render_size {
            return bad(format!("gen_size {} exceeds render_size {}", self.gen_size, self.render_size));
        }
        if self.n_views < 2 {
            return bad(format!("n_views must be at least 2 (front and back), got {}", self.n_views));
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be at least 1".into());
        }
        if !(self.radius > 1.0) || !(self.half_extent > 0.0) {
            return bad("camera radius must exceed 1 and the half extent must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tau_keep) {
            return bad(format!("tau_keep {} outside [0, 1]", self.tau_keep));
        }
        if !(self.depth_diff_eps >= 0.0) {
            return bad("depth_diff_eps must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.coverage_stop) {
            return bad(format!("coverage_stop {} outside [0, 1]", self.coverage_stop));
        }
        for (name, w) in [("first stage", self.first_stage), ("later stages", self.later_stages)] {
            if !(0.0..=2.0).contains(&w.w_depth) || !(0.0..=2.0).contains(&w.w_inpaint) || !(0.0..=1.0).contains(&w.strength) {
                return bad(format!("{name} weights out of range: {w:?}"));
            }
        }
        if self.score_size == Some(0) {
            return bad("score_size must be positive".into());
        }
        Ok(())
    }

    pub fn gates(&self) -> GateParams {
        GateParams {
            tau_keep: self.tau_keep,
            depth_eps: self.depth_diff_eps,
            frontal_filter: self.frontal_filter,
            internal_mask: self.internal_mask,
        }
    }

    pub fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            image_size: self.score_size.unwrap_or(self.render_size),
            min_gain_fraction: self.min_gain_fraction,
            texture_size: self.texture_size,
            radius: self.radius,
            gates: self.gates(),
        }
    }

    fn pose(&self, pose: CameraPose) -> CameraPose {
        pose.with_image_size(self.render_size).with_half_extent(self.half_extent)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    ViewSelection(#[from] ViewSelError),
    #[error("input texture is {actual}x{actual}, expected {expected}x{expected}")]
    TextureSize { expected: usize, actual: usize },
    #[error("enhancement strength {0} outside [0, 1]")]
    Strength(f64),
    #[error("stage {stage}: {source}")]
    Generator {
        stage: usize,
        source: GeneratorError,
        /// Texture committed from everything splatted before the failure.
        partial: Box<CommittedTexture>,
    },
    #[error("writing intermediates: {0}")]
    Io(#[from] io::Error),
}

/// Wall time per phase, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub rasterize: f64,
    pub select: f64,
    pub generate: f64,
    pub splat: f64,
    pub uv_fill: f64,
    pub total: f64,
}

impl PhaseTimings {
    fn add(&mut self, other: &PhaseTimings) {
        self.rasterize += other.rasterize;
        self.select += other.select;
        self.generate += other.generate;
        self.splat += other.splat;
        self.uv_fill += other.uv_fill;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// 1 for the front/back pair, then 2, 3, ... for selected views.
    pub stage: usize,
    pub pose: CameraPose,
    pub label: ViewLabel,
    pub prompt: String,
    pub seed: u64,
    pub pre_coverage: f64,
    pub post_coverage: f64,
    /// Foreground pixels rejected by the frontal filter.
    pub rejected_frontal: usize,
    /// Foreground pixels rejected by the internal-face mask.
    pub rejected_internal: usize,
    pub contributing_pixels: usize,
    pub crop: CropRecord,
    pub elapsed: PhaseTimings,
}

/// One texel deposit made while splatting a view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deposit {
    pub pixel: usize,
    pub texel: usize,
    pub weight: f64,
}

/// Everything produced for one view, handed to observers after its splat.
pub struct ViewTrace<'a> {
    pub record: &'a StageRecord,
    pub geometry: &'a ViewGeometry,
    /// Generator-resolution request for this view (one slot of the stage-1 grid).
    pub request: &'a GeneratorRequest,
    /// Render-resolution images.
    pub init_render: &'a ColorImage,
    pub inpaint_mask: &'a MaskImage,
    pub generated: &'a ColorImage,
}

pub trait PipelineObserver {
    /// Opt in to [`PipelineObserver::on_deposits`]; collecting deposits costs memory.
    fn wants_deposits(&self) -> bool {
        false
    }

    fn on_deposits(&mut self, _geometry: &ViewGeometry, _deposits: &[Deposit]) {}

    fn on_view(&mut self, _trace: &ViewTrace<'_>) -> io::Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl PipelineObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct TextureOutcome {
    /// Committed and UV-filled texture.
    pub texture: CommittedTexture,
    /// Committed texture before UV fill.
    pub prefill: CommittedTexture,
    pub stages: Vec<StageRecord>,
    pub prefill_coverage: f64,
    pub final_coverage: f64,
    pub fill_rounds: usize,
    pub timings: PhaseTimings,
    pub normalization: MeshNormalization,
}

/// Textures `mesh` from scratch.
pub fn texture_mesh(
    mesh: &TriMesh,
    prompt: &str,
    cfg: &PipelineConfig,
    gen: &dyn ImageGenerator,
) -> Result<TextureOutcome, PipelineError> {
    texture_mesh_observed(mesh, prompt, cfg, gen, &mut NoObserver)
}

pub fn texture_mesh_observed(
    mesh: &TriMesh,
    prompt: &str,
    cfg: &PipelineConfig,
    gen: &dyn ImageGenerator,
    observer: &mut dyn PipelineObserver,
) -> Result<TextureOutcome, PipelineError> {
    run(mesh, prompt, cfg, gen, Mode::Generate, observer)
}

/// Refines `lq` by regenerating every view from its render at `strength`.
pub fn enhance_texture(
    mesh: &TriMesh,
    lq: &CommittedTexture,
    prompt: &str,
    strength: f64,
    cfg: &PipelineConfig,
    gen: &dyn ImageGenerator,
) -> Result<TextureOutcome, PipelineError> {
    enhance_texture_observed(mesh, lq, prompt, strength, cfg, gen, &mut NoObserver)
}

pub fn enhance_texture_observed(
    mesh: &TriMesh,
    lq: &CommittedTexture,
    prompt: &str,
    strength: f64,
    cfg: &PipelineConfig,
    gen: &dyn ImageGenerator,
    observer: &mut dyn PipelineObserver,
) -> Result<TextureOutcome, PipelineError> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(PipelineError::Strength(strength));
    }
    if lq.resolution() != cfg.texture_size {
        return Err(PipelineError::TextureSize { expected: cfg.texture_size, actual: lq.resolution() });
    }
    run(mesh, prompt, cfg, gen, Mode::Enhance { lq, strength }, observer)
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Generate,
    Enhance { lq: &'a CommittedTexture, strength: f64 },
}

/// A view rendered, masked and cropped, ready for the generator.
struct PreparedView {
    geometry: ViewGeometry,
    label: ViewLabel,
    images: ViewImages,
    crop: CropRecord,
    init_render: MaskedInit,
    rasterize: Duration,
}

struct MaskedInit {
    rgb: ColorImage,
    inpaint: MaskImage,
}

struct Loop<'a> {
    mesh: &'a TriMesh,
    cfg: &'a PipelineConfig,
    gen: &'a dyn ImageGenerator,
    mode: Mode<'a>,
    gates: GateParams,
    chart: TextureMask,
    tex: UvTexture,
    records: Vec<StageRecord>,
    timings: PhaseTimings,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

impl<'a> Loop<'a> {
    fn coverage(&self) -> f64 {
        uv_coverage(&self.tex.mask(), &self.chart)
    }

    fn committed(&self) -> CommittedTexture {
        self.tex.commit(self.cfg.fill_color)
    }

    fn generator_error(&self, stage: usize, source: GeneratorError) -> PipelineError {
        PipelineError::Generator { stage, source, partial: Box::new(self.committed()) }
    }

    /// Renders and crops one view. `None` when the view sees no surface.
    fn prepare(&self, pose: CameraPose, regenerate_all: bool) -> Option<PreparedView> {
        let start = Instant::now();
        let geometry = render_view(self.mesh, &pose, &self.gates);
        let fg = geometry.culled.foreground_mask();
        let (init_source, inpaint) = match self.mode {
            Mode::Enhance { lq, .. } => (lq.clone(), fg.clone()),
            Mode::Generate => {
                let current = self.committed();
                let inpaint = if regenerate_all {
                    fg.clone()
                } else {
                    let keep = render_texture_mask(&geometry.culled, current.mask()).and(&fg);
                    fg.and(&keep.erode().not())
                };
                (current, inpaint)
            }
        };
        let rgb = render_rgb(&geometry.culled, &init_source);
        let images = ViewImages {
            depth: geometry.depth_culled.normalized(),
            inpaint_mask: inpaint.clone(),
            init_rgb: rgb.clone(),
            foreground: fg,
        };
        let (images, crop) = crop_and_resize(&images, self.cfg.gen_size).ok()?;
        Some(PreparedView {
            label: pose.label(),
            geometry,
            images,
            crop,
            init_render: MaskedInit { rgb, inpaint },
            rasterize: start.elapsed(),
        })
    }

    fn params(&self, prompt: String, seed: u64, weights: StageWeights) -> GenerationParams {
        let strength = match self.mode {
            Mode::Enhance { strength, .. } => strength,
            Mode::Generate => weights.strength,
        };
        GenerationParams { prompt, w_depth: weights.w_depth, w_inpaint: weights.w_inpaint, strength, seed }
    }

    /// Uncrops a generated view, gates it and splats it into the texture.
    #[allow(clippy::too_many_arguments)]
    fn absorb(
        &mut self,
        stage: usize,
        view: PreparedView,
        request: &GeneratorRequest,
        generated: &ColorImage,
        generate_time: Duration,
        select_time: Duration,
        observer: &mut dyn PipelineObserver,
    ) -> Result<(), PipelineError> {
        let pre_coverage = self.coverage();
        let start = Instant::now();
        let full = view.crop.uncrop_color(generated, &view.images.foreground);
        let geo = &view.geometry;
        let mut deposits = Vec::new();
        let collect = observer.wants_deposits();
        let stats = splat_traced(&full, &geo.nocull, &geo.reject, &mut self.tex, |pixel, texel, weight| {
            if collect {
                deposits.push(Deposit { pixel, texel, weight });
            }
        })
        .expect("renders share the view resolution");
        let splat_time = start.elapsed();
        if collect {
            observer.on_deposits(geo, &deposits);
        }

        let nocull_fg = geo.nocull.foreground_mask();
        let elapsed = PhaseTimings {
            rasterize: secs(view.rasterize),
            select: secs(select_time),
            generate: secs(generate_time),
            splat: secs(splat_time),
            uv_fill: 0.0,
            total: secs(view.rasterize + select_time + generate_time + splat_time),
        };
        self.timings.rasterize += elapsed.rasterize;
        self.timings.splat += elapsed.splat;
        let record = StageRecord {
            stage,
            pose: geo.pose,
            label: view.label,
            prompt: request.params.prompt.clone(),
            seed: request.params.seed,
            pre_coverage,
            post_coverage: self.coverage(),
            rejected_frontal: geo.frontal_reject.and(&nocull_fg).count(),
            rejected_internal: geo.internal_reject.and(&nocull_fg).count(),
            contributing_pixels: stats.contributing_pixels,
            crop: view.crop,
            elapsed,
        };
        log::info!(
            "stage {stage} ({}): coverage {:.4} -> {:.4}",
            record.label,
            record.pre_coverage,
            record.post_coverage
        );
        observer.on_view(&ViewTrace {
            record: &record,
            geometry: geo,
            request,
            init_render: &view.init_render.rgb,
            inpaint_mask: &view.init_render.inpaint,
            generated: &full,
        })?;
        self.records.push(record);
        Ok(())
    }

    /// Front and back generated together as one grid request.
    fn first_stage(&mut self, prompt: &str, observer: &mut dyn PipelineObserver) -> Result<usize, PipelineError> {
        let (front, back) = front_back_pair(self.cfg.radius);
        let (a, b) = rayon::join(|| self.prepare(self.cfg.pose(front), true), || self.prepare(self.cfg.pose(back), true));
        let views: Vec<PreparedView> = [a, b].into_iter().flatten().collect();
        if views.is_empty() {
            return Ok(0);
        }
        let params = self.params(format!("{prompt}, front and back view"), self.cfg.seed, self.cfg.first_stage);
        let requests: Vec<GeneratorRequest> = views
            .iter()
            .map(|v| GeneratorRequest::new(params.clone(), v.images.depth.clone(), v.images.inpaint_mask.clone(), v.images.init_rgb.clone()))
            .collect();

        let start = Instant::now();
        let outputs = if views.len() == 1 {
            vec![self.gen.generate(&requests[0]).map_err(|e| self.generator_error(1, e))?.rgb]
        } else {
            let depths: Vec<_> = requests.iter().map(|r| r.depth.clone()).collect();
            let masks: Vec<_> = requests.iter().map(|r| r.inpaint_mask.clone()).collect();
            let inits: Vec<_> = requests.iter().map(|r| r.init_rgb.clone()).collect();
            let (grid, layout) = make_grid(&depths, &masks, &inits, params).map_err(|e| self.generator_error(1, e))?;
            let rgb = self.gen.generate(&grid).map_err(|e| self.generator_error(1, e))?.rgb;
            if rgb.dims() != grid.dims() {
                let err = GeneratorError::Protocol(format!("grid response is {:?}, request was {:?}", rgb.dims(), grid.dims()));
                return Err(self.generator_error(1, err));
            }
            layout.split(&rgb)
        };
        let generate_time = start.elapsed();
        self.timings.generate += secs(generate_time);

        let n = views.len();
        for ((view, request), rgb) in views.into_iter().zip(&requests).zip(&outputs) {
            self.absorb(1, view, request, rgb, generate_time, Duration::ZERO, observer)?;
        }
        Ok(n)
    }

    fn later_stages(&mut self, prompt: &str, observer: &mut dyn PipelineObserver) -> Result<(), PipelineError> {
        let poses = fibonacci_lattice(self.cfg.n_candidates, self.cfg.radius)?
            .into_iter()
            .map(|p| self.cfg.pose(p))
            .collect();
        let mut cands = CandidateSet::new(poses);
        let sel = self.cfg.selection_params();
        let mut views = self.records.len();
        let mut stage = 2;
        let mut cache = None;
        while views < self.cfg.n_views {
            if self.coverage() >= self.cfg.coverage_stop {
                log::info!("coverage target reached");
                break;
            }
            let start = Instant::now();
            let cache = cache.get_or_insert_with(|| VisibilityCache::build(self.mesh, &cands, sel.image_size, self.cfg.texture_size));
            let choice = select_next_cached(cache, &self.tex.mask(), &cands, &sel)?;
            let select_time = start.elapsed();
            self.timings.select += secs(select_time);
            let Selection::View(i) = choice else {
                log::info!("no candidate adds enough untextured surface");
                break;
            };
            cands.mark_used(i);
            views += 1;
            let Some(view) = self.prepare(cands.poses()[i], false) else {
                continue;
            };
            let seed = self.cfg.seed.wrapping_add(stage as u64 - 1);
            let params = self.params(format!("{prompt}, {} view", view.label), seed, self.cfg.later_stages);
            let request = GeneratorRequest::new(
                params,
                view.images.depth.clone(),
                view.images.inpaint_mask.clone(),
                view.images.init_rgb.clone(),
            );
            let start = Instant::now();
            let rgb = self.gen.generate(&request).map_err(|e| self.generator_error(stage, e))?.rgb;
            let generate_time = start.elapsed();
            self.timings.generate += secs(generate_time);
            if rgb.dims() != request.dims() {
                let err = GeneratorError::Protocol(format!("response is {:?}, request was {:?}", rgb.dims(), request.dims()));
                return Err(self.generator_error(stage, err));
            }
            self.absorb(stage, view, &request, &rgb, generate_time, select_time, observer)?;
            stage += 1;
        }
        Ok(())
    }
}

fn run(
    mesh: &TriMesh,
    prompt: &str,
    cfg: &PipelineConfig,
    gen: &dyn ImageGenerator,
    mode: Mode<'_>,
    observer: &mut dyn PipelineObserver,
) -> Result<TextureOutcome, PipelineError> {
    cfg.validate()?;
    let started = Instant::now();
    let (normalized, normalization) = normalize(mesh)?;
    let mut state = Loop {
        mesh: &normalized,
        cfg,
        gen,
        mode,
        gates: cfg.gates(),
        chart: chart_mask(&normalized, cfg.texture_size),
        tex: UvTexture::new(cfg.texture_size),
        records: Vec::new(),
        timings: PhaseTimings::default(),
    };
    state.first_stage(prompt, observer)?;
    state.later_stages(prompt, observer)?;

    let prefill = state.committed();
    let prefill_coverage = state.coverage();
    let start = Instant::now();
    let filled = uv_fill(&prefill, &state.chart, cfg.fill_rounds.unwrap_or(cfg.texture_size), cfg.fill_color);
    state.timings.uv_fill = secs(start.elapsed());
    let final_coverage = uv_coverage(filled.texture.mask(), &state.chart);

    let mut timings = PhaseTimings::default();
    timings.add(&state.timings);
    timings.total = secs(started.elapsed());
    Ok(TextureOutcome {
        texture: filled.texture,
        prefill,
        stages: state.records,
        prefill_coverage,
        final_coverage,
        fill_rounds: filled.rounds,
        timings,
        normalization,
    })
}
