use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use texbake::backproject::{chart_mask, CommittedTexture};
use texbake::camera::ViewLabel;
use texbake::generator::{GeneratorError, GeneratorRequest, GeneratorResponse, ImageGenerator, MockGenerator, MockKind};
use texbake::imaging::decode_png;
use texbake::mesh::{load_mesh, normalize, TriMesh};
use texbake::pipeline::{
    enhance_texture, enhance_texture_observed, texture_mesh, texture_mesh_observed, write_outputs, Deposit,
    IntermediateDumper, PipelineConfig, PipelineError, PipelineObserver,
};
use texbake::primitives;
use texbake::raster::ViewGeometry;

fn sphere() -> TriMesh {
    primitives::uv_sphere(96, 48)
}

fn mid() -> PipelineConfig {
    PipelineConfig { texture_size: 512, render_size: 512, gen_size: 256, n_candidates: 24, seed: 11, ..Default::default() }
}

fn within(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
    (0..3).all(|c| (a[c] - b[c]).abs() <= tol)
}

#[test]
fn sphere_reaches_high_coverage_and_fill_completes() {
    let cfg = PipelineConfig { seed: 1, ..Default::default() };
    let mesh = primitives::uv_sphere(128, 64);
    let out = texture_mesh(&mesh, "a soccer ball", &cfg, &MockGenerator::new(MockKind::Flat)).unwrap();
    assert!(out.prefill_coverage >= 0.95, "pre-fill coverage {}", out.prefill_coverage);
    assert_eq!(out.final_coverage, 1.0);
    let (normalized, _) = normalize(&mesh).unwrap();
    let chart = chart_mask(&normalized, cfg.texture_size);
    for (k, &in_chart) in chart.bits().iter().enumerate() {
        if in_chart {
            assert!(out.texture.mask().bits()[k]);
        }
    }
}

#[test]
fn stage_one_is_front_and_back_whatever_the_candidates() {
    let cfg = PipelineConfig { n_candidates: 1, ..mid() };
    let out = texture_mesh(&sphere(), "a ball", &cfg, &MockGenerator::new(MockKind::Flat)).unwrap();
    assert_eq!((out.stages[0].label, out.stages[1].label), (ViewLabel::Front, ViewLabel::Back));
    assert!(out.stages.len() <= 3);
}

/// Checks that every deposit came from a foreground pixel that passed both gates.
#[derive(Default)]
struct GateAudit {
    deposits: usize,
    violations: usize,
}

impl PipelineObserver for GateAudit {
    fn wants_deposits(&self) -> bool {
        true
    }

    fn on_deposits(&mut self, geo: &ViewGeometry, deposits: &[Deposit]) {
        for d in deposits {
            self.deposits += 1;
            let ok = geo.nocull.is_foreground(d.pixel)
                && !geo.frontal_reject.data()[d.pixel]
                && !geo.internal_reject.data()[d.pixel];
            if !ok {
                self.violations += 1;
            }
        }
    }
}

#[test]
fn every_deposit_passes_all_gates() {
    let mut audit = GateAudit::default();
    let mesh = primitives::torus(64, 32, 0.7, 0.3);
    texture_mesh_observed(&mesh, "a ring", &mid(), &MockGenerator::new(MockKind::Checker), &mut audit).unwrap();
    assert!(audit.deposits > 0);
    assert_eq!(audit.violations, 0);
}

#[test]
fn full_strength_enhance_equals_texturing() {
    let cfg = mid();
    let gen = MockGenerator::new(MockKind::Flat);
    let base = texture_mesh(&sphere(), "a ball", &cfg, &gen).unwrap();
    let lq = CommittedTexture::constant(cfg.texture_size, [0.1, 0.9, 0.3]);
    let enhanced = enhance_texture(&sphere(), &lq, "a ball", 1.0, &cfg, &gen).unwrap();
    assert_eq!(enhanced.texture.mask(), base.texture.mask());
    for (a, b) in enhanced.texture.colors().iter().zip(base.texture.colors()) {
        assert!(within(*a, *b, 2.0 / 255.0), "{a:?} vs {b:?}");
    }
}

fn smooth(cfg: &PipelineConfig) -> CommittedTexture {
    let r = cfg.texture_size;
    CommittedTexture::from_colors(
        r,
        (0..r * r)
            .map(|k| {
                let v = ((k / r) as f64 + 0.5) / r as f64;
                [0.3 + 0.4 * v, 0.5, 0.7 - 0.3 * v]
            })
            .collect(),
    )
}

#[test]
fn zero_strength_enhance_reproduces_input() {
    let cfg = mid();
    let lq = smooth(&cfg);
    let out = enhance_texture(&sphere(), &lq, "a ball", 0.0, &cfg, &MockGenerator::new(MockKind::Checker)).unwrap();
    let mut checked = 0;
    for (k, &covered) in out.prefill.mask().bits().iter().enumerate() {
        if covered {
            checked += 1;
            assert!(within(out.prefill.colors()[k], lq.colors()[k], 2.0 / 255.0), "texel {k}");
        }
    }
    assert!(checked > 1000);
}

/// Counts the views that deposited into each texel.
#[derive(Default)]
struct ViewsPerTexel {
    view: usize,
    seen: HashMap<usize, (usize, usize)>,
}

impl PipelineObserver for ViewsPerTexel {
    fn wants_deposits(&self) -> bool {
        true
    }

    fn on_deposits(&mut self, _: &ViewGeometry, deposits: &[Deposit]) {
        self.view += 1;
        for d in deposits {
            let (last_view, count) = self.seen.entry(d.texel).or_insert((0, 0));
            if *last_view != self.view {
                *last_view = self.view;
                *count += 1;
            }
        }
    }
}

#[test]
fn half_strength_enhance_lands_midway() {
    let cfg = mid();
    let lq = smooth(&cfg);
    let gen = MockGenerator::new(MockKind::Flat);
    let mut views = ViewsPerTexel::default();
    let out = enhance_texture_observed(&sphere(), &lq, "a ball", 0.5, &cfg, &gen, &mut views).unwrap();
    let full = enhance_texture(&sphere(), &lq, "a ball", 1.0, &cfg, &gen).unwrap();
    let mut checked = 0;
    for (&texel, &(_, n_views)) in &views.seen {
        if n_views != 1 || !out.prefill.mask().bits()[texel] || !full.prefill.mask().bits()[texel] {
            continue;
        }
        let flat = full.prefill.colors()[texel];
        let input = lq.colors()[texel];
        let mid: [f64; 3] = std::array::from_fn(|c| 0.5 * (flat[c] + input[c]));
        assert!(within(out.prefill.colors()[texel], mid, 2.0 / 255.0), "texel {texel}");
        checked += 1;
    }
    assert!(checked > 100, "{checked}");
}

struct FailAfter {
    ok_calls: usize,
    calls: AtomicUsize,
}

impl ImageGenerator for FailAfter {
    fn id(&self) -> String {
        "fail-after".into()
    }

    fn generate(&self, req: &GeneratorRequest) -> Result<GeneratorResponse, GeneratorError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.ok_calls {
            MockGenerator::new(MockKind::Flat).generate(req)
        } else {
            Err(GeneratorError::Timeout(std::time::Duration::from_secs(1)))
        }
    }
}

#[test]
fn generator_failure_keeps_partial_texture() {
    let gen = FailAfter { ok_calls: 1, calls: AtomicUsize::new(0) };
    match texture_mesh(&sphere(), "a ball", &mid(), &gen) {
        Err(PipelineError::Generator { stage: 2, partial, source }) => {
            assert!(partial.mask().count() > 0);
            assert!(matches!(source, GeneratorError::Timeout(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn dumps_and_exports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { n_views: 3, ..mid() };
    let mesh = sphere();
    let mut dumper = IntermediateDumper::new(dir.path());
    let out = texture_mesh_observed(&mesh, "a ball", &cfg, &MockGenerator::new(MockKind::DepthShade), &mut dumper).unwrap();
    for kind in IntermediateDumper::KINDS {
        assert!(dir.path().join(format!("stage1/stage1_front_{kind}.png")).exists(), "{kind}");
        assert!(dir.path().join(format!("stage1/stage1_back_{kind}.png")).exists(), "{kind}");
    }
    let third = &out.stages[2];
    let slug = third.label.slug();
    assert!(dir.path().join(format!("stage2/stage2_{slug}_rgb.png")).exists());
    assert!(dir.path().join(format!("stage2/stage2_{slug}_record.json")).exists());

    write_outputs(dir.path(), &mesh, &out.texture, &out.stages).unwrap();
    let png = decode_png(&std::fs::read(dir.path().join("texture.png")).unwrap()).unwrap();
    assert_eq!((png.width(), png.height()), (512, 512));
    let reloaded = load_mesh(dir.path().join("mesh.obj")).unwrap();
    assert_eq!(reloaded.face_count(), mesh.face_count());
    let obj = std::fs::read_to_string(dir.path().join("mesh.obj")).unwrap();
    assert!(obj.contains("mtllib mesh.mtl"));
    let mtl = std::fs::read_to_string(dir.path().join("mesh.mtl")).unwrap();
    assert!(mtl.contains("map_Kd texture.png"));
    let stages: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("stages.json")).unwrap()).unwrap();
    assert_eq!(stages.as_array().unwrap().len(), out.stages.len());
}
