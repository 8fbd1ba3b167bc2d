use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{PipelineObserver, StageRecord, ViewTrace};
use crate::backproject::CommittedTexture;
use crate::imaging::save_png;
use crate::mesh::{mtl_string, to_obj_string, TriMesh};

pub const TEXTURE_FILE: &str = "texture.png";
pub const MESH_FILE: &str = "mesh.obj";
pub const MATERIAL_FILE: &str = "mesh.mtl";
pub const STAGES_FILE: &str = "stages.json";

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::other(e.to_string())
}

pub fn write_texture_png(tex: &CommittedTexture, path: impl AsRef<Path>) -> io::Result<()> {
    save_png(tex.to_rgb8(), path).map_err(io_err)
}

/// Writes `texture.png`, `mesh.obj` + `mesh.mtl` referencing it, and
/// `stages.json` into `dir`.
pub fn write_outputs(dir: &Path, mesh: &TriMesh, tex: &CommittedTexture, stages: &[StageRecord]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_texture_png(tex, dir.join(TEXTURE_FILE))?;
    fs::write(dir.join(MESH_FILE), to_obj_string(mesh, Some((MATERIAL_FILE, "baked"))))?;
    fs::write(dir.join(MATERIAL_FILE), mtl_string("baked", TEXTURE_FILE))?;
    fs::write(dir.join(STAGES_FILE), serde_json::to_string_pretty(stages).map_err(io_err)?)?;
    Ok(())
}

/// Observer that writes per-view images and records under
/// `{root}/stage{k}/stage{k}_{label}_{kind}.png`.
pub struct IntermediateDumper {
    root: PathBuf,
}

impl IntermediateDumper {
    pub const KINDS: [&'static str; 6] = ["depth", "mask", "normal", "init", "rgb", "reject"];

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage_dir(&self, stage: usize) -> PathBuf {
        self.root.join(format!("stage{stage}"))
    }
}

impl PipelineObserver for IntermediateDumper {
    fn on_view(&mut self, trace: &ViewTrace<'_>) -> io::Result<()> {
        let rec = trace.record;
        let dir = self.stage_dir(rec.stage);
        fs::create_dir_all(&dir)?;
        let name = |kind: &str| dir.join(format!("stage{}_{}_{kind}.png", rec.stage, rec.label.slug()));
        let geo = trace.geometry;
        save_png(geo.depth_culled.normalized().to_gray8(), name("depth")).map_err(io_err)?;
        save_png(trace.inpaint_mask.to_gray8(), name("mask")).map_err(io_err)?;
        save_png(geo.normals.to_color_image().to_rgb8(), name("normal")).map_err(io_err)?;
        save_png(trace.init_render.to_rgb8(), name("init")).map_err(io_err)?;
        save_png(trace.generated.to_rgb8(), name("rgb")).map_err(io_err)?;
        save_png(geo.reject.to_gray8(), name("reject")).map_err(io_err)?;
        let json = serde_json::to_string_pretty(rec).map_err(io_err)?;
        fs::write(dir.join(format!("stage{}_{}_record.json", rec.stage, rec.label.slug())), json)
    }
}
