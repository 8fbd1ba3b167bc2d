//! Texture synthesis for UV-mapped triangle meshes.
//!
//! A texture is built view by view: each camera's depth (plus the already
//! painted texture) conditions an image generator, and the generated image is
//! splatted back into UV space. Cameras after the initial front/back pair are
//! chosen greedily by how much untextured surface they see.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backproject;
pub mod camera;
pub mod generator;
pub mod imaging;
pub mod mesh;
pub mod pipeline;
pub mod primitives;
pub mod raster;
pub mod viewsel;

pub use backproject::{CommittedTexture, TextureMask, UvTexture};
pub use camera::{CameraPose, ViewLabel};
pub use generator::{GeneratorRequest, GeneratorResponse, ImageGenerator};
pub use mesh::{MeshNormalization, TriMesh};
pub use pipeline::{PipelineConfig, StageRecord};
