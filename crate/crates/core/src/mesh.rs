//! UV-mapped triangle meshes: Wavefront OBJ loading, validation and normalization.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

/// Faces whose 3D area falls below this are dropped on construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Slack allowed on UV components before a coordinate counts as outside `[0, 1]`.
const UV_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read mesh: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face on line {line} has no texture coordinate indices")]
    MissingUvs { line: usize },
    #[error("texture coordinate {index} = ({u}, {v}) lies outside [0, 1]")]
    UvOutOfRange { index: usize, u: f64, v: f64 },
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("mesh has no usable faces")]
    EmptyMesh,
}

/// Indexed triangle mesh with per-corner UV coordinates.
#[derive(Clone, Debug)]
pub struct TriMesh {
    positions: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    uv_corners: Vec<[Vector2<f64>; 3]>,
    face_normals: Vec<Vector3<f64>>,
    dropped_degenerate: usize,
}

impl TriMesh {
    /// Builds a mesh, dropping faces with (near) zero 3D area.
    ///
    /// UV components are clamped into `[0, 1]` when they overshoot by less than 1e-6.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        faces: Vec<[u32; 3]>,
        uv_corners: Vec<[Vector2<f64>; 3]>,
    ) -> Result<Self, MeshError> {
        assert_eq!(faces.len(), uv_corners.len(), "one UV triple per face");
        let count = positions.len();
        let mut kept_faces = Vec::with_capacity(faces.len());
        let mut kept_uvs = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut dropped = 0;

        for (fi, (face, uvs)) in faces.into_iter().zip(uv_corners).enumerate() {
            for &index in &face {
                if index as usize >= count {
                    return Err(MeshError::IndexOutOfRange { face: fi, index: index as usize, count });
                }
            }
            let mut clamped = uvs;
            for (k, uv) in clamped.iter_mut().enumerate() {
                for c in 0..2 {
                    if !(-UV_SLACK..=1.0 + UV_SLACK).contains(&uv[c]) || uv[c].is_nan() {
                        return Err(MeshError::UvOutOfRange { index: fi * 3 + k, u: uvs[k].x, v: uvs[k].y });
                    }
                    uv[c] = uv[c].clamp(0.0, 1.0);
                }
            }
            let [a, b, c] = face.map(|i| positions[i as usize]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            if !(area > DEGENERATE_AREA) {
                dropped += 1;
                continue;
            }
            kept_faces.push(face);
            kept_uvs.push(clamped);
            normals.push(cross.normalize());
        }

        if kept_faces.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate faces");
        }
        Ok(Self {
            positions,
            faces: kept_faces,
            uv_corners: kept_uvs,
            face_normals: normals,
            dropped_degenerate: dropped,
        })
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn uv_corners(&self) -> &[[Vector2<f64>; 3]] {
        &self.uv_corners
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.face_normals
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Number of faces discarded as degenerate when the mesh was built.
    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    /// Corner positions of face `f`.
    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.positions[i as usize])
    }

    /// Returns a copy with every position mapped through `map`.
    pub fn map_positions(&self, map: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        let positions: Vec<_> = self.positions.iter().map(map).collect();
        let face_normals = self
            .faces
            .iter()
            .map(|face| {
                let [a, b, c] = face.map(|i| positions[i as usize]);
                (b - a).cross(&(c - a)).normalize()
            })
            .collect();
        Self {
            positions,
            faces: self.faces.clone(),
            uv_corners: self.uv_corners.clone(),
            face_normals,
            dropped_degenerate: self.dropped_degenerate,
        }
    }
}

/// Translation and uniform scale that map a mesh into the origin-centered unit ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshNormalization {
    pub center: Vector3<f64>,
    pub scale: f64,
}

impl MeshNormalization {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) * self.scale
    }
}

/// Centers the mesh on its bounding-box center and scales it so the farthest
/// vertex sits at distance 1 from the origin.
pub fn normalize(mesh: &TriMesh) -> Result<(TriMesh, MeshNormalization), MeshError> {
    // Only vertices referenced by faces count; stray `v` records do not move the frame.
    let mut used = vec![false; mesh.positions.len()];
    for face in &mesh.faces {
        for &i in face {
            used[i as usize] = true;
        }
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (p, _) in mesh.positions.iter().zip(&used).filter(|(_, &u)| u) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if !lo.x.is_finite() {
        return Err(MeshError::EmptyMesh);
    }
    let center = (lo + hi) * 0.5;
    let radius = mesh
        .positions
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(p, _)| (p - center).norm())
        .fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(MeshError::EmptyMesh);
    }
    let norm = MeshNormalization { center, scale: 1.0 / radius };
    Ok((mesh.map_positions(|p| norm.apply(p)), norm))
}

/// Reads a Wavefront OBJ file. Polygons are fan-triangulated and every face
/// corner must carry a `vt` reference.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

fn parse_error(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

fn parse_floats<const N: usize>(line: usize, parts: &[&str], min: usize) -> Result<[f64; N], MeshError> {
    if parts.len() < min {
        return Err(parse_error(line, format!("expected at least {min} components")));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .parse()
            .map_err(|_| parse_error(line, format!("invalid number `{part}`")))?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn resolve_index(line: usize, raw: &str, count: usize) -> Result<usize, MeshError> {
    let value: i64 = raw
        .parse()
        .map_err(|_| parse_error(line, format!("invalid index `{raw}`")))?;
    let resolved = match value {
        0 => return Err(parse_error(line, "index 0 is not valid in OBJ")),
        v if v > 0 => v - 1,
        v => count as i64 + v,
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(parse_error(line, format!("index {value} out of range ({count} entries)")));
    }
    Ok(resolved as usize)
}

/// Parses OBJ source text. See [`load_mesh`].
pub fn parse_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut positions = Vec::new();
    let mut texcoords: Vec<Vector2<f64>> = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match keyword {
            "v" => {
                let [x, y, z] = parse_floats::<3>(line_no, &rest, 3)?;
                positions.push(Vector3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(line_no, &rest, 1)?;
                texcoords.push(Vector2::new(u, v));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(parse_error(line_no, "face needs at least 3 corners"));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for corner in &rest {
                    let mut fields = corner.split('/');
                    let v = fields.next().unwrap_or("");
                    let vt = fields.next().unwrap_or("");
                    if vt.is_empty() {
                        return Err(MeshError::MissingUvs { line: line_no });
                    }
                    let vi = resolve_index(line_no, v, positions.len())?;
                    let ti = resolve_index(line_no, vt, texcoords.len())?;
                    corners.push((vi as u32, texcoords[ti]));
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    faces.push(tri.map(|c| c.0));
                    uvs.push(tri.map(|c| c.1));
                }
            }
            // Normals, groups, materials and smoothing are irrelevant here.
            "vn" | "vp" | "g" | "o" | "s" | "usemtl" | "mtllib" | "l" | "p" => {}
            other => log::debug!("ignoring OBJ record `{other}` on line {line_no}"),
        }
    }
    if faces.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    TriMesh::new(positions, faces, uvs)
}

/// Serializes the mesh as OBJ text with one `vt` per face corner. When
/// `material` is given, a `mtllib`/`usemtl` pair referencing it is emitted.
pub fn to_obj_string(mesh: &TriMesh, material: Option<(&str, &str)>) -> String {
    let mut out = String::new();
    if let Some((lib, name)) = material {
        let _ = writeln!(out, "mtllib {lib}");
        let _ = writeln!(out, "usemtl {name}");
    }
    for p in &mesh.positions {
        let _ = writeln!(out, "v {:.9} {:.9} {:.9}", p.x, p.y, p.z);
    }
    for uvs in &mesh.uv_corners {
        for uv in uvs {
            let _ = writeln!(out, "vt {:.9} {:.9}", uv.x, uv.y);
        }
    }
    for (fi, face) in mesh.faces.iter().enumerate() {
        let t = fi * 3 + 1;
        let _ = writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            face[0] + 1,
            t,
            face[1] + 1,
            t + 1,
            face[2] + 1,
            t + 2
        );
    }
    out
}

/// MTL text for a single diffuse-textured material.
pub fn mtl_string(name: &str, texture_file: &str) -> String {
    format!("newmtl {name}\nKa 1.0 1.0 1.0\nKd 1.0 1.0 1.0\nKs 0.0 0.0 0.0\nillum 1\nmap_Kd {texture_file}\n")
}
