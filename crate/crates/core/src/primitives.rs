//! Procedural UV-mapped meshes used as fixtures by tests, benches and the CLI.
//!
//! All generators emit outward-facing (counter-clockwise seen from outside) triangles.

use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};

use crate::mesh::TriMesh;

struct Builder {
    positions: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    uvs: Vec<[Vector2<f64>; 3]>,
}

impl Builder {
    fn new() -> Self {
        Self { positions: Vec::new(), faces: Vec::new(), uvs: Vec::new() }
    }

    fn vertex(&mut self, p: Vector3<f64>) -> u32 {
        self.positions.push(p);
        (self.positions.len() - 1) as u32
    }

    /// Adds a triangle, flipping its winding if its normal disagrees with `outward`.
    fn tri(&mut self, idx: [u32; 3], uv: [Vector2<f64>; 3], outward: Vector3<f64>) {
        let [a, b, c] = idx.map(|i| self.positions[i as usize]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&outward) < 0.0 {
            self.faces.push([idx[0], idx[2], idx[1]]);
            self.uvs.push([uv[0], uv[2], uv[1]]);
        } else {
            self.faces.push(idx);
            self.uvs.push(uv);
        }
    }

    fn build(self) -> TriMesh {
        TriMesh::new(self.positions, self.faces, self.uvs).expect("fixture meshes are valid")
    }
}

fn uv(u: f64, v: f64) -> Vector2<f64> {
    Vector2::new(u, v)
}

/// Unit sphere with a latitude/longitude UV layout. The `u = 0` seam faces -Z.
pub fn uv_sphere(segments: usize, rings: usize) -> TriMesh {
    assert!(segments >= 3 && rings >= 2);
    let mut b = Builder::new();
    let point = |i: usize, j: usize| {
        let theta = PI * i as f64 / rings as f64;
        let phi = TAU * j as f64 / segments as f64 + PI;
        Vector3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos())
    };
    let mut grid = vec![vec![0u32; segments + 1]; rings + 1];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = b.vertex(point(i, j));
        }
    }
    let tex = |i: usize, j: usize| uv(j as f64 / segments as f64, 1.0 - i as f64 / rings as f64);
    for i in 0..rings {
        for j in 0..segments {
            let (p00, p10, p11, p01) = (grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]);
            let mid = (point(i, j) + point(i + 1, j + 1)) * 0.5;
            if i != 0 {
                b.tri([p00, p10, p01], [tex(i, j), tex(i + 1, j), tex(i, j + 1)], mid);
            }
            if i != rings - 1 {
                b.tri([p01, p10, p11], [tex(i, j + 1), tex(i + 1, j), tex(i + 1, j + 1)], mid);
            }
        }
    }
    b.build()
}

/// Axis-aligned cube with corners at ±1 and one UV square per face in a 3×2 atlas.
pub fn cube() -> TriMesh {
    let mut b = Builder::new();
    // (outward normal, in-face u axis, in-face v axis)
    let sides: [(Vector3<f64>, Vector3<f64>, Vector3<f64>); 6] = [
        (Vector3::z(), Vector3::x(), Vector3::y()),
        (-Vector3::z(), -Vector3::x(), Vector3::y()),
        (Vector3::x(), -Vector3::z(), Vector3::y()),
        (-Vector3::x(), Vector3::z(), Vector3::y()),
        (Vector3::y(), Vector3::x(), -Vector3::z()),
        (-Vector3::y(), Vector3::x(), Vector3::z()),
    ];
    let gutter = 0.02;
    for (k, (n, du, dv)) in sides.into_iter().enumerate() {
        let (col, row) = ((k % 3) as f64, (k / 3) as f64);
        let (u0, v0) = (col / 3.0 + gutter, row / 2.0 + gutter);
        let (su, sv) = (1.0 / 3.0 - 2.0 * gutter, 0.5 - 2.0 * gutter);
        let corner = |a: f64, c: f64| n + du * a + dv * c;
        let idx = [
            b.vertex(corner(-1.0, -1.0)),
            b.vertex(corner(1.0, -1.0)),
            b.vertex(corner(1.0, 1.0)),
            b.vertex(corner(-1.0, 1.0)),
        ];
        let t = [uv(u0, v0), uv(u0 + su, v0), uv(u0 + su, v0 + sv), uv(u0, v0 + sv)];
        b.tri([idx[0], idx[1], idx[2]], [t[0], t[1], t[2]], n);
        b.tri([idx[0], idx[2], idx[3]], [t[0], t[2], t[3]], n);
    }
    b.build()
}

/// Torus around the Y axis with the given ring and tube radii.
pub fn torus(major_segments: usize, minor_segments: usize, ring_radius: f64, tube_radius: f64) -> TriMesh {
    let mut b = Builder::new();
    let center = |i: usize| {
        let theta = TAU * i as f64 / major_segments as f64;
        Vector3::new(theta.cos(), 0.0, theta.sin()) * ring_radius
    };
    let point = |i: usize, j: usize| {
        let theta = TAU * i as f64 / major_segments as f64;
        let phi = TAU * j as f64 / minor_segments as f64;
        let r = ring_radius + tube_radius * phi.cos();
        Vector3::new(r * theta.cos(), tube_radius * phi.sin(), r * theta.sin())
    };
    let mut grid = vec![vec![0u32; minor_segments + 1]; major_segments + 1];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = b.vertex(point(i, j));
        }
    }
    let tex = |i: usize, j: usize| uv(i as f64 / major_segments as f64, j as f64 / minor_segments as f64);
    for i in 0..major_segments {
        for j in 0..minor_segments {
            let mid = (point(i, j) + point(i + 1, j + 1)) * 0.5;
            let out = mid - (center(i) + center(i + 1)) * 0.5;
            let q = [grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]];
            let t = [tex(i, j), tex(i + 1, j), tex(i + 1, j + 1), tex(i, j + 1)];
            b.tri([q[0], q[1], q[2]], [t[0], t[1], t[2]], out);
            b.tri([q[0], q[2], q[3]], [t[0], t[2], t[3]], out);
        }
    }
    b.build()
}

/// Tube of radius 1 around the Y axis, spanning `y ∈ [-half_height, half_height]`,
/// open at both ends. Normals point away from the axis.
pub fn open_cylinder(segments: usize, stacks: usize, half_height: f64) -> TriMesh {
    let mut b = Builder::new();
    let point = |i: usize, j: usize| {
        let theta = TAU * i as f64 / segments as f64;
        let y = -half_height + 2.0 * half_height * j as f64 / stacks as f64;
        Vector3::new(theta.cos(), y, theta.sin())
    };
    let mut grid = vec![vec![0u32; stacks + 1]; segments + 1];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = b.vertex(point(i, j));
        }
    }
    let tex = |i: usize, j: usize| uv(i as f64 / segments as f64, j as f64 / stacks as f64);
    for i in 0..segments {
        for j in 0..stacks {
            let mid = (point(i, j) + point(i + 1, j + 1)) * 0.5;
            let out = Vector3::new(mid.x, 0.0, mid.z);
            let q = [grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]];
            let t = [tex(i, j), tex(i + 1, j), tex(i + 1, j + 1), tex(i, j + 1)];
            b.tri([q[0], q[1], q[2]], [t[0], t[1], t[2]], out);
            b.tri([q[0], q[2], q[3]], [t[0], t[2], t[3]], out);
        }
    }
    b.build()
}

/// Axis-aligned square in the `z = depth` plane facing +Z, spanning `[-half, half]²`,
/// with UVs covering the full unit square.
pub fn quad(half: f64, depth: f64) -> TriMesh {
    let mut b = Builder::new();
    let idx = [
        b.vertex(Vector3::new(-half, -half, depth)),
        b.vertex(Vector3::new(half, -half, depth)),
        b.vertex(Vector3::new(half, half, depth)),
        b.vertex(Vector3::new(-half, half, depth)),
    ];
    let t = [uv(0.0, 0.0), uv(1.0, 0.0), uv(1.0, 1.0), uv(0.0, 1.0)];
    b.tri([idx[0], idx[1], idx[2]], [t[0], t[1], t[2]], Vector3::z());
    b.tri([idx[0], idx[2], idx[3]], [t[0], t[2], t[3]], Vector3::z());
    b.build()
}
