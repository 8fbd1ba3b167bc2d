//! Orthographic camera poses on a sphere around the normalized mesh.
//!
//! World convention: the mesh front faces +Z and up is +Y. A pose at azimuth 0,
//! elevation 0 sits on the +Z axis looking toward -Z. Azimuth grows toward +X.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_8, PI, TAU};
use std::fmt;

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RADIUS: f64 = 2.0;
pub const DEFAULT_HALF_EXTENT: f64 = 1.1;
pub const DEFAULT_IMAGE_SIZE: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("candidate count must be at least 1")]
    InvalidCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Radians, wrapped to `(-π, π]`.
    pub azimuth: f64,
    /// Radians in `[-π/2, π/2]`.
    pub elevation: f64,
    pub radius: f64,
    pub ortho_half_extent: f64,
    pub image_size: usize,
}

/// Orthonormal camera frame. `forward` points from the camera toward the origin.
#[derive(Clone, Copy, Debug)]
pub struct CameraBasis {
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    pub forward: Vector3<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI { w - TAU } else { w }
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64, radius: f64) -> Self {
        assert!(radius > 0.0, "camera radius must be positive");
        Self {
            azimuth: wrap_angle(azimuth),
            elevation: elevation.clamp(-FRAC_PI_2, FRAC_PI_2),
            radius,
            ortho_half_extent: DEFAULT_HALF_EXTENT,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }

    /// Pose whose camera sits along `direction` (need not be normalized).
    pub fn from_direction(direction: Vector3<f64>, radius: f64) -> Self {
        let d = direction.normalize();
        let elevation = d.y.clamp(-1.0, 1.0).asin();
        let azimuth = d.x.atan2(d.z);
        Self::new(azimuth, elevation, radius)
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        assert!(size > 0);
        self.image_size = size;
        self
    }

    pub fn with_half_extent(mut self, half_extent: f64) -> Self {
        assert!(half_extent >= 1.0, "the unit mesh must fit the frustum");
        self.ortho_half_extent = half_extent;
        self
    }

    /// Unit vector from the origin toward the camera.
    pub fn direction(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(ce * sa, se, ce * ca)
    }

    pub fn eye(&self) -> Vector3<f64> {
        self.direction() * self.radius
    }

    pub fn basis(&self) -> CameraBasis {
        let d = self.direction();
        let forward = -d;
        let horizontal = Vector3::new(self.azimuth.sin(), 0.0, self.azimuth.cos());
        // At the poles +Y is parallel to the view axis; use the azimuth direction
        // with the sign that matches the limit approaching the pole.
        let up_hint = if self.elevation.cos() < 1e-9 {
            -horizontal * self.elevation.signum()
        } else {
            Vector3::y()
        };
        let right = forward.cross(&up_hint).normalize();
        let up = right.cross(&forward);
        CameraBasis { right, up, forward }
    }

    /// Near plane depth: the unit ball starts at `radius - 1`.
    pub fn near(&self) -> f64 {
        (self.radius - 1.0).max(0.0)
    }

    pub fn far(&self) -> f64 {
        self.radius + 1.0
    }

    /// World point to view space: `(right, up, depth)` with depth measured along
    /// the forward axis from the camera position.
    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let b = self.basis();
        let rel = p - self.eye();
        Vector3::new(rel.dot(&b.right), rel.dot(&b.up), rel.dot(&b.forward))
    }

    /// Orthographic world-to-clip transform. Clip x and y span `[-1, 1]` over the
    /// frustum half extent; clip z maps near to 0 and far to 1.
    pub fn view_transform(&self) -> Matrix4<f64> {
        let b = self.basis();
        let eye = self.eye();
        let view = Matrix4::new(
            b.right.x, b.right.y, b.right.z, -b.right.dot(&eye),
            b.up.x, b.up.y, b.up.z, -b.up.dot(&eye),
            b.forward.x, b.forward.y, b.forward.z, -b.forward.dot(&eye),
            0.0, 0.0, 0.0, 1.0,
        );
        let (near, far) = (self.near(), self.far());
        let s = 1.0 / self.ortho_half_extent;
        let proj = Matrix4::new(
            s, 0.0, 0.0, 0.0,
            0.0, s, 0.0, 0.0,
            0.0, 0.0, 1.0 / (far - near), -near / (far - near),
            0.0, 0.0, 0.0, 1.0,
        );
        proj * view
    }

    /// Clip coordinates of a world point (see [`CameraPose::view_transform`]).
    pub fn to_clip(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = self.view_transform() * Vector4::new(p.x, p.y, p.z, 1.0);
        h.xyz()
    }

    pub fn label(&self) -> ViewLabel {
        view_label(self)
    }
}

/// Evenly spread poses on the sphere of the given radius, following the golden-ratio spiral.
pub fn fibonacci_lattice(n: usize, radius: f64) -> Result<Vec<CameraPose>, CameraError> {
    if n == 0 {
        return Err(CameraError::InvalidCount);
    }
    assert!(radius > 0.0, "camera radius must be positive");
    let inv_phi = 2.0 / (1.0 + 5f64.sqrt());
    Ok((0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let ring = (1.0 - z * z).max(0.0).sqrt();
            let angle = TAU * k as f64 * inv_phi;
            let d = Vector3::new(angle.cos() * ring, z, angle.sin() * ring);
            CameraPose::from_direction(d, radius)
        })
        .collect())
}

/// The stage-one pair: looking at the mesh front (from +Z) and back (from -Z).
pub fn front_back_pair(radius: f64) -> (CameraPose, CameraPose) {
    (CameraPose::new(0.0, 0.0, radius), CameraPose::new(PI, 0.0, radius))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewLabel {
    Front,
    Back,
    LeftSide,
    RightSide,
    Top,
    Bottom,
    Side,
}

impl ViewLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViewLabel::Front => "front",
            ViewLabel::Back => "back",
            ViewLabel::LeftSide => "left side",
            ViewLabel::RightSide => "right side",
            ViewLabel::Top => "top",
            ViewLabel::Bottom => "bottom",
            ViewLabel::Side => "side",
        }
    }

    /// Form suitable for file names.
    pub fn slug(&self) -> &'static str {
        match self {
            ViewLabel::LeftSide => "left_side",
            ViewLabel::RightSide => "right_side",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

pub fn view_label(pose: &CameraPose) -> ViewLabel {
    let (az, el) = (pose.azimuth, pose.elevation);
    if el > FRAC_PI_3 {
        return ViewLabel::Top;
    }
    if el < -FRAC_PI_3 {
        return ViewLabel::Bottom;
    }
    if el.abs() <= FRAC_PI_4 {
        if angular_distance(az, 0.0) <= FRAC_PI_8 {
            return ViewLabel::Front;
        }
        if angular_distance(az, PI) <= FRAC_PI_8 {
            return ViewLabel::Back;
        }
        if angular_distance(az, FRAC_PI_2) <= FRAC_PI_4 {
            return ViewLabel::RightSide;
        }
        if angular_distance(az, -FRAC_PI_2) <= FRAC_PI_4 {
            return ViewLabel::LeftSide;
        }
    }
    ViewLabel::Side
}
