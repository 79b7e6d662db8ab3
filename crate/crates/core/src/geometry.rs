//! Shared geometry: LiDAR points, rigid poses, and the equirectangular
//! panorama model.
//!
//! Pixel convention: `u = 0` is azimuth `-π`, `v = 0` is inclination `0`
//! (the camera's `+z` pole). Azimuth is measured from `+x` toward `+y`.
//! Angles are radians everywhere in the library.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclinations closer than this to a pole have no meaningful azimuth.
pub const POLE_EPS: f64 = 1e-6;

/// One LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance intensity in `[0, 255]`.
    pub intensity: f64,
    /// Laser index.
    pub ring: u16,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64, ring: u16) -> Self {
        Self {
            x,
            y,
            z,
            intensity,
            ring,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn with_position(&self, p: &Vector3<f64>) -> Self {
        Self {
            x: p.x,
            y: p.y,
            z: p.z,
            ..*self
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.intensity.is_finite()
            && self.intensity >= 0.0
    }
}

/// Rigid transform `p -> R(θ) p + t` with `R(θ) = Rz(θz) Ry(θy) Rx(θx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub theta: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(theta: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { theta, t }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Builds a pose from the six optimizer parameters `[θx, θy, θz, tx, ty, tz]`.
    pub fn from_params(p: &[f64]) -> Self {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
        )
    }

    pub fn params(&self) -> [f64; 6] {
        [
            self.theta.x,
            self.theta.y,
            self.theta.z,
            self.t.x,
            self.t.y,
            self.t.z,
        ]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_zyx(&self.theta)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.t
    }

    /// Pose with rotation `R` and translation `t`, angles recovered from `R`.
    pub fn from_rotation(rotation: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self::new(euler_zyx(rotation), t)
    }

    /// `(R^T, -R^T t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        Self::from_rotation(&rt, -(rt * self.t))
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// `Rz(θz) Ry(θy) Rx(θx)`.
pub fn rotation_zyx(theta: &Vector3<f64>) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), theta.x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), theta.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), theta.z);
    (rz * ry * rx).into_inner()
}

/// Inverse of [`rotation_zyx`]. At gimbal lock (`|θy| = π/2`) `θx` is set to 0.
pub fn euler_zyx(r: &Matrix3<f64>) -> Vector3<f64> {
    let sy = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let theta_y = sy.asin();
    if (1.0 - sy.abs()) < 1e-12 {
        // R = Rz(θz) Ry(±π/2) Rx(θx) only determines θz ∓ θx.
        let theta_z = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return Vector3::new(0.0, theta_y, theta_z);
    }
    let theta_x = r[(2, 1)].atan2(r[(2, 2)]);
    let theta_z = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(theta_x, theta_y, theta_z)
}

/// `R(θ) p + t`; intensity and ring are carried over.
pub fn apply_pose(pose: &Pose, p: &LidarPoint) -> LidarPoint {
    p.with_position(&pose.transform(&p.position()))
}

/// Panorama image size. Full-sphere equirectangular images have `width = 2 * height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanoramaSpec {
    pub width: u32,
    pub height: u32,
}

impl Default for PanoramaSpec {
    fn default() -> Self {
        Self {
            width: 8000,
            height: 4000,
        }
    }
}

impl PanoramaSpec {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let spec = Self { width, height };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width != 2 * self.height {
            return Err(Error::InvalidInput(format!(
                "equirectangular panorama must be 2:1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn w(&self) -> f64 {
        f64::from(self.width)
    }

    pub fn h(&self) -> f64 {
        f64::from(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalAngles {
    /// From the `+z` axis, in `[0, π]`.
    pub inclination: f64,
    /// From `+x` toward `+y`, in `[-π, π]`.
    pub azimuth: f64,
}

impl SphericalAngles {
    pub fn new(inclination: f64, azimuth: f64) -> Self {
        Self {
            inclination,
            azimuth,
        }
    }

    pub fn near_pole(&self) -> bool {
        self.inclination < POLE_EPS || (PI - self.inclination) < POLE_EPS
    }

    /// Unit direction vector.
    pub fn direction(&self) -> Vector3<f64> {
        let (si, ci) = self.inclination.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(si * ca, si * sa, ci)
    }
}

pub fn point_to_angles(p: &Vector3<f64>) -> Result<SphericalAngles> {
    let norm = p.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let inclination = (p.z / norm).clamp(-1.0, 1.0).acos();
    let azimuth = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        p.y.atan2(p.x)
    };
    Ok(SphericalAngles::new(inclination, azimuth))
}

/// `u` wraps modulo the image width.
pub fn pixel_to_angles(px: &Pixel, spec: &PanoramaSpec) -> SphericalAngles {
    let u = px.u.rem_euclid(spec.w());
    SphericalAngles::new(PI * px.v / spec.h(), TAU * u / spec.w() - PI)
}

pub fn angles_to_pixel(a: &SphericalAngles, spec: &PanoramaSpec) -> Pixel {
    let u = ((a.azimuth + PI) * spec.w() / TAU).rem_euclid(spec.w());
    Pixel::new(u, a.inclination * spec.h() / PI)
}

pub fn project_point(p: &Vector3<f64>, spec: &PanoramaSpec) -> Result<Pixel> {
    Ok(angles_to_pixel(&point_to_angles(p)?, spec))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}
