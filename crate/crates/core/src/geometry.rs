//! Camera models, the crop/resize transform and angle conventions.
//!
//! Camera frame: right-handed, +x image-right, +y image-down, +z along the
//! optical axis into the scene. Pixel centers sit on integer coordinates.
//!
//! [`Mat3`] and [`Vec3`] are nalgebra types and therefore column-major in
//! storage; all formulas here are written in ordinary row/column notation.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Tolerance used when checking that a matrix is a proper rotation.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let c = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        c.validate()?;
        Ok(c)
    }

    /// Square camera with the principal point at the image center.
    pub fn centered(focal: f64, size: u32) -> Result<Self> {
        let c = size as f64 / 2.0;
        Self::new(focal, focal, c, c, size, size)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("empty image size".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Face bounding box in source pixels and the resize factors that turn it
/// into the reconstructor's input patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub box_w: f64,
    pub box_h: f64,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.center_x,
            self.center_y,
            self.box_w,
            self.box_h,
            self.scale_x,
            self.scale_y,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCrop("non-finite field".into()));
        }
        if self.box_w <= 0.0 || self.box_h <= 0.0 {
            return Err(Error::InvalidCrop(format!(
                "box size must be positive, got {}x{}",
                self.box_w, self.box_h
            )));
        }
        if self.scale_x <= 0.0 || self.scale_y <= 0.0 {
            return Err(Error::InvalidCrop(format!(
                "scale must be positive, got ({}, {})",
                self.scale_x, self.scale_y
            )));
        }
        Ok(())
    }

    /// Patch size in pixels, rounded to the nearest integer.
    pub fn patch_size(&self) -> (u32, u32) {
        (
            (self.scale_x * self.box_w).round().max(1.0) as u32,
            (self.scale_y * self.box_h).round().max(1.0) as u32,
        )
    }
}

/// Builds the source-to-patch transform `p = T * p_o`.
///
/// The translation re-centers on the box: the crop center lands on the patch
/// center `(scale_x * box_w / 2, scale_y * box_h / 2)`. The image size is
/// only used to check that the crop center lies inside the frame.
pub fn crop_matrix(crop: &CropSpec, image_w: u32, image_h: u32) -> Result<Mat3> {
    crop.validate()?;
    if !(0.0..=image_w as f64).contains(&crop.center_x)
        || !(0.0..=image_h as f64).contains(&crop.center_y)
    {
        return Err(Error::InvalidCrop(format!(
            "crop center ({}, {}) outside {}x{} image",
            crop.center_x, crop.center_y, image_w, image_h
        )));
    }
    let tx = -crop.scale_x * (crop.center_x - crop.box_w / 2.0);
    let ty = -crop.scale_y * (crop.center_y - crop.box_h / 2.0);
    Ok(Mat3::new(
        crop.scale_x,
        0.0,
        tx,
        0.0,
        crop.scale_y,
        ty,
        0.0,
        0.0,
        1.0,
    ))
}

/// Unit ray through a homogeneous patch pixel: `C^-1 T^-1 p / |C^-1 T^-1 p|`.
pub fn backproject_unit_ray(p_patch: &Vec3, camera: &CameraIntrinsics, crop_t: &Mat3) -> Result<Vec3> {
    let t_inv = crop_t
        .try_inverse()
        .ok_or_else(|| Error::InvalidCrop("crop transform is singular".into()))?;
    let ray = camera.inverse_matrix() * (t_inv * p_patch);
    let norm = ray.norm();
    if !norm.is_finite() || norm == 0.0 || ray.z <= 0.0 {
        return Err(Error::DegenerateRay);
    }
    Ok(ray / norm)
}

pub fn project_point(camera: &CameraIntrinsics, v: &Vec3) -> Result<Vec2> {
    if v.z <= 0.0 || !v.z.is_finite() {
        return Err(Error::BehindCamera { z: v.z });
    }
    Ok(Vec2::new(
        camera.fx * v.x / v.z + camera.cx,
        camera.fy * v.y / v.z + camera.cy,
    ))
}

/// Applies a 3x3 projective transform to a 2D point.
pub fn transform_point(h: &Mat3, p: &Vec2) -> Vec2 {
    let q = h * Vec3::new(p.x, p.y, 1.0);
    Vec2::new(q.x / q.z, q.y / q.z)
}

/// Pitch/yaw of a direction, in radians.
///
/// `pitch = asin(-y)`, `yaw = atan2(-x, -z)` on the unit vector, so a gaze
/// pointing straight at the camera `(0, 0, -1)` is `(0, 0)` and positive
/// pitch looks up.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Angles {
    pub pitch: f64,
    pub yaw: f64,
}

impl Angles {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        Self { pitch, yaw }
    }

    pub fn from_degrees(pitch_deg: f64, yaw_deg: f64) -> Self {
        Self::new(pitch_deg.to_radians(), yaw_deg.to_radians())
    }

    pub fn to_degrees(self) -> (f64, f64) {
        (self.pitch.to_degrees(), self.yaw.to_degrees())
    }

    /// l2 norm of the (pitch, yaw) pair in degrees.
    pub fn norm_deg(self) -> f64 {
        let (p, y) = self.to_degrees();
        p.hypot(y)
    }

    pub fn is_finite(self) -> bool {
        self.pitch.is_finite() && self.yaw.is_finite()
    }
}

pub fn vector_to_pitch_yaw(v: &Vec3) -> Result<Angles> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidDirection);
    }
    let u = v / n;
    Ok(Angles {
        pitch: (-u.y).clamp(-1.0, 1.0).asin(),
        yaw: (-u.x).atan2(-u.z),
    })
}

pub fn pitch_yaw_to_vector(a: Angles) -> Vec3 {
    let (sp, cp) = a.pitch.sin_cos();
    let (sy, cy) = a.yaw.sin_cos();
    Vec3::new(-cp * sy, -sp, -cp * cy)
}

/// Angle between two directions in degrees, in `[0, 180]`.
pub fn angular_error_deg(v1: &Vec3, v2: &Vec3) -> Result<f64> {
    let (n1, n2) = (v1.norm(), v2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidDirection);
    }
    let (a, b) = (v1 / n1, v2 / n2);
    // atan2 form equals acos(dot) but keeps precision near 0 and 180 degrees
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    let sin = a.cross(&b).norm();
    Ok(sin.atan2(cos).to_degrees())
}

pub fn rotation_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Head rotation for a pitch/yaw pair: `R = R_y(yaw) * R_x(-pitch)`.
///
/// The face-forward axis `(0, 0, -1)` maps to `pitch_yaw_to_vector(a)` and
/// the head x-axis stays in the camera's x-z plane, so no roll is introduced.
pub fn rotation_from_pitch_yaw(a: Angles) -> Mat3 {
    rotation_y(a.yaw) * rotation_x(-a.pitch)
}

pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Mat3::identity()).amax();
    ortho < tol && (r.determinant() - 1.0).abs() < tol && r.iter().all(|v| v.is_finite())
}

/// Rotation vector (axis * angle) to matrix.
pub fn rotation_from_vector(w: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*w).into_inner()
}

pub fn rotation_to_vector(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Geodesic distance between two rotations, in degrees.
pub fn rotation_angle_deg(a: &Mat3, b: &Mat3) -> f64 {
    let d = a.transpose() * b;
    let cos = (d.trace() - 1.0) / 2.0;
    let axis = Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    let sin = axis.norm() / 2.0;
    sin.atan2(cos).to_degrees()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `v -> rotation * v + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.rotation * v + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.rotation, ROTATION_TOL) && self.translation.iter().all(|v| v.is_finite())
    }
}
