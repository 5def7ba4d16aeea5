//! Normalized virtual camera, normalization rotation and label computation.
//!
//! The normalization is rotation-only: the virtual camera looks straight at
//! the face center with the head's roll removed, and synthetic meshes are
//! placed so the face center sits exactly `face_distance_mm` in front of it.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{is_rotation, vector_to_pitch_yaw, Angles, CameraIntrinsics, Mat3, RigidTransform, Vec3};
use crate::imaging::warp_perspective;
use crate::matching::CameraMesh;
use crate::novel_view::view_transform;

pub const DEFAULT_FOCAL_PX: f64 = 960.0;
pub const DEFAULT_DISTANCE_MM: f64 = 300.0;
pub const DEFAULT_SIZE_PX: u32 = 448;

/// Face-forward axis of the canonical head frame.
pub const FACE_FORWARD: Vec3 = Vec3::new(0.0, 0.0, -1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCamera {
    pub intrinsics: CameraIntrinsics,
    pub face_distance_mm: f64,
}

impl NormalizedCamera {
    pub fn new(focal_px: f64, size_px: u32, face_distance_mm: f64) -> Result<Self> {
        if !(face_distance_mm > 0.0) {
            return Err(Error::Config(format!("face distance must be positive, got {face_distance_mm}")));
        }
        Ok(Self {
            intrinsics: CameraIntrinsics::centered(focal_px, size_px)?,
            face_distance_mm,
        })
    }

    pub fn size(&self) -> u32 {
        self.intrinsics.width
    }
}

impl Default for NormalizedCamera {
    fn default() -> Self {
        Self::new(DEFAULT_FOCAL_PX, DEFAULT_SIZE_PX, DEFAULT_DISTANCE_MM).expect("default camera is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationResult {
    pub rotation: Mat3,
    pub gaze: Angles,
    pub head: Angles,
    /// Face center after placement: `(0, 0, face_distance_mm)`.
    pub face_center_norm: Vec3,
}

/// Rows `(x_n, y_n, z_n)`: `z_n` towards the face center, `y_n = z_n x h_x`
/// with `h_x` the head x-axis, `x_n = y_n x z_n`.
pub fn normalization_rotation(face_center: &Vec3, head_rotation: &Mat3) -> Result<Mat3> {
    let dist = face_center.norm();
    if !(dist > 0.0) || !dist.is_finite() {
        return Err(Error::InvalidDirection);
    }
    let z = face_center / dist;
    let hx = head_rotation.column(0).into_owned();
    let y = z.cross(&hx);
    let yn = y.norm();
    if yn < 1e-12 {
        return Err(Error::DegenerateNormalization);
    }
    let y = y / yn;
    let x = y.cross(&z);
    Ok(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

/// Normalized gaze and head angles.
pub fn normalize_labels(
    gaze_target: &Vec3,
    face_center: &Vec3,
    head_rotation: &Mat3,
    rotation: &Mat3,
) -> Result<(Angles, Angles)> {
    let gaze = vector_to_pitch_yaw(&(rotation * (gaze_target - face_center)))?;
    let head = vector_to_pitch_yaw(&(rotation * head_rotation * FACE_FORWARD))?;
    Ok((gaze, head))
}

pub fn normalize(
    gaze_target: &Vec3,
    face_center: &Vec3,
    head_rotation: &Mat3,
    cam: &NormalizedCamera,
) -> Result<NormalizationResult> {
    let rotation = normalization_rotation(face_center, head_rotation)?;
    let (gaze, head) = normalize_labels(gaze_target, face_center, head_rotation, &rotation)?;
    let face_center_norm = placement_transform(face_center, &rotation, cam).apply(face_center);
    Ok(NormalizationResult {
        rotation,
        gaze,
        head,
        face_center_norm,
    })
}

/// `v -> M v + ((0, 0, D) - M c)`, which puts the face center `c` at `(0, 0, D)`.
pub fn placement_transform(face_center: &Vec3, rotation: &Mat3, cam: &NormalizedCamera) -> RigidTransform {
    RigidTransform::new(
        *rotation,
        Vec3::new(0.0, 0.0, cam.face_distance_mm) - rotation * face_center,
    )
}

pub fn place_for_rendering(
    mesh: &CameraMesh,
    face_center: &Vec3,
    rotation: &Mat3,
    cam: &NormalizedCamera,
) -> Result<CameraMesh> {
    if !is_rotation(rotation, 1e-9) {
        return Err(Error::InvalidPose("normalization matrix is not a rotation".into()));
    }
    view_transform(mesh, &placement_transform(face_center, rotation, cam))
}

/// Homography `C_n M C_r^-1` taking real-camera pixels to normalized pixels.
pub fn normalization_homography(real: &CameraIntrinsics, rotation: &Mat3, cam: &NormalizedCamera) -> Result<Mat3> {
    real.validate()?;
    Ok(cam.intrinsics.matrix() * rotation * real.inverse_matrix())
}

/// Warps a real image into the normalized camera (bilinear, black outside).
pub fn warp_to_normalized(
    image: &RgbImage,
    real: &CameraIntrinsics,
    rotation: &Mat3,
    cam: &NormalizedCamera,
) -> Result<RgbImage> {
    if image.dimensions() != (real.width, real.height) {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, intrinsics describe {}x{}",
            image.width(),
            image.height(),
            real.width,
            real.height
        )));
    }
    let h = normalization_homography(real, rotation, cam)?;
    warp_perspective(image, &h, cam.intrinsics.width, cam.intrinsics.height)
}
