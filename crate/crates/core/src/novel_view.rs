//! Target head-pose sampling and rigid retargeting of camera meshes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::face_model::Pose;
use crate::geometry::{
    is_rotation, rotation_from_pitch_yaw, vector_to_pitch_yaw, Angles, Mat3, RigidTransform, Vec3, ROTATION_TOL,
};
use crate::matching::CameraMesh;
use crate::seed::{derive_seed, rng_for, TAG_POSES};

/// One head pose of a target distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEntry {
    pub rotation: Mat3,
    /// Explicit translation; `None` places the face at the pool's canonical
    /// distance on the optical axis.
    pub translation: Option<Vec3>,
}

impl PoseEntry {
    pub fn from_angles(head: Angles) -> Self {
        Self {
            rotation: rotation_from_pitch_yaw(head),
            translation: None,
        }
    }

    /// Head pitch/yaw of the face-forward axis `-z` in camera coordinates.
    pub fn angles(&self) -> Angles {
        vector_to_pitch_yaw(&(self.rotation * Vec3::new(0.0, 0.0, -1.0))).expect("rotation preserves length")
    }

    pub fn to_pose(&self, face_distance_mm: f64) -> Result<Pose> {
        Pose::new(
            self.rotation,
            self.translation.unwrap_or(Vec3::new(0.0, 0.0, face_distance_mm)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePool {
    pub entries: Vec<PoseEntry>,
    pub face_distance_mm: f64,
    pub source: String,
}

impl PosePool {
    pub fn new(entries: Vec<PoseEntry>, face_distance_mm: f64, source: impl Into<String>) -> Result<Self> {
        let pool = Self {
            entries,
            face_distance_mm,
            source: source.into(),
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn from_angles(angles: &[Angles], face_distance_mm: f64, source: impl Into<String>) -> Result<Self> {
        Self::new(
            angles.iter().map(|&a| PoseEntry::from_angles(a)).collect(),
            face_distance_mm,
            source,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("pose pool is empty".into()));
        }
        if !(self.face_distance_mm > 0.0) {
            return Err(Error::Config("pose pool distance must be positive".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !is_rotation(&e.rotation, ROTATION_TOL) || !e.angles().is_finite() {
                return Err(Error::Config(format!("pose pool entry {i} is not a valid rotation")));
            }
        }
        Ok(())
    }

    /// Indices of entries whose pitch/yaw norm is within `max_norm_deg`.
    pub fn admissible(&self, max_norm_deg: f64) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].angles().norm_deg() <= max_norm_deg)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisPlan {
    pub per_image: usize,
    pub max_pose_norm_deg: f64,
    /// Sources are admitted only when both |pitch| and |yaw| are below this.
    pub frontal_source_max_deg: Option<f64>,
    pub master_seed: u64,
}

impl Default for SynthesisPlan {
    fn default() -> Self {
        Self {
            per_image: 16,
            max_pose_norm_deg: 80.0,
            frontal_source_max_deg: Some(15.0),
            master_seed: 0,
        }
    }
}

impl SynthesisPlan {
    pub fn validate(&self) -> Result<()> {
        if self.per_image == 0 {
            return Err(Error::Config("per_image must be at least 1".into()));
        }
        if !(self.max_pose_norm_deg > 0.0) {
            return Err(Error::Config("max_pose_norm_deg must be positive".into()));
        }
        if let Some(f) = self.frontal_source_max_deg {
            if !(f > 0.0) {
                return Err(Error::Config("frontal_source_max_deg must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedPose {
    pub pool_index: usize,
    pub pose: Pose,
    pub head: Angles,
}

/// Draws `per_image` poses uniformly, with replacement, from the pool
/// entries that pass the pitch/yaw norm filter.
pub fn plan_poses(pool: &PosePool, plan: &SynthesisPlan, sample_index: u64) -> Result<Vec<PlannedPose>> {
    plan.validate()?;
    let valid = pool.admissible(plan.max_pose_norm_deg);
    if valid.is_empty() {
        return Err(Error::NoValidPose);
    }
    let mut rng = rng_for(plan.master_seed, TAG_POSES, sample_index);
    (0..plan.per_image)
        .map(|_| {
            let pool_index = valid[rng.random_range(0..valid.len())];
            let entry = &pool.entries[pool_index];
            Ok(PlannedPose {
                pool_index,
                pose: entry.to_pose(pool.face_distance_mm)?,
                head: entry.angles(),
            })
        })
        .collect()
}

/// Sub-seed used by [`plan_poses`] for a sample, for provenance records.
pub fn pose_seed(plan: &SynthesisPlan, sample_index: u64) -> u64 {
    derive_seed(plan.master_seed, TAG_POSES, sample_index)
}

/// `v -> R_t R_s^T (v - t_s) + t_t`.
pub fn retarget_transform(src: &Pose, tgt: &Pose) -> RigidTransform {
    let rotation = tgt.rotation * src.rotation.transpose();
    RigidTransform::new(rotation, tgt.translation - rotation * src.translation)
}

pub fn retarget(mesh: &CameraMesh, src: &Pose, tgt: &Pose) -> Result<CameraMesh> {
    src.validate()?;
    tgt.validate()?;
    if src == tgt {
        return Ok(mesh.clone());
    }
    view_transform(mesh, &retarget_transform(src, tgt))
}

/// Applies `v -> R_e v + t_e` to every vertex and the gaze target.
pub fn view_transform(mesh: &CameraMesh, extrinsics: &RigidTransform) -> Result<CameraMesh> {
    if !extrinsics.is_valid() {
        return Err(Error::InvalidPose("extrinsic rotation is not a rotation".into()));
    }
    let vertices: Vec<Vec3> = mesh.vertices.iter().map(|v| extrinsics.apply(v)).collect();
    if let Some(v) = vertices.iter().find(|v| !(v.z > 0.0)) {
        return Err(Error::BehindCamera { z: v.z });
    }
    Ok(CameraMesh {
        vertices,
        triangles: mesh.triangles.clone(),
        tex_coords: mesh.tex_coords.clone(),
        gaze_target: extrinsics.apply(&mesh.gaze_target),
        landmark_map: mesh.landmark_map.clone(),
    })
}

/// Frontal-source filter: strict on both angles.
pub fn admit_source(head: Angles, plan: &SynthesisPlan) -> bool {
    match plan.frontal_source_max_deg {
        None => true,
        Some(limit_deg) => {
            let limit = limit_deg.to_radians();
            head.pitch.abs() < limit && head.yaw.abs() < limit
        }
    }
}
