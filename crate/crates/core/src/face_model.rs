//! Reference 68-landmark face model, head poses and landmark helpers.
//!
//! Landmark ids follow the usual 68-point markup (0..=16 jaw, 36..=47 eyes,
//! 48..=67 mouth). The canonical frame shares the camera convention: x to
//! the image right, y down, and the face looks along -z, so the frontal pose
//! is the identity rotation.

use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_rotation, Mat3, RigidTransform, Vec2, Vec3, ROTATION_TOL};

pub const NUM_LANDMARKS: usize = 68;

/// Outer/inner corner of the image-left eye, inner/outer of the image-right
/// eye, then the two mouth corners.
pub const CORNER_INDICES: [usize; 6] = [36, 39, 42, 45, 48, 54];

const EMBEDDED_MODEL_CSV: &str = include_str!("../assets/reference_face_68.csv");

static EMBEDDED_MODEL: LazyLock<ReferenceFaceModel> = LazyLock::new(|| {
    ReferenceFaceModel::from_csv_str(EMBEDDED_MODEL_CSV).expect("embedded face model is valid")
});

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFaceModel {
    points: Vec<Vec3>,
    corner_indices: [usize; 6],
    eye_center_distance_mm: f64,
}

impl ReferenceFaceModel {
    /// The embedded generic model, in millimetres, with the six-corner
    /// centroid at the origin.
    pub fn embedded() -> &'static ReferenceFaceModel {
        &EMBEDDED_MODEL
    }

    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::DegenerateFace(format!(
                "reference model needs {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::DegenerateFace("non-finite model point".into()));
        }
        let corner_indices = CORNER_INDICES;
        let eye_center_distance_mm = eye_center_distance(
            (&points[corner_indices[0]], &points[corner_indices[1]]),
            (&points[corner_indices[2]], &points[corner_indices[3]]),
        )?;
        Ok(Self {
            points,
            corner_indices,
            eye_center_distance_mm,
        })
    }

    /// Parses `x,y,z` rows (mm); a non-numeric first row is treated as a header.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 3 => points.push(Vec3::new(v[0], v[1], v[2])),
                Err(_) if points.is_empty() && i == 0 => continue,
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected three numbers, got `{line}`"),
                    })
                }
            }
        }
        Self::from_points(points)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn corner_indices(&self) -> [usize; 6] {
        self.corner_indices
    }

    pub fn corner_points(&self) -> [Vec3; 6] {
        self.corner_indices.map(|i| self.points[i])
    }

    pub fn eye_center_distance_mm(&self) -> f64 {
        self.eye_center_distance_mm
    }
}

/// 2D landmark positions in source-image pixels, indexed by landmark id.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks2D {
    points: Vec<Option<Vec2>>,
}

impl Landmarks2D {
    pub fn new(points: Vec<Option<Vec2>>) -> Result<Self> {
        if points.len() > NUM_LANDMARKS {
            return Err(Error::DegenerateFace(format!("too many landmarks: {}", points.len())));
        }
        let mut points = points;
        points.resize(NUM_LANDMARKS, None);
        if points.iter().flatten().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::DegenerateFace("non-finite landmark".into()));
        }
        if let Some(&missing) = CORNER_INDICES.iter().find(|&&i| points[i].is_none()) {
            return Err(Error::IncompleteLandmarks(missing));
        }
        Ok(Self { points })
    }

    pub fn from_full(points: &[Vec2]) -> Result<Self> {
        Self::new(points.iter().copied().map(Some).collect())
    }

    pub fn get(&self, id: usize) -> Option<Vec2> {
        self.points.get(id).copied().flatten()
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, Vec2)> + '_ {
        self.points.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p)))
    }

    pub fn corners(&self) -> [Vec2; 6] {
        CORNER_INDICES.map(|i| self.points[i].expect("corners validated at construction"))
    }
}

/// Rigid pose of the reference face in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_rotation(&self.rotation, ROTATION_TOL) {
            return Err(Error::InvalidPose("rotation is not orthonormal with det +1".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) || self.translation.z <= 0.0 {
            return Err(Error::InvalidPose(format!(
                "face must be in front of the camera, t = {:?}",
                self.translation.as_slice()
            )));
        }
        Ok(())
    }

    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }
}

/// Distance between the midpoints of two eye-corner pairs.
pub fn eye_center_distance(left: (&Vec3, &Vec3), right: (&Vec3, &Vec3)) -> Result<f64> {
    let l = (left.0 + left.1) / 2.0;
    let r = (right.0 + right.1) / 2.0;
    let d = (r - l).norm();
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::DegenerateFace("coincident eye centers".into()));
    }
    Ok(d)
}

/// Centroid of the six corner landmarks under `pose`: the gaze origin.
pub fn face_center_camera(pose: &Pose, model: &ReferenceFaceModel) -> Vec3 {
    let t = pose.transform();
    let sum: Vec3 = model.corner_points().iter().map(|p| t.apply(p)).sum();
    sum / 6.0
}

/// Six-corner centroid under an arbitrary rigid transform.
pub fn face_center_of(transform: &RigidTransform, model: &ReferenceFaceModel) -> Vec3 {
    let sum: Vec3 = model.corner_points().iter().map(|p| transform.apply(p)).sum();
    sum / 6.0
}

/// Serialized form of 2D landmarks: 68 `[x, y]` pairs, `null` for missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkList(pub Vec<Option<[f64; 2]>>);

impl LandmarkList {
    pub fn to_landmarks(&self) -> Result<Landmarks2D> {
        Landmarks2D::new(self.0.iter().map(|p| p.map(|[x, y]| Vec2::new(x, y))).collect())
    }

    pub fn from_points(points: &[Option<Vec2>]) -> Self {
        Self(points.iter().map(|p| p.map(|p| [p.x, p.y])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vec3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(200.0..700.0));
        RigidTransform::new(rotation_from_vector(&w), t)
    }

    #[test]
    fn embedded_model_is_consistent() {
        let m = ReferenceFaceModel::embedded();
        assert_eq!(m.points().len(), 68);
        let c = m.corner_points();
        let recomputed = eye_center_distance((&c[0], &c[1]), (&c[2], &c[3])).unwrap();
        assert!((recomputed - m.eye_center_distance_mm()).abs() < 1e-9);
        let centroid: Vec3 = c.iter().sum::<Vec3>() / 6.0;
        assert!(centroid.norm() < 1e-3, "corner centroid {centroid:?}");
        // nose tip is the point closest to the viewer
        let nose = m.points()[30];
        assert!(m.points().iter().all(|p| p.z >= nose.z - 1e-9));
    }

    #[test]
    fn eye_distance_hand_geometry() {
        let p = |x: f64| Vec3::new(x, 0.0, 0.0);
        let d = eye_center_distance((&p(-35.0), &p(-25.0)), (&p(25.0), &p(35.0))).unwrap();
        assert!((d - 60.0).abs() < 1e-12);
        let same = p(1.0);
        assert!(matches!(
            eye_center_distance((&same, &same), (&same, &same)),
            Err(Error::DegenerateFace(_))
        ));
    }

    #[test]
    fn eye_distance_scales_and_is_rigid_invariant() {
        let m = ReferenceFaceModel::embedded();
        let c = m.corner_points();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.random_range(0.01..100.0);
            let s = c.map(|p| p * k);
            let d = eye_center_distance((&s[0], &s[1]), (&s[2], &s[3])).unwrap();
            assert!((d - k * m.eye_center_distance_mm()).abs() < 1e-9 * k.max(1.0));
            let t = random_transform(&mut rng);
            let r = c.map(|p| t.apply(&p));
            let d = eye_center_distance((&r[0], &r[1]), (&r[2], &r[3])).unwrap();
            assert!((d - m.eye_center_distance_mm()).abs() < 1e-9);
        }
    }

    #[test]
    fn face_center_examples() {
        let m = ReferenceFaceModel::embedded();
        let canonical: Vec3 = m.corner_points().iter().sum::<Vec3>() / 6.0;
        let id = Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        };
        assert!((face_center_camera(&id, m) - canonical).amax() < 1e-12);
        let shifted = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 300.0)).unwrap();
        assert!((face_center_camera(&shifted, m) - (canonical + Vec3::new(0.0, 0.0, 300.0))).amax() < 1e-12);
    }

    #[test]
    fn face_center_matches_brute_force_and_is_equivariant() {
        let m = ReferenceFaceModel::embedded();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let canonical: Vec3 = m.corner_points().iter().sum::<Vec3>() / 6.0;
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let pose = Pose::new(t.rotation, t.translation).unwrap();
            let mut brute = Vec3::zeros();
            for &i in &CORNER_INDICES {
                brute += t.rotation * m.points()[i] + t.translation;
            }
            brute /= 6.0;
            let fc = face_center_camera(&pose, m);
            assert!((fc - brute).amax() < 1e-12);
            assert!((fc - (t.rotation * canonical + t.translation)).amax() < 1e-12);
        }
    }

    #[test]
    fn landmarks_require_corners() {
        let mut pts: Vec<Option<Vec2>> = vec![Some(Vec2::new(1.0, 2.0)); 68];
        pts[48] = None;
        assert!(matches!(Landmarks2D::new(pts), Err(Error::IncompleteLandmarks(48))));
    }

    #[test]
    fn pose_validation() {
        assert!(Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, -1.0)).is_err());
        assert!(Pose::new(Mat3::identity() * 2.0, Vec3::new(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn csv_loader_matches_embedded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.csv");
        std::fs::write(&path, EMBEDDED_MODEL_CSV).unwrap();
        let m = ReferenceFaceModel::from_csv(&path).unwrap();
        assert_eq!(&m, ReferenceFaceModel::embedded());
        assert!(ReferenceFaceModel::from_csv_str("1,2,3\n4,5,6\n").is_err());
    }
}
