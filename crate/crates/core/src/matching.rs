//! Projective matching: patch-space meshes to metric camera-space meshes.
//!
//! Every vertex `(u, v, d)` is placed on the back-projected ray of its patch
//! pixel at range `lambda = alpha * d + beta`. Projection therefore reproduces
//! `(u, v)` exactly whatever `alpha` and `beta` are; the two scalars only fix
//! metric scale (from the eye-center distance) and absolute range (from the
//! PnP face center).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::face_model::{eye_center_distance, face_center_camera, Pose, ReferenceFaceModel, CORNER_INDICES};
use crate::geometry::{CameraIntrinsics, Mat3, Vec2, Vec3};

/// Landmark id to vertex index.
pub type LandmarkMap = BTreeMap<usize, usize>;

/// Tolerance on texture coordinates leaving `[0, 1]`.
pub const TEX_COORD_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchMesh {
    /// `(u, v, d)` in patch pixels; `d` grows away from the camera.
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex texture coordinates normalized to the source patch.
    pub tex_coords: Vec<Vec2>,
    pub landmark_map: LandmarkMap,
}

impl PatchMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 {
            return Err(Error::MeshIntegrity("mesh has no vertices".into()));
        }
        if self.tex_coords.len() != n {
            return Err(Error::MeshIntegrity(format!(
                "{} texture coordinates for {n} vertices",
                self.tex_coords.len()
            )));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::MeshIntegrity(format!("triangle {t:?} references a vertex >= {n}")));
        }
        if self.vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::MeshIntegrity("non-finite vertex coordinate".into()));
        }
        let range = -TEX_COORD_SLACK..=1.0 + TEX_COORD_SLACK;
        if let Some(i) = self
            .tex_coords
            .iter()
            .position(|t| !range.contains(&t.x) || !range.contains(&t.y))
        {
            return Err(Error::MeshIntegrity(format!(
                "texture coordinate {i} outside [0, 1]: {:?}",
                self.tex_coords[i].as_slice()
            )));
        }
        if let Some((id, &v)) = self.landmark_map.iter().find(|(_, &v)| v >= n) {
            return Err(Error::MeshIntegrity(format!("landmark {id} maps to vertex {v} >= {n}")));
        }
        if let Some(&missing) = CORNER_INDICES.iter().find(|i| !self.landmark_map.contains_key(i)) {
            return Err(Error::IncompleteLandmarks(missing));
        }
        Ok(())
    }

    pub fn landmark_vertex(&self, id: usize) -> Result<Vec3> {
        self.landmark_map
            .get(&id)
            .and_then(|&i| self.vertices.get(i))
            .copied()
            .ok_or(Error::IncompleteLandmarks(id))
    }

    pub fn corner_vertices(&self) -> Result<[Vec3; 6]> {
        let mut out = [Vec3::zeros(); 6];
        for (slot, &id) in out.iter_mut().zip(&CORNER_INDICES) {
            *slot = self.landmark_vertex(id)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraMesh {
    /// Vertices in camera coordinates, millimetres.
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub tex_coords: Vec<Vec2>,
    pub gaze_target: Vec3,
    pub landmark_map: LandmarkMap,
}

impl CameraMesh {
    pub fn landmark_vertex(&self, id: usize) -> Result<Vec3> {
        self.landmark_map
            .get(&id)
            .and_then(|&i| self.vertices.get(i))
            .copied()
            .ok_or(Error::IncompleteLandmarks(id))
    }

    pub fn corner_centroid(&self) -> Result<Vec3> {
        let mut sum = Vec3::zeros();
        for &id in &CORNER_INDICES {
            sum += self.landmark_vertex(id)?;
        }
        Ok(sum / 6.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingParams {
    /// Millimetres per patch-pixel depth unit.
    pub alpha: f64,
    /// Range offset in millimetres.
    pub beta: f64,
}

/// `alpha = l_r / l_p`: reference eye-center distance (mm) over the mesh's
/// eye-center distance measured in `(u, v, d)` patch units.
pub fn estimate_alpha(mesh: &PatchMesh, model: &ReferenceFaceModel) -> Result<f64> {
    let c = mesh.corner_vertices()?;
    let lp = eye_center_distance((&c[0], &c[1]), (&c[2], &c[3]))?;
    let alpha = model.eye_center_distance_mm() / lp;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::DegenerateFace(format!("invalid scale alpha = {alpha}")));
    }
    Ok(alpha)
}

/// `beta = |v_bar| - alpha * d_bar`, with `v_bar` the PnP face center and
/// `d_bar` the mean depth of the six corner vertices.
pub fn estimate_beta(mesh: &PatchMesh, alpha: f64, pnp_pose: &Pose, model: &ReferenceFaceModel) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::DegenerateFace(format!("alpha must be positive, got {alpha}")));
    }
    pnp_pose.validate()?;
    let corners = mesh.corner_vertices()?;
    let d_bar = corners.iter().map(|v| v.z).sum::<f64>() / 6.0;
    let v_bar = face_center_camera(pnp_pose, model);
    Ok(v_bar.norm() - alpha * d_bar)
}

pub fn estimate_params(mesh: &PatchMesh, pnp_pose: &Pose, model: &ReferenceFaceModel) -> Result<MatchingParams> {
    let alpha = estimate_alpha(mesh, model)?;
    let beta = estimate_beta(mesh, alpha, pnp_pose, model)?;
    Ok(MatchingParams { alpha, beta })
}

/// Places every vertex at `(alpha * d + beta) * ray(u, v)`.
///
/// Aborts (rather than clamps) when any vertex would get a non-positive
/// range, listing the offending indices.
pub fn lift_to_camera(
    mesh: &PatchMesh,
    camera: &CameraIntrinsics,
    crop_t: &Mat3,
    params: &MatchingParams,
    gaze_target: Vec3,
) -> Result<CameraMesh> {
    camera.validate()?;
    let t_inv = crop_t
        .try_inverse()
        .ok_or_else(|| Error::InvalidCrop("crop transform is singular".into()))?;
    let c_inv = camera.inverse_matrix();

    let lifted: Vec<std::result::Result<Vec3, usize>> = mesh
        .vertices
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let lambda = params.alpha * v.z + params.beta;
            if !(lambda > 0.0) {
                return Err(i);
            }
            let ray = c_inv * (t_inv * Vec3::new(v.x, v.y, 1.0));
            let norm = ray.norm();
            if !(ray.z > 0.0) || !norm.is_finite() {
                return Err(i);
            }
            Ok(ray * (lambda / norm))
        })
        .collect();

    let bad: Vec<usize> = lifted.iter().filter_map(|r| r.err()).collect();
    if !bad.is_empty() {
        return Err(Error::BehindCameraVertices { indices: bad });
    }
    Ok(CameraMesh {
        vertices: lifted.into_iter().map(|r| r.expect("checked above")).collect(),
        triangles: mesh.triangles.clone(),
        tex_coords: mesh.tex_coords.clone(),
        gaze_target,
        landmark_map: mesh.landmark_map.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{crop_matrix, project_point, transform_point, CropSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(960.0, 960.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn crop() -> CropSpec {
        CropSpec {
            center_x: 300.0,
            center_y: 250.0,
            box_w: 200.0,
            box_h: 200.0,
            scale_x: 1.12,
            scale_y: 1.12,
        }
    }

    fn random_mesh(rng: &mut ChaCha8Rng, n: usize) -> PatchMesh {
        let vertices: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(0.0..224.0),
                    rng.random_range(0.0..224.0),
                    rng.random_range(-40.0..40.0),
                )
            })
            .collect();
        let tex_coords = vertices.iter().map(|v| Vec2::new(v.x / 224.0, v.y / 224.0)).collect();
        let landmark_map = CORNER_INDICES.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        PatchMesh {
            vertices,
            triangles: vec![[0, 1, 2]],
            tex_coords,
            landmark_map,
        }
    }

    /// Corners laid out so the eye-center distance is `lp` pixels.
    fn corner_mesh(lp: f64) -> PatchMesh {
        let pts = [
            Vec3::new(100.0 - lp / 2.0 - 10.0, 100.0, 5.0),
            Vec3::new(100.0 - lp / 2.0 + 10.0, 100.0, 5.0),
            Vec3::new(100.0 + lp / 2.0 - 10.0, 100.0, 5.0),
            Vec3::new(100.0 + lp / 2.0 + 10.0, 100.0, 5.0),
            Vec3::new(90.0, 150.0, 8.0),
            Vec3::new(110.0, 150.0, 8.0),
        ];
        PatchMesh {
            vertices: pts.to_vec(),
            triangles: vec![[0, 1, 4]],
            tex_coords: vec![Vec2::new(0.5, 0.5); 6],
            landmark_map: CORNER_INDICES.iter().enumerate().map(|(k, &id)| (id, k)).collect(),
        }
    }

    #[test]
    fn alpha_examples() {
        let model = ReferenceFaceModel::embedded();
        let lr = model.eye_center_distance_mm();
        let mesh = corner_mesh(lr);
        assert!((estimate_alpha(&mesh, model).unwrap() - 1.0).abs() < 1e-12);

        let mut doubled = mesh.clone();
        doubled.vertices.iter_mut().for_each(|v| *v *= 2.0);
        assert!((estimate_alpha(&doubled, model).unwrap() - 0.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = random_mesh(&mut rng, 8);
            let c = m.corner_vertices().unwrap();
            let lp = eye_center_distance((&c[0], &c[1]), (&c[2], &c[3])).unwrap();
            let alpha = estimate_alpha(&m, model).unwrap();
            assert!((alpha * lp - lr).abs() < 1e-12 * lr);
        }
    }

    #[test]
    fn alpha_degenerate_face() {
        let model = ReferenceFaceModel::embedded();
        let mut mesh = corner_mesh(40.0);
        for k in 0..4 {
            mesh.vertices[k] = Vec3::new(50.0, 50.0, 0.0);
        }
        assert!(matches!(estimate_alpha(&mesh, model), Err(Error::DegenerateFace(_))));
    }

    #[test]
    fn beta_examples() {
        let model = ReferenceFaceModel::embedded();
        let pose = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 350.0)).unwrap();
        let v_bar = face_center_camera(&pose, model).norm();

        // d_bar = 100 by construction
        let mut mesh = corner_mesh(60.0);
        mesh.vertices.iter_mut().for_each(|v| v.z = 100.0);
        let beta = estimate_beta(&mesh, 0.5, &pose, model).unwrap();
        assert!((beta - (v_bar - 50.0)).abs() < 1e-12);
        assert!((v_bar - 350.0).abs() < 1e-3);

        // alpha * d_bar == |v_bar| gives zero
        let zero = estimate_beta(&mesh, v_bar / 100.0, &pose, model).unwrap();
        assert!(zero.abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = random_mesh(&mut rng, 8);
            let alpha = rng.random_range(0.1..2.0);
            let beta = estimate_beta(&m, alpha, &pose, model).unwrap();
            let d_bar = m.corner_vertices().unwrap().iter().map(|v| v.z).sum::<f64>() / 6.0;
            assert!((beta + alpha * d_bar - v_bar).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_needs_corners() {
        let model = ReferenceFaceModel::embedded();
        let pose = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 350.0)).unwrap();
        let mut mesh = corner_mesh(60.0);
        mesh.landmark_map.remove(&54);
        assert!(matches!(
            estimate_beta(&mesh, 1.0, &pose, model),
            Err(Error::IncompleteLandmarks(54))
        ));
    }

    #[test]
    fn principal_point_vertex_lands_on_axis() {
        let cam = camera();
        let t = Mat3::identity();
        let mesh = PatchMesh {
            vertices: vec![Vec3::new(320.0, 240.0, 0.0)],
            triangles: vec![],
            tex_coords: vec![Vec2::new(0.5, 0.5)],
            landmark_map: LandmarkMap::new(),
        };
        let out = lift_to_camera(&mesh, &cam, &t, &MatchingParams { alpha: 0.7, beta: 300.0 }, Vec3::zeros()).unwrap();
        assert!((out.vertices[0] - Vec3::new(0.0, 0.0, 300.0)).amax() < 1e-12);
    }

    #[test]
    fn lifted_vertices_reproject_exactly() {
        let cam = camera();
        let t = crop_matrix(&crop(), 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mesh = random_mesh(&mut rng, 500);
            let params = MatchingParams {
                alpha: rng.random_range(0.2..3.0),
                beta: rng.random_range(200.0..800.0),
            };
            let gaze = Vec3::new(1.0, 2.0, 3.0);
            let lifted = lift_to_camera(&mesh, &cam, &t, &params, gaze).unwrap();
            assert_eq!(lifted.gaze_target, gaze);
            assert_eq!(lifted.triangles, mesh.triangles);
            assert_eq!(lifted.landmark_map, mesh.landmark_map);
            for (v, p) in lifted.vertices.iter().zip(&mesh.vertices) {
                let back = transform_point(&t, &project_point(&cam, v).unwrap());
                assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
                assert!((v.norm() - (params.alpha * p.z + params.beta)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn range_is_monotone_in_depth() {
        let cam = camera();
        let t = crop_matrix(&crop(), 640, 480).unwrap();
        let params = MatchingParams { alpha: 0.8, beta: 400.0 };
        let mesh = PatchMesh {
            vertices: (0..20).map(|k| Vec3::new(112.0, 112.0, k as f64 * 3.0 - 30.0)).collect(),
            triangles: vec![],
            tex_coords: vec![Vec2::new(0.5, 0.5); 20],
            landmark_map: LandmarkMap::new(),
        };
        let out = lift_to_camera(&mesh, &cam, &t, &params, Vec3::zeros()).unwrap();
        assert!(out.vertices.windows(2).all(|w| w[1].norm() > w[0].norm() && w[1].z > w[0].z));
    }

    #[test]
    fn non_positive_range_aborts_with_indices() {
        let cam = camera();
        let mesh = PatchMesh {
            vertices: vec![
                Vec3::new(10.0, 10.0, 10.0),
                Vec3::new(10.0, 10.0, -100.0),
                Vec3::new(10.0, 10.0, -200.0),
            ],
            triangles: vec![[0, 1, 2]],
            tex_coords: vec![Vec2::new(0.5, 0.5); 3],
            landmark_map: LandmarkMap::new(),
        };
        let err = lift_to_camera(&mesh, &cam, &Mat3::identity(), &MatchingParams { alpha: 1.0, beta: 100.0 }, Vec3::zeros());
        match err {
            Err(Error::BehindCameraVertices { indices }) => assert_eq!(indices, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lifting_is_deterministic() {
        let cam = camera();
        let t = crop_matrix(&crop(), 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mesh = random_mesh(&mut rng, 2000);
        let params = MatchingParams { alpha: 1.1, beta: 500.0 };
        let a = lift_to_camera(&mesh, &cam, &t, &params, Vec3::zeros()).unwrap();
        let b = lift_to_camera(&mesh, &cam, &t, &params, Vec3::zeros()).unwrap();
        assert!(a
            .vertices
            .iter()
            .zip(&b.vertices)
            .all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits())));
    }

    #[test]
    fn validation_catches_bad_meshes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let good = random_mesh(&mut rng, 10);
        assert!(good.validate().is_ok());
        let mut m = good.clone();
        m.triangles.push([0, 1, 10]);
        assert!(matches!(m.validate(), Err(Error::MeshIntegrity(_))));
        let mut m = good.clone();
        m.tex_coords[3] = Vec2::new(1.1, 0.0);
        assert!(matches!(m.validate(), Err(Error::MeshIntegrity(_))));
        let mut m = good;
        m.landmark_map.remove(&36);
        assert!(matches!(m.validate(), Err(Error::IncompleteLandmarks(36))));
    }
}
