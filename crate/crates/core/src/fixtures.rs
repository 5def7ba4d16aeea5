//! Procedural synthetic faces with known geometry, for tests and demos.
//!
//! A smooth face-shaped height field plus the 68 reference landmarks is
//! placed at a chosen head pose, projected through the camera and crop, and
//! given depths `d = (range - beta) / alpha` so that lifting with the
//! ground-truth `alpha`, `beta` lands every vertex back on its placed
//! position. The seed only changes the painted texture.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::dataset::{write_manifest, write_mesh, LandmarkSource, SampleManifestEntry};
use crate::error::{Error, Result};
use crate::face_model::{face_center_camera, LandmarkList, Pose, ReferenceFaceModel, NUM_LANDMARKS};
use crate::geometry::{
    crop_matrix, pitch_yaw_to_vector, project_point, rotation_from_pitch_yaw, rotation_z, transform_point, Angles,
    CameraIntrinsics, CropSpec, Mat3, Vec2, Vec3,
};
use crate::imaging::write_png;
use crate::matching::PatchMesh;
use crate::seed::{rng_for, TAG_TEXTURE};

/// Patch side length produced by [`auto_crop`].
pub const PATCH_SIZE: f64 = 224.0;
/// Typical corner depth in patch units.
const DEPTH_OFFSET_PX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFaceSpec {
    pub sample_id: String,
    pub seed: u64,
    /// Grid resolution `10 * 2^level + 1` per side; level 3 gives about 5k vertices.
    pub subdivision: u32,
    pub pose: Pose,
    pub camera: CameraIntrinsics,
    /// `None` fits a square 224 px patch around the projected face.
    pub crop: Option<CropSpec>,
    pub gaze_target_mm: Vec3,
}

impl SyntheticFaceSpec {
    pub fn new(sample_id: impl Into<String>, seed: u64, pose: Pose) -> Self {
        Self {
            sample_id: sample_id.into(),
            seed,
            subdivision: 3,
            pose,
            camera: default_camera(),
            crop: None,
            gaze_target_mm: Vec3::zeros(),
        }
    }
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(900.0, 900.0, 320.0, 240.0, 640, 480).expect("valid camera")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub alpha: f64,
    pub beta: f64,
    pub pose: Pose,
    pub face_center: Vec3,
    /// Placed camera-space position of every mesh vertex.
    pub camera_vertices: Vec<Vec3>,
    pub crop_transform: Mat3,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub mesh: PatchMesh,
    pub entry: SampleManifestEntry,
    pub truth: GroundTruth,
    pub image: RgbImage,
}

const FACE_HALF_WIDTH: f64 = 75.0;
const FACE_HALF_HEIGHT: f64 = 103.0;
const FACE_CENTER_Y: f64 = 12.0;

/// Face surface in the head frame; the face bulges towards `-z`.
fn surface_z(x: f64, y: f64) -> f64 {
    let r2 = (x / FACE_HALF_WIDTH).powi(2) + ((y - FACE_CENTER_Y) / FACE_HALF_HEIGHT).powi(2);
    let dome = 75.0 - 85.0 * (1.0 - r2.min(1.0)).sqrt();
    let nose = -28.0 * (-(x * x) / (2.0 * 12.0 * 12.0) - (y - 10.0).powi(2) / (2.0 * 22.0 * 22.0)).exp();
    dome + nose
}

/// Head-frame vertices and triangles of the face surface.
pub fn face_surface(level: u32) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let n = 10 * (1usize << level.min(8)) + 1;
    let mut index = vec![None; n * n];
    let mut vertices = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x = -FACE_HALF_WIDTH + 2.0 * FACE_HALF_WIDTH * i as f64 / (n - 1) as f64;
            let y = FACE_CENTER_Y - FACE_HALF_HEIGHT + 2.0 * FACE_HALF_HEIGHT * j as f64 / (n - 1) as f64;
            let r2 = (x / FACE_HALF_WIDTH).powi(2) + ((y - FACE_CENTER_Y) / FACE_HALF_HEIGHT).powi(2);
            if r2 <= 1.0 {
                index[j * n + i] = Some(vertices.len() as u32);
                vertices.push(Vec3::new(x, y, surface_z(x, y)));
            }
        }
    }
    let mut triangles = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let q = [index[j * n + i], index[j * n + i + 1], index[(j + 1) * n + i + 1], index[(j + 1) * n + i]];
            if let [Some(a), Some(b), Some(c), Some(d)] = q {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    }
    (vertices, triangles)
}

/// Square crop around the projected points with 20% margin, resized to 224 px.
pub fn auto_crop(pixels: &[Vec2]) -> CropSpec {
    let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
    for p in pixels {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let side = 1.2 * (hi - lo).max();
    let c = (lo + hi) / 2.0;
    CropSpec {
        center_x: c.x,
        center_y: c.y,
        box_w: side,
        box_h: side,
        scale_x: PATCH_SIZE / side,
        scale_y: PATCH_SIZE / side,
    }
}

fn paint_texture(seed: u64, camera: &CameraIntrinsics, features: &[Vec2]) -> RgbImage {
    let mut rng = rng_for(seed, TAG_TEXTURE, 0);
    let base: [f64; 3] = [rng.random_range(150.0..230.0), rng.random_range(100.0..170.0), rng.random_range(70.0..140.0)];
    let freq = Vec2::new(rng.random_range(0.02..0.12), rng.random_range(0.02..0.12));
    let phase: [f64; 3] = rng.random();
    let amp = rng.random_range(10.0..35.0);
    let feature_color: [f64; 3] = [rng.random_range(0.0..80.0), rng.random_range(0.0..60.0), rng.random_range(0.0..90.0)];
    RgbImage::from_fn(camera.width, camera.height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let near = features
            .iter()
            .map(|f| (f.x - xf).powi(2) + (f.y - yf).powi(2))
            .fold(f64::INFINITY, f64::min);
        let blend = (-near / 18.0).exp();
        let mut px = [0u8; 3];
        for c in 0..3 {
            let wave = (freq.x * xf + std::f64::consts::TAU * phase[c]).sin() * (freq.y * yf + 3.1 * phase[c]).cos();
            let v = base[c] + amp * wave;
            px[c] = (v * (1.0 - blend) + feature_color[c] * blend).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

pub fn generate_face(spec: &SyntheticFaceSpec) -> Result<Fixture> {
    spec.pose
        .validate()
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    spec.camera.validate()?;
    if spec.gaze_target_mm.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("non-finite gaze target".into()));
    }
    let model = ReferenceFaceModel::embedded();
    let (surface, triangles) = face_surface(spec.subdivision);
    let head: Vec<Vec3> = surface.iter().chain(model.points()).copied().collect();
    let xf = spec.pose.transform();
    let placed: Vec<Vec3> = head.iter().map(|p| xf.apply(p)).collect();
    if let Some(p) = placed.iter().find(|p| !(p.z > 1.0)) {
        return Err(Error::InvalidSpec(format!("pose puts a vertex behind the camera (z = {})", p.z)));
    }
    let pixels: Vec<Vec2> = placed
        .iter()
        .map(|p| project_point(&spec.camera, p))
        .collect::<Result<_>>()
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let crop = spec.crop.unwrap_or_else(|| auto_crop(&pixels));
    let crop_t = crop_matrix(&crop, spec.camera.width, spec.camera.height).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let (pw, ph) = crop.patch_size();

    let face_center = face_center_camera(&spec.pose, model);
    let alpha = face_center.z / (spec.camera.fx * crop.scale_x);
    let beta = face_center.norm() - alpha * DEPTH_OFFSET_PX;

    let mut vertices = Vec::with_capacity(placed.len());
    let mut tex_coords = Vec::with_capacity(placed.len());
    for (p, px) in placed.iter().zip(&pixels) {
        let uv = transform_point(&crop_t, px);
        let t = Vec2::new(uv.x / (pw - 1) as f64, uv.y / (ph - 1) as f64);
        if !(0.0..=1.0).contains(&t.x) || !(0.0..=1.0).contains(&t.y) {
            return Err(Error::InvalidSpec(format!("vertex projects outside the crop at ({}, {})", uv.x, uv.y)));
        }
        vertices.push(Vec3::new(uv.x, uv.y, (p.norm() - beta) / alpha));
        tex_coords.push(t);
    }
    let offset = surface.len();
    let mesh = PatchMesh {
        vertices,
        triangles,
        tex_coords,
        landmark_map: (0..NUM_LANDMARKS).map(|i| (i, offset + i)).collect(),
    };
    mesh.validate()?;

    let landmarks_2d: Vec<Option<Vec2>> = pixels[offset..].iter().map(|&p| Some(p)).collect();
    let features: Vec<Vec2> = [37, 38, 40, 41, 43, 44, 46, 47, 30, 51, 57, 62, 66]
        .iter()
        .map(|&i| pixels[offset + i])
        .collect();
    let image = paint_texture(spec.seed, &spec.camera, &features);

    let entry = SampleManifestEntry {
        sample_id: spec.sample_id.clone(),
        image_path: format!("images/{}.png", spec.sample_id).into(),
        mesh_path: format!("meshes/{}.obj", spec.sample_id).into(),
        landmarks: LandmarkSource::Inline(LandmarkList::from_points(&landmarks_2d)),
        intrinsics: spec.camera,
        crop,
        gaze_target_mm: spec.gaze_target_mm.into(),
    };
    Ok(Fixture {
        mesh,
        entry,
        truth: GroundTruth {
            alpha,
            beta,
            pose: spec.pose,
            face_center,
            camera_vertices: placed,
            crop_transform: crop_t,
        },
        image,
    })
}

/// Head pose with the given pitch/yaw (degrees), roll and face-center placement.
pub fn head_pose(pitch_deg: f64, yaw_deg: f64, roll_deg: f64, face_center: Vec3) -> Result<Pose> {
    let r = rotation_from_pitch_yaw(Angles::from_degrees(pitch_deg, yaw_deg)) * rotation_z(roll_deg.to_radians());
    // the model's six-corner centroid is its origin, so t is the face center
    Pose::new(r, face_center)
}

/// Random head pose: pitch/yaw uniform in the disk of radius `max_norm_deg`,
/// roll uniform in `+-roll_deg`, face center at `|x| < 60`, `|y| < 40` and
/// the given depth range.
pub fn random_pose(rng: &mut impl Rng, max_norm_deg: f64, roll_deg: f64, z_mm: std::ops::Range<f64>) -> Pose {
    let (p, y) = loop {
        let p: f64 = rng.random_range(-max_norm_deg..max_norm_deg);
        let y: f64 = rng.random_range(-max_norm_deg..max_norm_deg);
        if p.hypot(y) <= max_norm_deg {
            break (p, y);
        }
    };
    let roll = if roll_deg > 0.0 { rng.random_range(-roll_deg..roll_deg) } else { 0.0 };
    let t = Vec3::new(rng.random_range(-60.0..60.0), rng.random_range(-40.0..40.0), rng.random_range(z_mm));
    head_pose(p, y, roll, t).expect("valid random pose")
}

/// `n` near-frontal fixtures with varied placement, gaze target and texture.
/// Head angles stay under 10 degrees so every source passes frontal admission.
pub fn demo_specs(n: usize, seed: u64, subdivision: u32) -> Vec<SyntheticFaceSpec> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, "fixture", i as u64);
            let pose = head_pose(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-8.0..8.0),
                Vec3::new(rng.random_range(-40.0..40.0), rng.random_range(-30.0..30.0), rng.random_range(450.0..650.0)),
            )
            .expect("valid demo pose");
            let gaze_dir = pitch_yaw_to_vector(Angles::from_degrees(rng.random_range(-25.0..25.0), rng.random_range(-35.0..35.0)));
            let fc = pose.translation;
            let mut spec = SyntheticFaceSpec::new(format!("s{i:03}"), rng.random(), pose);
            spec.subdivision = subdivision;
            spec.gaze_target_mm = fc + gaze_dir * rng.random_range(300.0..600.0);
            spec
        })
        .collect()
}

/// Writes images, meshes and `manifest.jsonl` under `dir`; returns the manifest path.
pub fn write_fixture_set(dir: &Path, fixtures: &[Fixture]) -> Result<std::path::PathBuf> {
    for f in fixtures {
        write_png(&dir.join(&f.entry.image_path), &f.image)?;
        write_mesh(&dir.join(&f.entry.mesh_path), &f.mesh)?;
    }
    let entries: Vec<SampleManifestEntry> = fixtures.iter().map(|f| f.entry.clone()).collect();
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &entries)?;
    Ok(path)
}

/// Procedural scene images for background compositing.
pub fn demo_scenes(n: usize, seed: u64, size: u32) -> Vec<RgbImage> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, "scene", i as u64);
            let a: [f64; 3] = rng.random();
            let b: [f64; 3] = rng.random();
            let f = rng.random_range(0.01..0.08);
            RgbImage::from_fn(size, size * 3 / 4, |x, y| {
                let t = ((x as f64 * f).sin() * (y as f64 * f * 0.7).cos() + 1.0) / 2.0;
                Rgb(std::array::from_fn(|c| ((a[c] * (1.0 - t) + b[c] * t) * 255.0).round() as u8))
            })
        })
        .collect()
}

/// Integer-degree pitch/yaw grid with spacing `step_deg` inside the norm disk.
pub fn integer_pose_grid(step_deg: u32, max_norm_deg: f64) -> Vec<Angles> {
    let step = step_deg.max(1) as i64;
    let lim = max_norm_deg.floor() as i64 / step * step;
    let mut out = Vec::new();
    for p in (-lim..=lim).step_by(step as usize) {
        for y in (-lim..=lim).step_by(step as usize) {
            if (p as f64).hypot(y as f64) <= max_norm_deg {
                out.push(Angles::from_degrees(p as f64, y as f64));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub manifest: std::path::PathBuf,
    pub pose_pool: std::path::PathBuf,
    pub scene_dir: std::path::PathBuf,
    pub sources: usize,
}

/// Fixture sources, a pose-pool CSV and procedural scenes, ready for `synthesize`.
pub fn write_demo_dataset(
    dir: &Path,
    sources: usize,
    seed: u64,
    subdivision: u32,
    scenes: usize,
    poses: &[Angles],
) -> Result<DemoDataset> {
    let fixtures: Vec<Fixture> = demo_specs(sources, seed, subdivision)
        .iter()
        .map(generate_face)
        .collect::<Result<_>>()?;
    let manifest = write_fixture_set(dir, &fixtures)?;
    let pose_pool = dir.join("poses.csv");
    crate::dataset::write_text(&pose_pool, &crate::dataset::format_pose_csv(poses))?;
    let scene_dir = dir.join("scenes");
    for (i, img) in demo_scenes(scenes, seed, 320).iter().enumerate() {
        write_png(&scene_dir.join(format!("scene_{i:03}.png")), img)?;
    }
    Ok(DemoDataset {
        manifest,
        pose_pool,
        scene_dir,
        sources,
    })
}
