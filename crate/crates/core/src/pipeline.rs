//! End-to-end synthesis: fit each source, plan target poses, render and write.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_pose_pool, read_manifest, read_mesh, sample_relative_path, write_sample_images, write_text, LabelRecord,
    LabelWriter, LandmarkRecord, SampleManifestEntry, SampleRecord, LABELS_FILE,
};
use crate::error::{Error, Result};
use crate::face_model::{LandmarkList, Pose, ReferenceFaceModel};
use crate::geometry::{crop_matrix, project_point, Angles, Vec2, Vec3};
use crate::imaging::{read_rgb, warp_perspective, write_png};
use crate::matching::{estimate_params, lift_to_camera, CameraMesh, MatchingParams};
use crate::normalization::{normalize, place_for_rendering, NormalizedCamera};
use crate::novel_view::{admit_source, plan_poses, pose_seed, retarget, PlannedPose, PosePool, SynthesisPlan};
use crate::pnp::{solve_pnp, PnpOptions};
use crate::render::{
    background_schedule, composite, depth_image, downscale, rasterize, RenderConfig, ScenePool, ScheduleParams,
};
use crate::seed::{derive_seed, key_of, TAG_BACKGROUND};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LANDMARKS_FILE: &str = "landmarks.jsonl";
pub const SCENE_DIR_ENV: &str = "GAZESYNTH_SCENE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub pose_pool: PathBuf,
    pub out_dir: PathBuf,
    pub scene_dir: Option<PathBuf>,
    pub per_image: usize,
    pub max_pose_norm_deg: f64,
    pub frontal_source_max_deg: Option<f64>,
    pub bg_ratio: [u32; 3],
    pub weak_light_fraction: f64,
    pub ambient_range: [f64; 2],
    pub seed: u64,
    pub emit_224: bool,
    pub emit_depth: bool,
    pub emit_landmarks: bool,
    /// 0 uses every available core.
    pub workers: usize,
    pub focal_px: f64,
    pub face_distance_mm: f64,
    pub out_size: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.jsonl"),
            pose_pool: PathBuf::from("poses.csv"),
            out_dir: PathBuf::from("out"),
            scene_dir: None,
            per_image: 16,
            max_pose_norm_deg: 80.0,
            frontal_source_max_deg: Some(15.0),
            bg_ratio: [1, 1, 3],
            weak_light_fraction: 0.5,
            ambient_range: [0.25, 0.75],
            seed: 0,
            emit_224: false,
            emit_depth: false,
            emit_landmarks: true,
            workers: 0,
            focal_px: 960.0,
            face_distance_mm: 300.0,
            out_size: 448,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn plan(&self) -> SynthesisPlan {
        SynthesisPlan {
            per_image: self.per_image,
            max_pose_norm_deg: self.max_pose_norm_deg,
            frontal_source_max_deg: self.frontal_source_max_deg,
            master_seed: self.seed,
        }
    }

    pub fn camera(&self) -> Result<NormalizedCamera> {
        NormalizedCamera::new(self.focal_px, self.out_size, self.face_distance_mm)
    }

    pub fn schedule_params(&self, scene_count: usize) -> ScheduleParams {
        ScheduleParams {
            ratio: self.bg_ratio,
            weak_light_fraction: self.weak_light_fraction,
            ambient_range: self.ambient_range,
            scene_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().validate()?;
        self.schedule_params(1).validate()?;
        self.camera()?;
        if self.emit_224 && !self.out_size.is_multiple_of(2) {
            return Err(Error::Config("emit_224 needs an even render size".into()));
        }
        Ok(())
    }

    pub fn needs_scenes(&self) -> bool {
        self.bg_ratio[2] > 0
    }
}

/// Runs `f` on a pool with `workers` threads (0 = default size).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// A source fitted into the real camera, ready for retargeting.
#[derive(Debug, Clone)]
pub struct SourceFit {
    pub index: usize,
    pub entry: SampleManifestEntry,
    pub pnp_pose: Pose,
    pub pnp_residual_px: f64,
    /// PnP rotation with the lifted mesh's own face center as translation.
    pub source_pose: Pose,
    pub params: MatchingParams,
    pub mesh: CameraMesh,
    pub texture: RgbImage,
    pub source_head: Angles,
}

#[derive(Debug)]
pub enum SourceOutcome {
    Fitted(Box<SourceFit>),
    NotFrontal(Angles),
    LiftFailed(Error),
    Failed(Error),
}

/// PnP on the present landmarks, frontal admission, `alpha`/`beta`, lift.
pub fn fit_source(
    index: usize,
    entry: &SampleManifestEntry,
    plan: &SynthesisPlan,
    cam: &NormalizedCamera,
    model: &ReferenceFaceModel,
) -> SourceOutcome {
    let run = || -> Result<SourceOutcome> {
        let landmarks = entry.load_landmarks()?;
        let (obs, pts): (Vec<Vec2>, Vec<Vec3>) = landmarks.present().map(|(i, p)| (p, model.points()[i])).unzip();
        let sol = solve_pnp(&obs, &pts, &entry.intrinsics, &PnpOptions::default())?;
        let mesh = read_mesh(&entry.mesh_path)?;
        let gaze_target = entry.gaze_target();
        let fc_pnp = crate::face_model::face_center_camera(&sol.pose, model);
        let head = normalize(&gaze_target, &fc_pnp, &sol.pose.rotation, cam)?.head;
        if !admit_source(head, plan) {
            return Ok(SourceOutcome::NotFrontal(head));
        }
        let image = read_rgb(&entry.image_path)?;
        if image.dimensions() != (entry.intrinsics.width, entry.intrinsics.height) {
            return Err(Error::DimensionMismatch(format!(
                "{} is {}x{}, intrinsics say {}x{}",
                entry.image_path.display(),
                image.width(),
                image.height(),
                entry.intrinsics.width,
                entry.intrinsics.height
            )));
        }
        let crop_t = crop_matrix(&entry.crop, image.width(), image.height())?;
        let params = estimate_params(&mesh, &sol.pose, model)?;
        let lifted = match lift_to_camera(&mesh, &entry.intrinsics, &crop_t, &params, gaze_target) {
            Ok(m) => m,
            Err(e @ Error::BehindCameraVertices { .. }) => return Ok(SourceOutcome::LiftFailed(e)),
            Err(e) => return Err(e),
        };
        let (pw, ph) = entry.crop.patch_size();
        let texture = warp_perspective(&image, &crop_t, pw, ph)?;
        let source_pose = Pose::new(sol.pose.rotation, lifted.corner_centroid()?)?;
        Ok(SourceOutcome::Fitted(Box::new(SourceFit {
            index,
            entry: entry.clone(),
            pnp_pose: sol.pose,
            pnp_residual_px: sol.mean_residual_px,
            source_pose,
            params,
            mesh: lifted,
            texture,
            source_head: head,
        })))
    };
    run().unwrap_or_else(SourceOutcome::Failed)
}

/// One rendered novel view with its normalized labels.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: RgbImage,
    pub framebuffer: crate::render::Framebuffer,
    pub gaze: Angles,
    pub head: Angles,
    /// Mesh in the normalized camera.
    pub placed: CameraMesh,
    pub face_center: Vec3,
}

/// Retargets, normalizes, places and renders one view of a fitted source.
pub fn render_view(
    fit: &SourceFit,
    target: &Pose,
    cam: &NormalizedCamera,
    render: &RenderConfig,
    scenes: &ScenePool,
) -> Result<RenderedView> {
    let moved = retarget(&fit.mesh, &fit.source_pose, target)?;
    let face_center = moved.corner_centroid()?;
    let norm = normalize(&moved.gaze_target, &face_center, &target.rotation, cam)?;
    let placed = place_for_rendering(&moved, &face_center, &norm.rotation, cam)?;
    let framebuffer = rasterize(&placed, &fit.texture, cam, render)?;
    let image = composite(&framebuffer, &render.background, scenes)?;
    Ok(RenderedView {
        image,
        framebuffer,
        gaze: norm.gaze,
        head: norm.head,
        placed,
        face_center: norm.face_center_norm,
    })
}

/// Pose plan key of a sample: its id, so a sample's poses do not depend on
/// its position in the manifest.
pub fn sample_key(sample_id: &str) -> u64 {
    key_of(sample_id)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sources_total: usize,
    pub sources_admitted: usize,
    pub sources_rejected_frontal: usize,
    pub sources_failed: usize,
    /// Slots dropped because the pool had no pose within the norm limit.
    pub poses_filtered: usize,
    pub lambda_failures: usize,
    pub render_failures: usize,
    pub images_written: usize,
}

impl RunSummary {
    /// `written = admitted * per_image - filtered - failures`.
    pub fn is_consistent(&self, per_image: usize) -> bool {
        self.sources_admitted * per_image
            == self.images_written + self.poses_filtered + self.lambda_failures + self.render_failures
    }
}

struct Slot<'a> {
    fit: &'a SourceFit,
    pose_index: usize,
    planned: PlannedPose,
    pose_seed: u64,
}

fn resolve_scene_dir(config: &RunConfig) -> Option<PathBuf> {
    config
        .scene_dir
        .clone()
        .or_else(|| std::env::var_os(SCENE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

pub fn load_scenes(config: &RunConfig) -> Result<ScenePool> {
    if !config.needs_scenes() {
        return Ok(ScenePool::default());
    }
    let dir = resolve_scene_dir(config).ok_or_else(|| {
        Error::Config(format!("scene backgrounds requested but no scene directory given (set scene_dir or {SCENE_DIR_ENV})"))
    })?;
    let pool = ScenePool::load(&dir, config.out_size)?;
    if pool.is_empty() {
        return Err(Error::Config(format!("scene directory {} has no images", dir.display())));
    }
    Ok(pool)
}

fn check_unique_ids(entries: &[SampleManifestEntry]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(e.sample_id.as_str()) {
            return Err(Error::Config(format!("duplicate sample_id `{}` in manifest", e.sample_id)));
        }
    }
    Ok(())
}

pub fn run_synthesize(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    write_text(
        &config.out_dir.join(RUN_CONFIG_FILE),
        &serde_json::to_string_pretty(config).expect("serializable"),
    )?;
    let entries = read_manifest(&config.manifest)?;
    check_unique_ids(&entries)?;
    let pool = load_pose_pool(&config.pose_pool, config.face_distance_mm)?;
    let scenes = load_scenes(config)?;
    let pool_admissible = pool.admissible(config.max_pose_norm_deg).len();
    info!(
        "{} sources, {} pool poses ({} within {} deg), {} scenes",
        entries.len(),
        pool.entries.len(),
        pool_admissible,
        config.max_pose_norm_deg,
        scenes.len()
    );
    let summary = with_workers(config.workers, || synthesize_in_pool(config, &entries, &pool, &scenes))??;
    write_text(
        &config.out_dir.join(SUMMARY_FILE),
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    Ok(summary)
}

fn synthesize_in_pool(
    config: &RunConfig,
    entries: &[SampleManifestEntry],
    pool: &PosePool,
    scenes: &ScenePool,
) -> Result<RunSummary> {
    let plan = config.plan();
    let cam = config.camera()?;
    let model = ReferenceFaceModel::embedded();
    let mut summary = RunSummary {
        sources_total: entries.len(),
        ..Default::default()
    };

    let outcomes: Vec<SourceOutcome> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| fit_source(i, e, &plan, &cam, model))
        .collect();

    let mut fits = Vec::new();
    for (entry, outcome) in entries.iter().zip(outcomes) {
        match outcome {
            SourceOutcome::Fitted(f) => {
                summary.sources_admitted += 1;
                fits.push(*f);
            }
            SourceOutcome::NotFrontal(h) => {
                let (p, y) = h.to_degrees();
                info!("{}: skipped, head pose ({p:.1}, {y:.1}) deg is not frontal", entry.sample_id);
                summary.sources_rejected_frontal += 1;
            }
            SourceOutcome::LiftFailed(e) => {
                warn!("{}: {e}", entry.sample_id);
                summary.sources_admitted += 1;
                summary.lambda_failures += plan.per_image;
            }
            SourceOutcome::Failed(e) => {
                if e.is_run_level() {
                    return Err(e);
                }
                warn!("{}: skipped: {e}", entry.sample_id);
                summary.sources_failed += 1;
            }
        }
    }

    let mut slots = Vec::new();
    for fit in &fits {
        let key = sample_key(&fit.entry.sample_id);
        match plan_poses(pool, &plan, key) {
            Ok(planned) => slots.extend(planned.into_iter().enumerate().map(|(k, p)| Slot {
                fit,
                pose_index: k,
                planned: p,
                pose_seed: pose_seed(&plan, key),
            })),
            Err(Error::NoValidPose) => {
                warn!("{}: no pool pose within {} deg", fit.entry.sample_id, plan.max_pose_norm_deg);
                summary.poses_filtered += plan.per_image;
            }
            Err(e) => return Err(e),
        }
    }

    let schedule = background_schedule(slots.len(), config.seed, &config.schedule_params(scenes.len()))?;
    let bg_seed = derive_seed(config.seed, TAG_BACKGROUND, 0);
    let out_dir = &config.out_dir;

    let results: Vec<Result<Option<(LabelRecord, LandmarkList)>>> = slots
        .par_iter()
        .zip(schedule.par_iter())
        .enumerate()
        .map(|(slot_index, (slot, &(background, ambient)))| {
            let render = RenderConfig {
                out_size: config.out_size,
                ambient,
                background,
                emit_depth: config.emit_depth,
            };
            let view = match render_view(slot.fit, &slot.planned.pose, &cam, &render, scenes) {
                Ok(v) => v,
                Err(e) => {
                    warn!("{} pose {}: {e}", slot.fit.entry.sample_id, slot.pose_index);
                    return Ok(None);
                }
            };
            let sid = &slot.fit.entry.sample_id;
            let record = SampleRecord {
                image_224: if config.emit_224 { Some(downscale(&view.image)?) } else { None },
                image: view.image,
                gaze: view.gaze,
                head: view.head,
                bg_kind: background.kind().to_string(),
                ambient,
                source_sample_id: sid.clone(),
                pose_index: slot.pose_index,
                seed_trace: format!(
                    "seed={} poses={:016x}/{} pool={} background={:016x}/{}",
                    config.seed, slot.pose_seed, slot.pose_index, slot.planned.pool_index, bg_seed, slot_index
                ),
            };
            let label = write_sample_images(&record, out_dir)?;
            if config.emit_depth {
                let path = out_dir.join(sample_relative_path(sid, slot.pose_index, "_depth"));
                depth_image(&view.framebuffer)
                    .save(&path)
                    .map_err(|e| Error::image(&path, e))?;
            }
            let lms = projected_landmarks(&view.placed, &cam);
            debug!("{} written", label.file);
            Ok(Some((label, lms)))
        })
        .collect();

    let mut labels = LabelWriter::create(&out_dir.join(LABELS_FILE))?;
    let mut landmark_lines = Vec::new();
    for r in results {
        match r? {
            Some((label, lms)) => {
                labels.append(&label)?;
                if config.emit_landmarks {
                    landmark_lines.push(LandmarkRecord {
                        file: label.file.clone(),
                        landmarks: lms,
                    });
                }
            }
            None => summary.render_failures += 1,
        }
    }
    summary.images_written = labels.finish()?;
    if config.emit_landmarks {
        crate::dataset::write_jsonl(&out_dir.join(LANDMARKS_FILE), &landmark_lines)?;
    }
    info!(
        "{} images written ({} filtered, {} lambda failures, {} render failures)",
        summary.images_written, summary.poses_filtered, summary.lambda_failures, summary.render_failures
    );
    Ok(summary)
}

/// 68 landmarks of a placed mesh in normalized-image pixels.
pub fn projected_landmarks(mesh: &CameraMesh, cam: &NormalizedCamera) -> LandmarkList {
    LandmarkList(
        (0..crate::face_model::NUM_LANDMARKS)
            .map(|i| {
                mesh.landmark_vertex(i)
                    .ok()
                    .and_then(|v| project_point(&cam.intrinsics, &v).ok())
                    .map(|p| [p.x, p.y])
            })
            .collect(),
    )
}

/// Recomputes the labels of one source's views from the manifest, pool and
/// seed alone; matches the emitted records whatever else the run contained.
pub fn rederive_labels(config: &RunConfig, sample_id: &str) -> Result<Vec<(Angles, Angles)>> {
    let entries = read_manifest(&config.manifest)?;
    let (index, entry) = entries
        .iter()
        .enumerate()
        .find(|(_, e)| e.sample_id == sample_id)
        .ok_or_else(|| Error::Config(format!("sample `{sample_id}` not in manifest")))?;
    let pool = load_pose_pool(&config.pose_pool, config.face_distance_mm)?;
    let plan = config.plan();
    let cam = config.camera()?;
    let fit = match fit_source(index, entry, &plan, &cam, ReferenceFaceModel::embedded()) {
        SourceOutcome::Fitted(f) => f,
        SourceOutcome::NotFrontal(_) => return Ok(Vec::new()),
        SourceOutcome::LiftFailed(e) | SourceOutcome::Failed(e) => return Err(e),
    };
    plan_poses(&pool, &plan, sample_key(sample_id))?
        .iter()
        .map(|p| {
            let moved = retarget(&fit.mesh, &fit.source_pose, &p.pose)?;
            let fc = moved.corner_centroid()?;
            let n = normalize(&moved.gaze_target, &fc, &p.pose.rotation, &cam)?;
            Ok((n.gaze, n.head))
        })
        .collect()
}

/// Montage of one source rendered at each pose (black background), with
/// the gaze drawn from the face center to `face_center + ARROW_MM * gaze`.
pub const ARROW_MM: f64 = 100.0;

pub fn run_preview(
    entry: &SampleManifestEntry,
    poses: &[Angles],
    columns: Option<usize>,
    config: &RunConfig,
) -> Result<RgbImage> {
    if poses.is_empty() {
        return Err(Error::Config("preview needs at least one pose".into()));
    }
    let cam = config.camera()?;
    let plan = SynthesisPlan {
        frontal_source_max_deg: None,
        ..config.plan()
    };
    let fit = match fit_source(0, entry, &plan, &cam, ReferenceFaceModel::embedded()) {
        SourceOutcome::Fitted(f) => f,
        SourceOutcome::NotFrontal(_) => unreachable!("admission disabled"),
        SourceOutcome::LiftFailed(e) | SourceOutcome::Failed(e) => return Err(e),
    };
    let cols = columns.unwrap_or_else(|| (poses.len() as f64).sqrt().ceil() as usize).max(1);
    let rows = poses.len().div_ceil(cols);
    let cell = config.out_size;
    let mut montage = RgbImage::new(cell * cols as u32, cell * rows as u32);
    let render = RenderConfig {
        out_size: cell,
        ..Default::default()
    };
    for (i, a) in poses.iter().enumerate() {
        let target = Pose::new(crate::geometry::rotation_from_pitch_yaw(*a), Vec3::new(0.0, 0.0, config.face_distance_mm))?;
        let view = render_view(&fit, &target, &cam, &render, &ScenePool::default())?;
        let (start, end) = gaze_arrow(&view, &cam)?;
        let mut img = view.image;
        draw_arrow(&mut img, start, end, [255, 40, 40]);
        let (cx, cy) = ((i % cols) as u32 * cell, (i / cols) as u32 * cell);
        image::imageops::replace(&mut montage, &img, cx as i64, cy as i64);
    }
    Ok(montage)
}

/// Projected endpoints of the gaze arrow of a rendered view.
pub fn gaze_arrow(view: &RenderedView, cam: &NormalizedCamera) -> Result<(Vec2, Vec2)> {
    let dir = crate::geometry::pitch_yaw_to_vector(view.gaze);
    let start = project_point(&cam.intrinsics, &view.face_center)?;
    let end = project_point(&cam.intrinsics, &(view.face_center + dir * ARROW_MM))?;
    Ok((start, end))
}

pub fn draw_arrow(img: &mut RgbImage, start: Vec2, end: Vec2, color: [u8; 3]) {
    let mut plot = |p: Vec2| {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (x, y) = (p.x.round() as i64 + dx, p.y.round() as i64 + dy);
                if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                    img.put_pixel(x as u32, y as u32, image::Rgb(color));
                }
            }
        }
    };
    let line = |a: Vec2, b: Vec2, plot: &mut dyn FnMut(Vec2)| {
        let steps = (b - a).abs().max().ceil().max(1.0) as usize;
        for s in 0..=steps {
            plot(a + (b - a) * (s as f64 / steps as f64));
        }
    };
    line(start, end, &mut plot);
    let d = end - start;
    let len = d.norm();
    if len > 1e-9 {
        let u = d / len;
        let head = 0.25 * len;
        for side in [-1.0, 1.0] {
            let n = Vec2::new(-u.y, u.x) * side;
            line(end, end - u * head + n * head * 0.5, &mut plot);
        }
    }
}

pub fn write_preview(path: &Path, img: &RgbImage) -> Result<()> {
    write_png(path, img)
}
