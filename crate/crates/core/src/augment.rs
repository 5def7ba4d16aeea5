//! Label-aware augmentation of an existing image set: background switching
//! inside a landmark hull mask, and horizontal flips with yaw negation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_labels, read_landmark_records, LabelRecord, LabelWriter, LABELS_FILE};
use crate::error::{Error, Result};
use crate::face_model::LandmarkList;
use crate::imaging::{read_rgb, write_png};
use crate::render::{face_mask_from_landmarks, flip_horizontal, switch_background, ScenePool};
use crate::seed::{rng_for, TAG_AUGMENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Bg,
    Flip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub labels: PathBuf,
    /// Directory the label `file` paths are relative to.
    pub images_dir: PathBuf,
    /// Landmark JSONL keyed by label file; needed by the background mode.
    pub landmarks: Option<PathBuf>,
    pub scene_dir: Option<PathBuf>,
    pub mode: AugmentMode,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentSummary {
    pub inputs: usize,
    pub written: usize,
    pub skipped: usize,
}

fn augment_one(
    index: usize,
    label: &LabelRecord,
    cfg: &AugmentConfig,
    landmarks: &BTreeMap<String, LandmarkList>,
    scenes: &BTreeMap<u32, ScenePool>,
) -> Result<Option<LabelRecord>> {
    let image = read_rgb(&cfg.images_dir.join(&label.file))?;
    let (out, record) = match cfg.mode {
        AugmentMode::Flip => {
            let (img, g, h) = flip_horizontal(&image, label.gaze(), label.head());
            let mut r = label.clone();
            (r.gaze_pitch, r.gaze_yaw, r.head_pitch, r.head_yaw) = (g.pitch, g.yaw, h.pitch, h.yaw);
            (img, r)
        }
        AugmentMode::Bg => {
            let Some(list) = landmarks.get(&label.file) else {
                warn!("{}: no landmarks, skipped", label.file);
                return Ok(None);
            };
            let pts: Vec<_> = list
                .0
                .iter()
                .flatten()
                .map(|&[x, y]| crate::geometry::Vec2::new(x, y))
                .collect();
            let mask = match face_mask_from_landmarks(&pts, image.width(), image.height()) {
                Ok(m) => m,
                Err(e) => {
                    warn!("{}: {e}, skipped", label.file);
                    return Ok(None);
                }
            };
            let Some(pool) = scenes.get(&image.width()).filter(|_| image.width() == image.height()) else {
                warn!("{}: no scenes prepared for a {}x{} image", label.file, image.width(), image.height());
                return Ok(None);
            };
            let mut rng = rng_for(cfg.seed, TAG_AUGMENT, index as u64);
            let scene = pool.get(rng.random_range(0..pool.len()))?;
            let mut r = label.clone();
            r.bg_kind = "scene".into();
            (switch_background(&image, &mask, scene)?, r)
        }
    };
    write_png(&cfg.out_dir.join(&record.file), &out)?;
    Ok(Some(record))
}

pub fn run_augment(cfg: &AugmentConfig) -> Result<AugmentSummary> {
    let labels = read_labels(&cfg.labels)?;
    let landmarks = match (cfg.mode, &cfg.landmarks) {
        (AugmentMode::Bg, Some(p)) => read_landmark_records(p)?,
        (AugmentMode::Bg, None) => {
            return Err(Error::Config("background mode needs a landmarks file".into()));
        }
        _ => BTreeMap::new(),
    };
    let mut scenes = BTreeMap::new();
    if cfg.mode == AugmentMode::Bg {
        let dir = cfg
            .scene_dir
            .as_deref()
            .ok_or_else(|| Error::Config("background mode needs a scene directory".into()))?;
        // scene pools are prepared per distinct square image size
        let mut sizes: Vec<u32> = Vec::new();
        for l in &labels {
            if let Ok((w, h)) = image::image_dimensions(cfg.images_dir.join(&l.file)) {
                if w == h && !sizes.contains(&w) {
                    sizes.push(w);
                }
            }
        }
        for s in sizes {
            let pool = ScenePool::load(dir, s)?;
            if pool.is_empty() {
                return Err(Error::Config(format!("scene directory {} has no images", dir.display())));
            }
            scenes.insert(s, pool);
        }
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let results: Vec<Result<Option<LabelRecord>>> = crate::pipeline::with_workers(cfg.workers, || {
        labels
            .par_iter()
            .enumerate()
            .map(|(i, l)| augment_one(i, l, cfg, &landmarks, &scenes))
            .collect()
    })?;
    let mut writer = LabelWriter::create(&cfg.out_dir.join(LABELS_FILE))?;
    let mut summary = AugmentSummary {
        inputs: labels.len(),
        ..Default::default()
    };
    for (label, r) in labels.iter().zip(results) {
        match r {
            Ok(Some(rec)) => writer.append(&rec)?,
            Ok(None) => summary.skipped += 1,
            Err(e @ (Error::Io { .. } | Error::Image { .. })) if !Path::new(&cfg.images_dir.join(&label.file)).exists() => {
                warn!("{}: {e}, skipped", label.file);
                summary.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    summary.written = writer.finish()?;
    Ok(summary)
}
