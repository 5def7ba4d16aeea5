//! Manifests, patch meshes, label files, pose pools and sample output.
//!
//! Manifests and labels are JSON Lines. Angles are stored in radians.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::face_model::{LandmarkList, Landmarks2D};
use crate::geometry::{Angles, CameraIntrinsics, CropSpec, Vec2, Vec3};
use crate::imaging::write_png;
use crate::matching::{LandmarkMap, PatchMesh};
use crate::novel_view::PosePool;

pub const LABELS_FILE: &str = "labels.jsonl";

/// Inline landmark list or a path to a JSON file holding one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LandmarkSource {
    Inline(LandmarkList),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifestEntry {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub mesh_path: PathBuf,
    pub landmarks: LandmarkSource,
    pub intrinsics: CameraIntrinsics,
    pub crop: CropSpec,
    pub gaze_target_mm: [f64; 3],
}

impl SampleManifestEntry {
    pub fn gaze_target(&self) -> Vec3 {
        Vec3::from(self.gaze_target_mm)
    }

    pub fn load_landmarks(&self) -> Result<Landmarks2D> {
        match &self.landmarks {
            LandmarkSource::Inline(list) => list.to_landmarks(),
            LandmarkSource::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let list: LandmarkList = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    line: e.line(),
                    message: format!("{}: {e}", p.display()),
                })?;
                list.to_landmarks()
            }
        }
    }

    /// Rewrites relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.image_path);
        fix(&mut self.mesh_path);
        if let LandmarkSource::Path(p) = &mut self.landmarks {
            fix(p);
        }
    }
}

fn valid_sample_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\'])
}

fn field<T: DeserializeOwned>(obj: &serde_json::Map<String, Value>, name: &str, line: usize) -> Result<T> {
    let v = obj.get(name).ok_or_else(|| Error::Schema {
        line,
        field: name.into(),
    })?;
    serde_json::from_value(v.clone()).map_err(|_| Error::Schema {
        line,
        field: name.into(),
    })
}

/// Fields are checked one by one so the error names the first bad one,
/// nested fields as `parent.child`.
fn parse_manifest_line(text: &str, line: usize) -> Result<SampleManifestEntry> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    let schema = |f: &str| Error::Schema { line, field: f.into() };

    let sample_id: String = field(obj, "sample_id", line)?;
    if !valid_sample_id(&sample_id) {
        return Err(schema("sample_id"));
    }
    let image_path = field(obj, "image_path", line)?;
    let mesh_path = field(obj, "mesh_path", line)?;
    let landmarks = field(obj, "landmarks", line)?;

    let nested = |parent: &str, names: &[&str]| -> Result<()> {
        let inner = obj.get(parent).and_then(Value::as_object).ok_or_else(|| schema(parent))?;
        for n in names {
            if !inner.get(*n).is_some_and(Value::is_number) {
                return Err(schema(&format!("{parent}.{n}")));
            }
        }
        Ok(())
    };
    nested("intrinsics", &["fx", "fy", "cx", "cy", "width", "height"])?;
    let intrinsics: CameraIntrinsics = field(obj, "intrinsics", line)?;
    intrinsics.validate().map_err(|_| schema("intrinsics"))?;
    nested("crop", &["center_x", "center_y", "box_w", "box_h", "scale_x", "scale_y"])?;
    let crop: CropSpec = field(obj, "crop", line)?;
    crop.validate().map_err(|_| schema("crop"))?;
    let gaze_target_mm: [f64; 3] = field(obj, "gaze_target_mm", line)?;
    if gaze_target_mm.iter().any(|v| !v.is_finite()) {
        return Err(schema("gaze_target_mm"));
    }
    Ok(SampleManifestEntry {
        sample_id,
        image_path,
        mesh_path,
        landmarks,
        intrinsics,
        crop,
        gaze_target_mm,
    })
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Reads a manifest; relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<SampleManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let mut e = parse_manifest_line(&text, line)?;
            e.resolve_paths(base);
            Ok(e)
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_manifest(path: &Path, entries: &[SampleManifestEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn landmarks_sidecar_path(mesh_path: &Path) -> PathBuf {
    let mut s = mesh_path.as_os_str().to_owned();
    s.push(".landmarks.json");
    PathBuf::from(s)
}

fn obj_index(token: &str, count: usize, line: usize) -> Result<Option<usize>> {
    if token.is_empty() {
        return Ok(None);
    }
    let i: i64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad face index `{token}`"),
    })?;
    if i < 1 || i as usize > count {
        return Err(Error::MeshIntegrity(format!(
            "line {line}: face index {i} outside 1..={count}"
        )));
    }
    Ok(Some(i as usize - 1))
}

fn parse_floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N]> {
    if parts.len() < N {
        return Err(Error::Parse {
            line,
            message: format!("expected {N} numbers"),
        });
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad number `{p}`"),
        })?;
    }
    Ok(out)
}

/// Parses OBJ text without the landmark sidecar. Polygons are fan-triangulated.
pub fn parse_obj(text: &str) -> Result<PatchMesh> {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces: Vec<(usize, Vec<&str>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let parts: Vec<&str> = raw.split_whitespace().collect();
        match parts.first() {
            Some(&"v") => vertices.push(Vec3::from(parse_floats::<3>(&parts[1..], line)?)),
            Some(&"vt") => uvs.push(Vec2::from(parse_floats::<2>(&parts[1..], line)?)),
            Some(&"f") => faces.push((line, parts[1..].to_vec())),
            _ => {}
        }
    }

    let n = vertices.len();
    let mut tex: Vec<Option<Vec2>> = vec![None; n];
    let mut triangles = Vec::new();
    for (line, refs) in faces {
        if refs.len() < 3 {
            return Err(Error::MeshIntegrity(format!("line {line}: face with fewer than 3 vertices")));
        }
        let mut idx = Vec::with_capacity(refs.len());
        for r in refs {
            let mut it = r.split('/');
            let v = obj_index(it.next().unwrap_or(""), n, line)?
                .ok_or_else(|| Error::MeshIntegrity(format!("line {line}: missing vertex index")))?;
            if let Some(t) = obj_index(it.next().unwrap_or(""), uvs.len(), line)? {
                tex[v].get_or_insert(uvs[t]);
            }
            idx.push(v as u32);
        }
        for k in 1..idx.len() - 1 {
            triangles.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    // vertices without an explicit vt reference fall back to the vt of the same index
    let tex_coords = tex
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            t.or_else(|| uvs.get(i).copied())
                .ok_or_else(|| Error::MeshIntegrity(format!("vertex {} has no texture coordinate", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchMesh {
        vertices,
        triangles,
        tex_coords,
        landmark_map: LandmarkMap::new(),
    })
}

/// Reads an OBJ mesh with `(u, v, d)` vertices and its `<path>.landmarks.json` sidecar.
pub fn read_mesh(path: &Path) -> Result<PatchMesh> {
    let sidecar = landmarks_sidecar_path(path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = parse_obj(&text)?;
    if !sidecar.is_file() {
        return Err(Error::MissingLandmarks(sidecar));
    }
    let side = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    mesh.landmark_map = serde_json::from_str(&side).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", sidecar.display()),
    })?;
    mesh.validate()?;
    Ok(mesh)
}

pub fn format_obj(mesh: &PatchMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 64);
    s.push_str("# patch mesh: v = (u, v, d) in patch pixels, d away from the camera\n");
    s.push_str("# vt = texture coordinates normalized to the patch, origin top-left\n");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
    }
    for t in &mesh.tex_coords {
        let _ = writeln!(s, "vt {:.6} {:.6}", t.x, t.y);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
    }
    s
}

pub fn write_mesh(path: &Path, mesh: &PatchMesh) -> Result<()> {
    write_text(path, &format_obj(mesh))?;
    let side = serde_json::to_string(&mesh.landmark_map).expect("serializable");
    write_text(&landmarks_sidecar_path(path), &side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub file: String,
    pub gaze_pitch: f64,
    pub gaze_yaw: f64,
    pub head_pitch: f64,
    pub head_yaw: f64,
    pub bg_kind: String,
    pub ambient: f64,
    pub source_sample_id: String,
    pub pose_index: usize,
    pub seed_trace: String,
}

pub const BG_KINDS: [&str; 4] = ["black", "solid_color", "scene", "real"];

impl LabelRecord {
    pub fn gaze(&self) -> Angles {
        Angles::new(self.gaze_pitch, self.gaze_yaw)
    }

    pub fn head(&self) -> Angles {
        Angles::new(self.head_pitch, self.head_yaw)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaze().is_finite() && self.head().is_finite()) {
            return Err(Error::Config(format!("{}: non-finite angle", self.file)));
        }
        if !BG_KINDS.contains(&self.bg_kind.as_str()) {
            return Err(Error::Config(format!("{}: unknown bg_kind `{}`", self.file, self.bg_kind)));
        }
        if !(self.ambient > 0.0 && self.ambient <= 1.0) {
            return Err(Error::Config(format!("{}: ambient {} outside (0, 1]", self.file, self.ambient)));
        }
        Ok(())
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Appends label lines in call order; the single owner serializes writes.
pub struct LabelWriter {
    path: PathBuf,
    out: BufWriter<File>,
    count: usize,
}

impl LabelWriter {
    /// Truncates any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            count: 0,
        })
    }

    pub fn append(&mut self, record: &LabelRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("serializable");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.count)
    }
}

/// A rendered image with everything needed for its label line.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image: RgbImage,
    pub image_224: Option<RgbImage>,
    pub gaze: Angles,
    pub head: Angles,
    pub bg_kind: String,
    pub ambient: f64,
    pub source_sample_id: String,
    pub pose_index: usize,
    pub seed_trace: String,
}

pub fn sample_relative_path(source_sample_id: &str, pose_index: usize, suffix: &str) -> String {
    format!("{source_sample_id}/{pose_index}{suffix}.png")
}

/// Writes the image files of one sample and returns its label. Distinct
/// samples use distinct paths, so calls may run concurrently.
pub fn write_sample_images(record: &SampleRecord, out_dir: &Path) -> Result<LabelRecord> {
    let file = sample_relative_path(&record.source_sample_id, record.pose_index, "");
    write_png(&out_dir.join(&file), &record.image)?;
    if let Some(small) = &record.image_224 {
        write_png(&out_dir.join(sample_relative_path(&record.source_sample_id, record.pose_index, "_224")), small)?;
    }
    Ok(LabelRecord {
        file,
        gaze_pitch: record.gaze.pitch,
        gaze_yaw: record.gaze.yaw,
        head_pitch: record.head.pitch,
        head_yaw: record.head.yaw,
        bg_kind: record.bg_kind.clone(),
        ambient: record.ambient,
        source_sample_id: record.source_sample_id.clone(),
        pose_index: record.pose_index,
        seed_trace: record.seed_trace.clone(),
    })
}

pub fn write_sample(record: &SampleRecord, out_dir: &Path, labels: &mut LabelWriter) -> Result<LabelRecord> {
    let label = write_sample_images(record, out_dir)?;
    labels.append(&label)?;
    Ok(label)
}

/// Pose pool from a CSV of `pitch_deg,yaw_deg` rows (optional header) or a
/// labels file, whose head angles are used.
pub fn load_pose_pool(path: &Path, face_distance_mm: f64) -> Result<PosePool> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let angles = if ext == "csv" {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_pose_csv(&text)?
    } else {
        read_labels(path)?.iter().map(LabelRecord::head).collect()
    };
    if angles.is_empty() {
        return Err(Error::Config(format!("pose pool {} is empty", path.display())));
    }
    PosePool::from_angles(&angles, face_distance_mm, path.display().to_string())
}

pub fn parse_pose_csv(text: &str) -> Result<Vec<Angles>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = parts.iter().take(2).map(|p| p.parse().ok()).collect();
        match nums {
            Some(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => out.push(Angles::from_degrees(v[0], v[1])),
            _ if i == 0 && out.is_empty() => {} // header
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `pitch_deg,yaw_deg`, got `{line}`"),
                })
            }
        }
    }
    Ok(out)
}

pub fn format_pose_csv(angles: &[Angles]) -> String {
    let mut s = String::from("pitch_deg,yaw_deg\n");
    for a in angles {
        let (p, y) = a.to_degrees();
        let _ = writeln!(s, "{p},{y}");
    }
    s
}

/// 2D landmarks of one emitted image, used for mask-based augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub file: String,
    pub landmarks: LandmarkList,
}

pub fn read_landmark_records(path: &Path) -> Result<BTreeMap<String, LandmarkList>> {
    let mut out = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let r: LandmarkRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.insert(r.file, r.landmarks);
    }
    Ok(out)
}
