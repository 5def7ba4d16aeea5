//! Software rasterizer, background compositing and the image-level
//! augmentation operations.
//!
//! Pixel centers sit on integer coordinates. Coverage uses a top-left fill
//! rule, so two triangles sharing an edge never both claim a pixel on it.
//! Depth ties go to the lower triangle index. Output is independent of how
//! rows are split across threads because every pixel is evaluated from the
//! triangle data directly.

use std::path::Path;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Angles, Vec2};
use crate::imaging::{center_crop_square, gaussian_blur, read_rgb, resize_area, sample_bilinear, to_u8};
use crate::matching::CameraMesh;
use crate::normalization::NormalizedCamera;
use crate::seed::{rng_for, TAG_BACKGROUND};

pub const SCENE_BLUR_SIGMA: f64 = 3.0;
const BAND_ROWS: usize = 16;
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSpec {
    Black,
    SolidColor { color: [u8; 3] },
    Scene { scene_id: usize },
}

impl BackgroundSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackgroundSpec::Black => "black",
            BackgroundSpec::SolidColor { .. } => "solid_color",
            BackgroundSpec::Scene { .. } => "scene",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub out_size: u32,
    pub ambient: f64,
    pub background: BackgroundSpec,
    pub emit_depth: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            out_size: 448,
            ambient: 1.0,
            background: BackgroundSpec::Black,
            emit_depth: false,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_size == 0 {
            return Err(Error::Config("render size must be positive".into()));
        }
        if !(self.ambient > 0.0 && self.ambient <= 1.0) {
            return Err(Error::Config(format!("ambient must be in (0, 1], got {}", self.ambient)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    /// Alpha is 255 on covered pixels and 0 elsewhere.
    pub color: RgbaImage,
    /// Camera-space z in millimetres; `+inf` where nothing was drawn.
    pub depth: Vec<f64>,
    pub coverage: Vec<bool>,
    pub degenerate_triangles: usize,
}

impl Framebuffer {
    pub fn width(&self) -> u32 {
        self.color.width()
    }

    pub fn height(&self) -> u32 {
        self.color.height()
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.coverage[(y * self.width() + x) as usize]
    }

    pub fn coverage_mask(&self) -> FaceMask {
        FaceMask {
            width: self.width(),
            height: self.height(),
            bits: self.coverage.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl FaceMask {
    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Edge function: positive when `p` is on the interior side of `a -> b` for
/// triangles with positive area.
fn edge(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// With y pointing down and positive-area winding, top edges run
/// horizontally to the right and left edges run upwards.
fn is_top_left(a: Vec2, b: Vec2) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

fn inside(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

#[derive(Debug, Clone, Copy)]
struct ScreenTri {
    p: [Vec2; 3],
    inv_z: [f64; 3],
    tex: [Vec2; 3],
    area: f64,
    top_left: [bool; 3],
    y_min: i64,
    y_max: i64,
    x_min: i64,
    x_max: i64,
}

fn setup_triangle(p: [Vec2; 3], z: [f64; 3], tex: [Vec2; 3], width: u32, height: u32) -> Option<ScreenTri> {
    let (mut p, mut z, mut tex) = (p, z, tex);
    let mut area = edge(p[0], p[1], p[2]);
    if !area.is_finite() || area.abs() <= DEGENERATE_AREA {
        return None;
    }
    if area < 0.0 {
        p.swap(1, 2);
        z.swap(1, 2);
        tex.swap(1, 2);
        area = -area;
    }
    let lo = |a: f64, b: f64, c: f64| a.min(b).min(c).ceil() as i64;
    let hi = |a: f64, b: f64, c: f64| a.max(b).max(c).floor() as i64;
    Some(ScreenTri {
        p,
        inv_z: [1.0 / z[0], 1.0 / z[1], 1.0 / z[2]],
        tex,
        area,
        // weight i belongs to the edge opposite vertex i
        top_left: [
            is_top_left(p[1], p[2]),
            is_top_left(p[2], p[0]),
            is_top_left(p[0], p[1]),
        ],
        x_min: lo(p[0].x, p[1].x, p[2].x).max(0),
        x_max: hi(p[0].x, p[1].x, p[2].x).min(width as i64 - 1),
        y_min: lo(p[0].y, p[1].y, p[2].y).max(0),
        y_max: hi(p[0].y, p[1].y, p[2].y).min(height as i64 - 1),
    })
}

/// Perspective-projects and z-buffers the mesh, sampling `texture` bilinearly
/// at perspective-correct texture coordinates and scaling by the ambient term.
pub fn rasterize(mesh: &CameraMesh, texture: &RgbImage, cam: &NormalizedCamera, cfg: &RenderConfig) -> Result<Framebuffer> {
    cfg.validate()?;
    if mesh.vertices.is_empty() || mesh.triangles.is_empty() {
        return Err(Error::EmptyRender);
    }
    if texture.width() == 0 || texture.height() == 0 {
        return Err(Error::DimensionMismatch("texture is empty".into()));
    }
    if cam.intrinsics.width != cfg.out_size || cam.intrinsics.height != cfg.out_size {
        return Err(Error::DimensionMismatch(format!(
            "camera is {}x{}, render size is {}",
            cam.intrinsics.width, cam.intrinsics.height, cfg.out_size
        )));
    }
    if mesh.tex_coords.len() != mesh.vertices.len() {
        return Err(Error::MeshIntegrity("texture coordinate count differs from vertex count".into()));
    }
    if let Some(v) = mesh.vertices.iter().find(|v| !(v.z > 0.0)) {
        return Err(Error::BehindCamera { z: v.z });
    }
    let n = mesh.vertices.len();
    if mesh.triangles.iter().any(|t| t.iter().any(|&i| i as usize >= n)) {
        return Err(Error::MeshIntegrity("triangle index out of range".into()));
    }

    let k = &cam.intrinsics;
    let screen: Vec<Vec2> = mesh
        .vertices
        .iter()
        .map(|v| Vec2::new(k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy))
        .collect();
    let (w, h) = (cfg.out_size, cfg.out_size);
    let (tw, th) = ((texture.width() - 1) as f64, (texture.height() - 1) as f64);

    let setups: Vec<Option<ScreenTri>> = mesh
        .triangles
        .par_iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| i as usize);
            setup_triangle(
                [screen[a], screen[b], screen[c]],
                [mesh.vertices[a].z, mesh.vertices[b].z, mesh.vertices[c].z],
                [mesh.tex_coords[a], mesh.tex_coords[b], mesh.tex_coords[c]],
                w,
                h,
            )
        })
        .collect();
    let degenerate_triangles = setups.iter().filter(|s| s.is_none()).count();
    let tris: Vec<ScreenTri> = setups.into_iter().flatten().collect();

    let row_px = w as usize;
    let mut color = RgbaImage::new(w, h);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    let mut coverage = vec![false; (w * h) as usize];
    let ambient = cfg.ambient;

    color
        .par_chunks_mut(row_px * 4 * BAND_ROWS)
        .zip(depth.par_chunks_mut(row_px * BAND_ROWS))
        .zip(coverage.par_chunks_mut(row_px * BAND_ROWS))
        .enumerate()
        .for_each(|(band, ((col, dep), cov))| {
            let y0 = (band * BAND_ROWS) as i64;
            let y1 = y0 + (dep.len() / row_px) as i64 - 1;
            for t in tris.iter().filter(|t| t.y_max >= y0 && t.y_min <= y1) {
                for y in t.y_min.max(y0)..=t.y_max.min(y1) {
                    for x in t.x_min..=t.x_max {
                        let p = Vec2::new(x as f64, y as f64);
                        let wts = [edge(t.p[1], t.p[2], p), edge(t.p[2], t.p[0], p), edge(t.p[0], t.p[1], p)];
                        if !(0..3).all(|i| inside(wts[i], t.top_left[i])) {
                            continue;
                        }
                        let b = wts.map(|v| v / t.area);
                        let inv_z = b[0] * t.inv_z[0] + b[1] * t.inv_z[1] + b[2] * t.inv_z[2];
                        let z = 1.0 / inv_z;
                        let idx = (y - y0) as usize * row_px + x as usize;
                        // strict comparison keeps the earlier (lower index) triangle on ties
                        if !(z < dep[idx]) {
                            continue;
                        }
                        let uv = (t.tex[0] * (b[0] * t.inv_z[0])
                            + t.tex[1] * (b[1] * t.inv_z[1])
                            + t.tex[2] * (b[2] * t.inv_z[2]))
                            * z;
                        let s = sample_bilinear(texture, uv.x * tw, uv.y * th);
                        dep[idx] = z;
                        cov[idx] = true;
                        col[idx * 4..idx * 4 + 4].copy_from_slice(&[
                            to_u8(s[0] * ambient),
                            to_u8(s[1] * ambient),
                            to_u8(s[2] * ambient),
                            255,
                        ]);
                    }
                }
            }
        });

    if degenerate_triangles > 0 {
        log::debug!("skipped {degenerate_triangles} degenerate triangles");
    }
    Ok(Framebuffer {
        color,
        depth,
        coverage,
        degenerate_triangles,
    })
}

/// Scene images blurred at native size, center-cropped square and
/// area-resized to the render size. Ids follow lexicographic file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenePool {
    pub names: Vec<String>,
    pub images: Vec<RgbImage>,
}

impl ScenePool {
    pub fn preprocess(img: &RgbImage, size: u32) -> RgbImage {
        resize_area(&center_crop_square(&gaussian_blur(img, SCENE_BLUR_SIGMA)), size, size)
    }

    pub fn from_images(named: Vec<(String, RgbImage)>, size: u32) -> Self {
        let (names, raw): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let images = raw.par_iter().map(|img| Self::preprocess(img, size)).collect();
        Self { names, images }
    }

    /// Loads every PNG/JPEG file of `dir` in lexicographic filename order.
    pub fn load(dir: &Path, size: u32) -> Result<Self> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        files.sort();
        let named = files
            .iter()
            .map(|p| {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                read_rgb(p).map(|img| (name, img))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_images(named, size))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&RgbImage> {
        self.images.get(id).ok_or(Error::SceneNotFound(id))
    }
}

pub fn composite(fb: &Framebuffer, bg: &BackgroundSpec, scenes: &ScenePool) -> Result<RgbImage> {
    let (w, h) = (fb.width(), fb.height());
    let scene = match bg {
        BackgroundSpec::Scene { scene_id } => {
            let s = scenes.get(*scene_id)?;
            if s.dimensions() != (w, h) {
                return Err(Error::DimensionMismatch(format!(
                    "scene {scene_id} is {}x{}, frame is {w}x{h}",
                    s.width(),
                    s.height()
                )));
            }
            Some(s)
        }
        _ => None,
    };
    Ok(RgbImage::from_fn(w, h, |x, y| {
        if fb.covered(x, y) {
            let p = fb.color.get_pixel(x, y).0;
            return Rgb([p[0], p[1], p[2]]);
        }
        match (bg, scene) {
            (BackgroundSpec::SolidColor { color }, _) => Rgb(*color),
            (_, Some(s)) => *s.get_pixel(x, y),
            _ => Rgb([0, 0, 0]),
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// black : solid color : scene
    pub ratio: [u32; 3],
    pub weak_light_fraction: f64,
    pub ambient_range: [f64; 2],
    pub scene_count: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            ratio: [1, 1, 3],
            weak_light_fraction: 0.5,
            ambient_range: [0.25, 0.75],
            scene_count: 0,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if self.ratio.iter().sum::<u32>() == 0 {
            return Err(Error::Config("background ratio must not be all zero".into()));
        }
        if !(0.0..=1.0).contains(&self.weak_light_fraction) {
            return Err(Error::Config(format!(
                "weak light fraction must be in [0, 1], got {}",
                self.weak_light_fraction
            )));
        }
        let [lo, hi] = self.ambient_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("ambient range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Exact category counts for `n` slots; the remainder goes to scenes.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let sum = self.ratio.iter().map(|&r| r as u64).sum::<u64>();
        let part = |r: u32| (n as u64 * r as u64 / sum) as usize;
        let black = part(self.ratio[0]);
        let color = part(self.ratio[1]);
        [black, color, n - black - color]
    }

    pub fn weak_count(&self, n: usize) -> usize {
        (n as f64 * self.weak_light_fraction).floor() as usize
    }
}

/// Background and ambient for each of `n` slots. Category and weak-light
/// assignments are shuffled independently of each other.
pub fn background_schedule(n: usize, seed: u64, params: &ScheduleParams) -> Result<Vec<(BackgroundSpec, f64)>> {
    params.validate()?;
    let [black, color, scene] = params.counts(n);
    if scene > 0 && params.scene_count == 0 {
        return Err(Error::Config("scene backgrounds requested but the scene pool is empty".into()));
    }
    let mut rng = rng_for(seed, TAG_BACKGROUND, 0);
    let mut kinds: Vec<u8> = [(0u8, black), (1, color), (2, scene)]
        .iter()
        .flat_map(|&(k, c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut rng);
    let weak = params.weak_count(n);
    let mut weak_flags: Vec<bool> = (0..n).map(|i| i < weak).collect();
    weak_flags.shuffle(&mut rng);

    let [lo, hi] = params.ambient_range;
    Ok(kinds
        .into_iter()
        .zip(weak_flags)
        .map(|(k, is_weak)| {
            let bg = match k {
                0 => BackgroundSpec::Black,
                1 => BackgroundSpec::SolidColor { color: rng.random() },
                _ => BackgroundSpec::Scene {
                    scene_id: rng.random_range(0..params.scene_count),
                },
            };
            let ambient = if is_weak { rng.random_range(lo..=hi) } else { 1.0 };
            (bg, ambient)
        })
        .collect())
}

fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Vec2, a: Vec2, b: Vec2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Vec2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Filled convex hull of the landmarks, rasterized with the renderer's fill rule.
pub fn face_mask_from_landmarks(points: &[Vec2], width: u32, height: u32) -> Result<FaceMask> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::DegenerateMask);
    }
    let mut hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateMask);
    }
    let area: f64 = (0..hull.len())
        .map(|i| edge(hull[0], hull[i], hull[(i + 1) % hull.len()]))
        .sum();
    if area.abs() <= DEGENERATE_AREA {
        return Err(Error::DegenerateMask);
    }
    if area < 0.0 {
        hull.reverse();
    }
    let edges: Vec<(Vec2, Vec2, bool)> = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            (a, b, is_top_left(a, b))
        })
        .collect();
    let mut bits = vec![false; (width * height) as usize];
    bits.par_chunks_mut(width as usize).enumerate().for_each(|(y, row)| {
        for (x, bit) in row.iter_mut().enumerate() {
            let p = Vec2::new(x as f64, y as f64);
            *bit = edges.iter().all(|&(a, b, tl)| inside(edge(a, b, p), tl));
        }
    });
    Ok(FaceMask { width, height, bits })
}

/// Keeps pixels inside the mask and takes all others from `scene`.
pub fn switch_background(image: &RgbImage, mask: &FaceMask, scene: &RgbImage) -> Result<RgbImage> {
    let dims = image.dimensions();
    if dims != (mask.width, mask.height) || dims != scene.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?}, mask {:?}, scene {:?}",
            dims,
            (mask.width, mask.height),
            scene.dimensions()
        )));
    }
    Ok(RgbImage::from_fn(dims.0, dims.1, |x, y| {
        if mask.get(x, y) {
            *image.get_pixel(x, y)
        } else {
            *scene.get_pixel(x, y)
        }
    }))
}

/// Mirrors the image left-right and negates both yaw labels.
pub fn flip_horizontal(image: &RgbImage, gaze: Angles, head: Angles) -> (RgbImage, Angles, Angles) {
    (
        image::imageops::flip_horizontal(image),
        Angles::new(gaze.pitch, -gaze.yaw),
        Angles::new(head.pitch, -head.yaw),
    )
}

/// 2x box reduction, rounding half away from zero.
pub fn downscale(image: &RgbImage) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if w % 2 != 0 || h % 2 != 0 || w == 0 || h == 0 {
        return Err(Error::OddDimensions(w, h));
    }
    Ok(RgbImage::from_fn(w / 2, h / 2, |x, y| {
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let sum: u32 = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .map(|&(dx, dy)| image.get_pixel(2 * x + dx, 2 * y + dy).0[c] as u32)
                .sum();
            *out = ((sum + 2) / 4) as u8;
        }
        Rgb(px)
    }))
}

/// Depth as 16-bit grey in hundredths of a millimetre; 0 where uncovered.
pub fn depth_image(fb: &Framebuffer) -> image::ImageBuffer<image::Luma<u16>, Vec<u16>> {
    let w = fb.width();
    image::ImageBuffer::from_fn(w, fb.height(), |x, y| {
        let d = fb.depth[(y * w + x) as usize];
        image::Luma([if d.is_finite() { (d * 100.0).round().clamp(0.0, 65535.0) as u16 } else { 0 }])
    })
}

pub fn rgba_pixel(fb: &Framebuffer, x: u32, y: u32) -> Rgba<u8> {
    *fb.color.get_pixel(x, y)
}
