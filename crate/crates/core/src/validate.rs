//! Self-contained property checks on generated fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::face_model::ReferenceFaceModel;
use crate::fixtures::{demo_specs, generate_face, random_pose, Fixture};
use crate::geometry::{angular_error_deg, project_point, rotation_angle_deg, transform_point, Vec3};
use crate::matching::{estimate_params, lift_to_camera, MatchingParams};
use crate::normalization::{normalize, place_for_rendering, NormalizedCamera};
use crate::novel_view::{retarget, retarget_transform};
use crate::pnp::{solve_pnp, PnpOptions};
use crate::render::{background_schedule, rasterize, RenderConfig, ScheduleParams};

pub const REPROJECTION_TOL_PX: f64 = 1e-6;
/// Allowed error of the lifted face-center range, relative to the true range.
pub const FACE_DEPTH_REL_TOL: f64 = 0.01;
pub const PNP_ROT_TOL_DEG: f64 = 0.05;
pub const PNP_TRANS_TOL_MM: f64 = 0.5;
pub const GAZE_TOL_DEG: f64 = 1e-6;
pub const RIGIDITY_TOL_MM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<4} {:<22} {:.3e} (limit {:.3e})  {}\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.metric,
                c.threshold,
                c.detail
            ));
        }
        s.push_str(if self.passed() { "all checks passed\n" } else { "some checks FAILED\n" });
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    pub fixtures: usize,
    pub pnp_trials: usize,
    pub retarget_trials: usize,
    /// Multiplies the estimated `alpha` (keeping `beta`) before lifting.
    pub alpha_perturbation: Option<f64>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            fixtures: 8,
            pnp_trials: 200,
            retarget_trials: 200,
            alpha_perturbation: None,
        }
    }
}

fn check(name: &'static str, metric: f64, threshold: f64, detail: String) -> Check {
    Check {
        name,
        passed: metric.is_finite() && metric < threshold,
        metric,
        threshold,
        detail,
    }
}

/// Maximum patch reprojection error of the lifted vertices.
pub fn reprojection_error_px(fixture: &Fixture, params: &MatchingParams) -> Result<f64> {
    let cam = &fixture.entry.intrinsics;
    let t = &fixture.truth.crop_transform;
    let lifted = lift_to_camera(&fixture.mesh, cam, t, params, Vec3::zeros())?;
    let mut worst: f64 = 0.0;
    for (v, p) in lifted.vertices.iter().zip(&fixture.mesh.vertices) {
        let uv = transform_point(t, &project_point(cam, v)?);
        worst = worst.max((uv.x - p.x).hypot(uv.y - p.y));
    }
    Ok(worst)
}

fn estimated_params(f: &Fixture, model: &ReferenceFaceModel) -> Result<MatchingParams> {
    let lm = f.entry.load_landmarks()?;
    let (obs, pts): (Vec<_>, Vec<_>) = lm.present().map(|(i, p)| (p, model.points()[i])).unzip();
    let sol = solve_pnp(&obs, &pts, &f.entry.intrinsics, &PnpOptions::default())?;
    estimate_params(&f.mesh, &sol.pose, model)
}

fn render_hash(fixture: &Fixture, workers: usize) -> Result<String> {
    let cam = NormalizedCamera::default();
    let model = ReferenceFaceModel::embedded();
    let params = estimated_params(fixture, model)?;
    let lifted = lift_to_camera(&fixture.mesh, &fixture.entry.intrinsics, &fixture.truth.crop_transform, &params, Vec3::zeros())?;
    let fc = lifted.corner_centroid()?;
    let norm = normalize(&Vec3::zeros(), &fc, &fixture.truth.pose.rotation, &cam)?;
    let placed = place_for_rendering(&lifted, &fc, &norm.rotation, &cam)?;
    let (pw, ph) = fixture.entry.crop.patch_size();
    let texture = crate::imaging::warp_perspective(&fixture.image, &fixture.truth.crop_transform, pw, ph)?;
    let fb = crate::pipeline::with_workers(workers, || rasterize(&placed, &texture, &cam, &RenderConfig::default()))??;
    let mut h = Sha256::new();
    h.update(fb.color.as_raw());
    for d in &fb.depth {
        h.update(d.to_le_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn run_validate(opts: &ValidateOptions) -> Result<ValidationReport> {
    let model = ReferenceFaceModel::embedded();
    let mut checks = Vec::new();
    let fixtures: Vec<Fixture> = demo_specs(opts.fixtures.max(1), opts.seed, 3)
        .iter()
        .map(generate_face)
        .collect::<Result<_>>()?;

    let mut reproj: f64 = 0.0;
    let mut depth_rel: f64 = 0.0;
    for f in &fixtures {
        let mut params = estimated_params(f, model)?;
        if let Some(k) = opts.alpha_perturbation {
            params.alpha *= k;
        }
        reproj = reproj.max(reprojection_error_px(f, &params)?);
        let lifted = lift_to_camera(&f.mesh, &f.entry.intrinsics, &f.truth.crop_transform, &params, Vec3::zeros())?;
        let truth = f.truth.face_center.norm();
        depth_rel = depth_rel.max((lifted.corner_centroid()?.norm() - truth).abs() / truth);
    }
    let note = opts
        .alpha_perturbation
        .map(|k| format!(", alpha scaled by {k}"))
        .unwrap_or_default();
    checks.push(check(
        "reprojection",
        reproj,
        REPROJECTION_TOL_PX,
        format!("max patch error over {} fixtures{note}", fixtures.len()),
    ));
    checks.push(check(
        "face_center_depth",
        depth_rel,
        FACE_DEPTH_REL_TOL,
        format!("max relative face-center range error{note}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let cam = crate::fixtures::default_camera();
    let corners = model.points();
    let (mut rot_err, mut trans_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..opts.pnp_trials {
        let truth = random_pose(&mut rng, 80.0, 15.0, 250.0..600.0);
        let xf = truth.transform();
        let obs: Vec<_> = corners
            .iter()
            .map(|p| project_point(&cam, &xf.apply(p)))
            .collect::<Result<_>>()?;
        match solve_pnp(&obs, corners, &cam, &PnpOptions::default()) {
            Ok(sol) => {
                rot_err = rot_err.max(rotation_angle_deg(&sol.pose.rotation, &truth.rotation));
                trans_err = trans_err.max((sol.pose.translation - truth.translation).norm());
            }
            Err(_) => rot_err = f64::INFINITY,
        }
    }
    checks.push(check(
        "pnp_rotation",
        rot_err,
        PNP_ROT_TOL_DEG,
        format!("max rotation error (deg) over {} poses", opts.pnp_trials),
    ));
    checks.push(check(
        "pnp_translation",
        trans_err,
        PNP_TRANS_TOL_MM,
        format!("max translation error (mm) over {} poses", opts.pnp_trials),
    ));

    let (gaze_err, rigid_err) = retarget_errors(&fixtures, opts.retarget_trials, &mut rng)?;
    checks.push(check("retarget_gaze", gaze_err, GAZE_TOL_DEG, "max gaze direction error (deg)".into()));
    checks.push(check("retarget_rigidity", rigid_err, RIGIDITY_TOL_MM, "max pairwise distance change (mm)".into()));

    let n = 320;
    let sched = background_schedule(
        n,
        opts.seed,
        &ScheduleParams {
            scene_count: 3,
            ..Default::default()
        },
    )?;
    let count = |k: &str| sched.iter().filter(|(b, _)| b.kind() == k).count();
    let weak = sched.iter().filter(|&&(_, a)| a < 1.0).count();
    let ratio_ok = (count("black"), count("solid_color"), count("scene"), weak) == (64, 64, 192, 160);
    checks.push(check(
        "schedule_ratios",
        if ratio_ok { 0.0 } else { 1.0 },
        0.5,
        format!(
            "{}:{}:{} backgrounds, {weak} weak-lit of {n}",
            count("black"),
            count("solid_color"),
            count("scene")
        ),
    ));

    let ncam = NormalizedCamera::default();
    let mut norm_err: f64 = 0.0;
    for f in &fixtures {
        let fc = f.truth.face_center;
        let r = normalize(&f.entry.gaze_target(), &fc, &f.truth.pose.rotation, &ncam)?;
        let px = project_point(&ncam.intrinsics, &r.face_center_norm)?;
        norm_err = norm_err
            .max((r.face_center_norm - Vec3::new(0.0, 0.0, ncam.face_distance_mm)).amax())
            .max((px - crate::geometry::Vec2::new(ncam.intrinsics.cx, ncam.intrinsics.cy)).amax())
            .max((r.rotation * r.rotation.transpose() - crate::geometry::Mat3::identity()).amax());
    }
    checks.push(check("normalization", norm_err, 1e-6, "placed face-center error (mm / px)".into()));

    let a = render_hash(&fixtures[0], 1)?;
    let b = render_hash(&fixtures[0], 8)?;
    checks.push(check(
        "render_determinism",
        if a == b { 0.0 } else { 1.0 },
        0.5,
        format!("1 worker {} / 8 workers {}", &a[..12], &b[..12]),
    ));
    Ok(ValidationReport { checks })
}

/// Gaze error against `R_t R_s^T g` and the worst change of vertex-pair distances.
pub fn retarget_errors(fixtures: &[Fixture], trials: usize, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let (mut gaze_err, mut rigid_err): (f64, f64) = (0.0, 0.0);
    let lifted: Vec<_> = fixtures
        .iter()
        .map(|f| {
            let p = MatchingParams {
                alpha: f.truth.alpha,
                beta: f.truth.beta,
            };
            lift_to_camera(&f.mesh, &f.entry.intrinsics, &f.truth.crop_transform, &p, f.entry.gaze_target())
        })
        .collect::<Result<_>>()?;
    for t in 0..trials {
        let k = t % lifted.len();
        let mesh = &lifted[k];
        let src = fixtures[k].truth.pose;
        let tgt = random_pose(rng, 80.0, 15.0, 250.0..600.0);
        let moved = match retarget(mesh, &src, &tgt) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let fc_src = crate::face_model::face_center_camera(&src, ReferenceFaceModel::embedded());
        let g_src = mesh.gaze_target - fc_src;
        let oracle = tgt.rotation * src.rotation.transpose() * g_src;
        let fc_tgt = retarget_transform(&src, &tgt).apply(&fc_src);
        gaze_err = gaze_err.max(angular_error_deg(&(moved.gaze_target - fc_tgt), &oracle)?);
        let n = mesh.vertices.len();
        for _ in 0..32 {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            let before = (mesh.vertices[i] - mesh.vertices[j]).norm();
            let after = (moved.vertices[i] - moved.vertices[j]).norm();
            rigid_err = rigid_err.max((before - after).abs());
        }
    }
    Ok((gaze_err, rigid_err))
}
