//! Perspective-n-Point pose estimation.
//!
//! Candidates come from a planar homography fit and a coarse pitch/yaw grid
//! (each with a linear translation solve); the best few are refined with
//! Levenberg-Marquardt on pixel reprojection error and the lowest-cost
//! refinement wins. The grid guards against the two-fold ambiguity of
//! near-planar landmark sets such as the six eye and mouth corners.

use nalgebra::{DMatrix, Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::face_model::Pose;
use crate::geometry::{
    rotation_from_pitch_yaw, rotation_from_vector, skew, Angles, CameraIntrinsics, Mat3, Vec2, Vec3,
};

pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub max_iterations: usize,
    /// Stop when the parameter step norm falls below this.
    pub step_tolerance: f64,
    /// Stop when the relative cost change of an accepted step falls below this.
    pub relative_cost_tolerance: f64,
    /// Solutions whose mean reprojection error exceeds this are rejected.
    pub max_mean_residual_px: f64,
    /// Number of initial candidates passed to the refinement stage.
    pub refine_candidates: usize,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            relative_cost_tolerance: 1e-12,
            max_mean_residual_px: 10.0,
            refine_candidates: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    /// Mean Euclidean reprojection error over all correspondences, in pixels.
    pub mean_residual_px: f64,
    pub iterations: usize,
}

/// Estimates the pose mapping `model_pts` onto the observed pixels `obs`.
pub fn solve_pnp(
    obs: &[Vec2],
    model_pts: &[Vec3],
    camera: &CameraIntrinsics,
    options: &PnpOptions,
) -> Result<PnpSolution> {
    camera.validate()?;
    if obs.len() != model_pts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} model points",
            obs.len(),
            model_pts.len()
        )));
    }
    if obs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences {
            got: obs.len(),
            need: MIN_CORRESPONDENCES,
        });
    }
    let problem = Problem {
        obs,
        model: model_pts,
        camera,
    };

    let mut candidates: Vec<(f64, Mat3, Vec3)> = Vec::new();
    if let Some((r, t)) = problem.homography_init() {
        if let Some(cost) = problem.cost(&r, &t) {
            candidates.push((cost, r, t));
        }
    }
    for (r, t) in problem.grid_inits() {
        if let Some(cost) = problem.cost(&r, &t) {
            candidates.push((cost, r, t));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidates.truncate(options.refine_candidates.max(1));
    if candidates.is_empty() {
        return Err(Error::NoConvergence {
            residual_px: f64::INFINITY,
        });
    }

    let mut best: Option<(f64, Mat3, Vec3, usize)> = None;
    for (_, r, t) in candidates {
        let (cost, r, t, iters) = problem.refine(r, t, options);
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, r, t, iters));
        }
    }
    let (_, rotation, translation, iterations) = best.expect("at least one candidate");
    let mean_residual_px = problem.mean_residual(&rotation, &translation);
    if !(mean_residual_px <= options.max_mean_residual_px) || translation.z <= 0.0 {
        return Err(Error::NoConvergence {
            residual_px: mean_residual_px,
        });
    }
    Ok(PnpSolution {
        pose: Pose::new(orthonormalize(&rotation), translation)?,
        mean_residual_px,
        iterations,
    })
}

/// Mean Euclidean reprojection error of a pose, in pixels.
pub fn mean_reprojection_error(obs: &[Vec2], model_pts: &[Vec3], camera: &CameraIntrinsics, pose: &Pose) -> f64 {
    Problem {
        obs,
        model: model_pts,
        camera,
    }
    .mean_residual(&pose.rotation, &pose.translation)
}

struct Problem<'a> {
    obs: &'a [Vec2],
    model: &'a [Vec3],
    camera: &'a CameraIntrinsics,
}

impl Problem<'_> {
    fn residuals(&self, r: &Mat3, t: &Vec3) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.obs.len() * 2);
        for (x, o) in self.model.iter().zip(self.obs) {
            let p = r * x + t;
            if p.z <= 0.0 {
                return None;
            }
            out.push(self.camera.fx * p.x / p.z + self.camera.cx - o.x);
            out.push(self.camera.fy * p.y / p.z + self.camera.cy - o.y);
        }
        Some(out)
    }

    fn cost(&self, r: &Mat3, t: &Vec3) -> Option<f64> {
        self.residuals(r, t).map(|res| res.iter().map(|v| v * v).sum())
    }

    fn mean_residual(&self, r: &Mat3, t: &Vec3) -> f64 {
        match self.residuals(r, t) {
            Some(res) => res.chunks(2).map(|c| c[0].hypot(c[1])).sum::<f64>() / self.obs.len() as f64,
            None => f64::INFINITY,
        }
    }

    /// Normal equations `(J^T J, J^T r)` for the left-perturbation
    /// `R <- exp(dw) R, t <- t + dt`.
    fn normal_equations(&self, r: &Mat3, t: &Vec3) -> (Matrix6<f64>, Vector6<f64>) {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let (fx, fy) = (self.camera.fx, self.camera.fy);
        for (x, o) in self.model.iter().zip(self.obs) {
            let rx = r * x;
            let p = rx + t;
            let iz = 1.0 / p.z;
            let du = nalgebra::RowVector3::new(fx * iz, 0.0, -fx * p.x * iz * iz);
            let dv = nalgebra::RowVector3::new(0.0, fy * iz, -fy * p.y * iz * iz);
            // d(exp(dw) R x)/d(dw) = -[R x]_x
            let dw = -skew(&rx);
            let mut ju = nalgebra::RowVector6::zeros();
            let mut jv = nalgebra::RowVector6::zeros();
            ju.fixed_view_mut::<1, 3>(0, 0).copy_from(&(du * dw));
            ju.fixed_view_mut::<1, 3>(0, 3).copy_from(&du);
            jv.fixed_view_mut::<1, 3>(0, 0).copy_from(&(dv * dw));
            jv.fixed_view_mut::<1, 3>(0, 3).copy_from(&dv);
            let res_u = fx * p.x * iz + self.camera.cx - o.x;
            let res_v = fy * p.y * iz + self.camera.cy - o.y;
            jtj += ju.transpose() * ju + jv.transpose() * jv;
            jtr += ju.transpose() * res_u + jv.transpose() * res_v;
        }
        (jtj, jtr)
    }

    fn refine(&self, mut r: Mat3, mut t: Vec3, options: &PnpOptions) -> (f64, Mat3, Vec3, usize) {
        let Some(mut cost) = self.cost(&r, &t) else {
            return (f64::INFINITY, r, t, 0);
        };
        let (mut jtj, mut jtr) = self.normal_equations(&r, &t);
        let mut mu = 1e-3 * jtj.trace() / 6.0;
        let mut iterations = 0;
        while iterations < options.max_iterations && cost > 0.0 {
            iterations += 1;
            let damped = jtj + Matrix6::identity() * mu;
            let Some(step) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let dw = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let r_new = rotation_from_vector(&dw) * r;
            let t_new = t + dt;
            match self.cost(&r_new, &t_new) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost;
                    r = r_new;
                    t = t_new;
                    cost = c;
                    mu /= 10.0;
                    if step.norm() < options.step_tolerance || rel < options.relative_cost_tolerance {
                        break;
                    }
                    (jtj, jtr) = self.normal_equations(&r, &t);
                }
                _ => {
                    mu *= 10.0;
                    if step.norm() < options.step_tolerance || !mu.is_finite() || mu > 1e32 {
                        break;
                    }
                }
            }
        }
        (cost, r, t, iterations)
    }

    fn normalized_obs(&self) -> Vec<Vec2> {
        self.obs
            .iter()
            .map(|o| {
                Vec2::new(
                    (o.x - self.camera.cx) / self.camera.fx,
                    (o.y - self.camera.cy) / self.camera.fy,
                )
            })
            .collect()
    }

    /// Least-squares translation for a fixed rotation (linear in `t`).
    fn translation_for(&self, r: &Mat3, norm_obs: &[Vec2]) -> Option<Vec3> {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for (x, o) in self.model.iter().zip(norm_obs) {
            let rx = r * x;
            let rows = [
                (Vector3::new(1.0, 0.0, -o.x), o.x * rx.z - rx.x),
                (Vector3::new(0.0, 1.0, -o.y), o.y * rx.z - rx.y),
            ];
            for (a, b) in rows {
                ata += a * a.transpose();
                atb += a * b;
            }
        }
        ata.cholesky().map(|c| c.solve(&atb))
    }

    fn grid_inits(&self) -> Vec<(Mat3, Vec3)> {
        let norm_obs = self.normalized_obs();
        let mut out = Vec::new();
        for pitch in [-60.0, -30.0, 0.0, 30.0, 60.0] {
            for yaw in [-75.0, -50.0, -25.0, 0.0, 25.0, 50.0, 75.0] {
                let r = rotation_from_pitch_yaw(Angles::from_degrees(pitch, yaw));
                if let Some(t) = self.translation_for(&r, &norm_obs) {
                    if t.z > 0.0 {
                        out.push((r, t));
                    }
                }
            }
        }
        out
    }

    /// Treats the model as planar (best-fit plane) and decomposes the
    /// plane-to-image homography with the known intrinsics.
    fn homography_init(&self) -> Option<(Mat3, Vec3)> {
        let n = self.model.len();
        let centroid: Vec3 = self.model.iter().sum::<Vec3>() / n as f64;
        let mut cov = Matrix3::zeros();
        for x in self.model {
            let d = x - centroid;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let e1 = eig.eigenvectors.column(order[0]).into_owned();
        let e2 = eig.eigenvectors.column(order[1]).into_owned();
        let e3 = e1.cross(&e2);
        let basis = Matrix3::from_columns(&[e1, e2, e3]);

        let plane: Vec<Vec2> = self
            .model
            .iter()
            .map(|x| {
                let q = basis.transpose() * (x - centroid);
                Vec2::new(q.x, q.y)
            })
            .collect();
        let norm_obs = self.normalized_obs();
        let h = fit_homography(&plane, &norm_obs)?;

        let h1 = h.column(0).into_owned();
        let h2 = h.column(1).into_owned();
        let h3 = h.column(2).into_owned();
        let mut lambda = 2.0 / (h1.norm() + h2.norm());
        if h3.z * lambda < 0.0 {
            lambda = -lambda;
        }
        let r1 = h1 * lambda;
        let r2 = h2 * lambda;
        let r_plane = orthonormalize(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
        let t_plane = h3 * lambda;
        let r = r_plane * basis.transpose();
        let t = t_plane - r * centroid;
        (t.z > 0.0).then_some((r, t))
    }
}

/// Normalized DLT homography mapping `src` to `dst`.
fn fit_homography(src: &[Vec2], dst: &[Vec2]) -> Option<Mat3> {
    let (ns, ts) = hartley(src)?;
    let (nd, td) = hartley(dst)?;
    let n = src.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for (i, (s, d)) in ns.iter().zip(&nd).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    // the solution is the eigenvector of A^T A with the smallest eigenvalue
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let hv = eig.eigenvectors.column(idx);
    let hn = Matrix3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);
    let h = td.try_inverse()? * hn * ts;
    h.iter().all(|v| v.is_finite()).then_some(h)
}

fn hartley(points: &[Vec2]) -> Option<(Vec<Vec2>, Mat3)> {
    let n = points.len() as f64;
    let c: Vec2 = points.iter().sum::<Vec2>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Mat3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);
    Some((points.iter().map(|p| (p - c) * s).collect(), t))
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}
