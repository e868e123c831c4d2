//! Trajectory alignment and error metrics.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_to_quat, Se3Pose};
use crate::trajectory::Trajectory;

/// Default timestamp association window, seconds.
pub const MAX_DT: f64 = 0.02;

/// Similarity transform `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl AlignmentResult {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Least-squares alignment of `est` onto `gt` (Umeyama): minimizes
/// `sum |s R est_i + t - gt_i|^2`, with `s = 1` unless `with_scale`.
pub fn umeyama_align(est: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<AlignmentResult> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} positions", est.len(), gt.len())));
    }
    if est.len() < 3 {
        return Err(Error::Insufficient(format!("alignment needs 3 points, got {}", est.len())));
    }
    let (me, mg) = (centroid(est), centroid(gt));
    let n = est.len() as f64;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    let mut var_g = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (e - me, g - mg);
        cov += dg * de.transpose();
        var_e += de.norm_squared();
        var_g += dg.norm_squared();
    }
    cov /= n;
    var_e /= n;
    var_g /= n;
    let spread = me.norm().max(mg.norm()).max(1.0);
    if var_e <= 1e-24 * spread * spread || var_g <= 1e-24 * spread * spread {
        return Err(Error::Degenerate("all positions coincide".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_e
    } else {
        1.0
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate(format!("alignment scale {scale}")));
    }
    let rotation = matrix_to_quat(&r);
    Ok(AlignmentResult {
        rotation,
        translation: mg - scale * (rotation * me),
        scale,
    })
}

/// Associated (est, gt) poses, in time order.
pub fn associated_poses(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<(Vec<Se3Pose>, Vec<Se3Pose>)> {
    let pairs = est.associate(gt, max_dt);
    let dropped = est.len().max(gt.len()) - pairs.len();
    if dropped > 0 {
        log::warn!("{dropped} frame(s) had no timestamp match within {max_dt} s");
    }
    if pairs.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} associated frames, at least 3 required",
            pairs.len()
        )));
    }
    Ok(pairs.iter().map(|&(i, j)| (est.poses()[i], gt.poses()[j])).unzip())
}

fn positions(p: &[Se3Pose]) -> Vec<Vector3<f64>> {
    p.iter().map(|x| *x.translation()).collect()
}

fn rmse(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

fn ate_positions(est: &[Vector3<f64>], gt: &[Vector3<f64>], a: &AlignmentResult) -> f64 {
    rmse(est.iter().zip(gt).map(|(e, g)| (a.apply(e) - g).norm()))
}

/// Absolute trajectory error: RMSE of aligned position residuals.
pub fn ate(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<f64> {
    let (e, g) = associated_poses(est, gt, MAX_DT)?;
    let (e, g) = (positions(&e), positions(&g));
    let a = umeyama_align(&e, &g, with_scale)?;
    Ok(ate_positions(&e, &g, &a))
}

fn rpe_poses(est: &[Se3Pose], gt: &[Se3Pose], delta: usize) -> Result<(f64, f64)> {
    if delta == 0 {
        return Err(Error::InvalidArgument("RPE delta must be at least 1".into()));
    }
    if est.len() <= delta {
        return Err(Error::Insufficient(format!("{} frames for RPE delta {delta}", est.len())));
    }
    let errs: Vec<Se3Pose> = (0..est.len() - delta)
        .map(|i| {
            let dg = gt[i].inverse().compose(&gt[i + delta]);
            let de = est[i].inverse().compose(&est[i + delta]);
            dg.inverse().compose(&de)
        })
        .collect();
    Ok((
        rmse(errs.iter().map(|e| e.rotation_angle().to_degrees())),
        rmse(errs.iter().map(|e| e.translation().norm())),
    ))
}

/// Relative pose error over `delta`-frame steps: (rotation RMSE in degrees,
/// translation RMSE).
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<(f64, f64)> {
    let (e, g) = associated_poses(est, gt, MAX_DT)?;
    rpe_poses(&e, &g, delta)
}

/// How per-frame velocity differences are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityAggregate {
    #[default]
    Mean,
    Rmse,
}

/// Alignment used for ATE and velocity comparison. Falls back to matching
/// centroids when the estimate has no spatial extent (e.g. a static camera),
/// where a rotation or scale cannot be determined.
fn align_or_center(e: &[Vector3<f64>], g: &[Vector3<f64>], with_scale: bool) -> Result<AlignmentResult> {
    match umeyama_align(e, g, with_scale) {
        Err(Error::Degenerate(msg)) => {
            log::warn!("alignment degenerate ({msg}); matching centroids only");
            Ok(AlignmentResult {
                translation: centroid(g) - centroid(e),
                ..AlignmentResult::identity()
            })
        }
        other => other,
    }
}

fn delta_v_positions(e: &[Vector3<f64>], g: &[Vector3<f64>], a: &AlignmentResult, agg: VelocityAggregate) -> f64 {
    let d: Vec<f64> = (0..e.len() - 1)
        .map(|i| ((a.apply(&e[i + 1]) - a.apply(&e[i])) - (g[i + 1] - g[i])).norm())
        .collect();
    match agg {
        VelocityAggregate::Mean => d.iter().sum::<f64>() / d.len() as f64,
        VelocityAggregate::Rmse => rmse(d.into_iter()),
    }
}

/// Mean per-frame velocity difference after the same alignment as ATE.
pub fn delta_v(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    delta_v_with(est, gt, true, VelocityAggregate::Mean)
}

pub fn delta_v_with(est: &Trajectory, gt: &Trajectory, with_scale: bool, agg: VelocityAggregate) -> Result<f64> {
    let (e, g) = associated_poses(est, gt, MAX_DT)?;
    let (e, g) = (positions(&e), positions(&g));
    let a = align_or_center(&e, &g, with_scale)?;
    Ok(delta_v_positions(&e, &g, &a, agg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub with_scale: bool,
    pub max_dt: f64,
    pub rpe_delta: usize,
    pub velocity: VelocityAggregate,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            with_scale: true,
            max_dt: MAX_DT,
            rpe_delta: 1,
            velocity: VelocityAggregate::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ate_rmse: f64,
    /// Degrees.
    pub rpe_rot: f64,
    pub rpe_trans: f64,
    /// Scene units per frame.
    pub delta_v: f64,
    pub n_frames: usize,
    /// Scale of the similarity used for ATE and velocity (1 for rigid).
    pub scale: f64,
}

impl MetricsReport {
    pub fn table(&self) -> String {
        format!(
            "{:<10}{:>14}\n{:<10}{:>14.6e}\n{:<10}{:>14.6e}\n{:<10}{:>14.6e}\n{:<10}{:>14.6e}\n{:<10}{:>14}\n",
            "metric",
            "value",
            "ATE",
            self.ate_rmse,
            "RPE_r",
            self.rpe_rot,
            "RPE_t",
            self.rpe_trans,
            "dv",
            self.delta_v,
            "frames",
            self.n_frames
        )
    }
}

/// All metrics at once. Unlike [`ate`], a static estimate is aligned by
/// centroid instead of failing.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, opts: &EvalOptions) -> Result<MetricsReport> {
    let (ep, gp) = associated_poses(est, gt, opts.max_dt)?;
    let (e, g) = (positions(&ep), positions(&gp));
    let a = align_or_center(&e, &g, opts.with_scale)?;
    let (rpe_rot, rpe_trans) = rpe_poses(&ep, &gp, opts.rpe_delta)?;
    Ok(MetricsReport {
        ate_rmse: ate_positions(&e, &g, &a),
        rpe_rot,
        rpe_trans,
        delta_v: delta_v_positions(&e, &g, &a, opts.velocity),
        n_frames: ep.len(),
        scale: a.scale,
    })
}

/// One associated frame after alignment: ground-truth stamp, ground-truth
/// position and aligned estimate position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedSample {
    pub t: f64,
    pub gt: Vector3<f64>,
    pub est: Vector3<f64>,
}

/// Associated positions with the estimate mapped into the ground-truth frame,
/// using the same alignment as [`evaluate`].
pub fn aligned_positions(est: &Trajectory, gt: &Trajectory, opts: &EvalOptions) -> Result<Vec<AlignedSample>> {
    let pairs = est.associate(gt, opts.max_dt);
    let (ep, gp) = associated_poses(est, gt, opts.max_dt)?;
    let (e, g) = (positions(&ep), positions(&gp));
    let a = align_or_center(&e, &g, opts.with_scale)?;
    Ok(pairs
        .iter()
        .zip(e.iter().zip(&g))
        .map(|(&(_, j), (e, g))| AlignedSample {
            t: gt.stamps()[j],
            gt: *g,
            est: a.apply(e),
        })
        .collect())
}
