use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::RasterConfig;
use crate::camera::CameraIntrinsics;
use crate::gaussian::Gaussian3D;
use crate::geometry::Se3Pose;

/// A Gaussian after EWA projection into the image plane.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// Index into the source scene.
    pub index: usize,
    pub mean2d: Vector2<f64>,
    /// Dilated image-space covariance.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-frame z of the mean.
    pub depth: f64,
    pub opacity: f64,
    pub payload: Vec<f64>,
    pub radius_px: f64,
    pub(crate) p_cam: Vector3<f64>,
    pub(crate) cov_cam: Matrix3<f64>,
    pub(crate) jac: Matrix2x3<f64>,
}

pub(crate) fn projection_jacobian(p: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    )
}

/// Projects one Gaussian through `view` (world-to-camera). Returns `None`
/// when it lies behind the near plane or its support misses the image.
pub fn project_gaussian(
    g: &Gaussian3D,
    view: &Se3Pose,
    k: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> Option<ProjectedGaussian> {
    project_with_rotation(0, g, &view.rotation_matrix(), view.translation(), k, cfg)
}

pub(crate) fn project_with_rotation(
    index: usize,
    g: &Gaussian3D,
    rot: &Matrix3<f64>,
    trans: &Vector3<f64>,
    k: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> Option<ProjectedGaussian> {
    let p_cam = rot * g.mean + trans;
    if !(p_cam.z > cfg.near_plane) {
        return None;
    }
    let cov_cam = rot * g.covariance() * rot.transpose();
    let jac = projection_jacobian(&p_cam, k);
    let mut cov2d = jac * cov_cam * jac.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += cfg.dilation;
    cov2d[(1, 1)] += cfg.dilation;

    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius_px = cfg.extent_sigma * lambda_max.sqrt();

    let mean2d = k.project(&p_cam);
    let (w, h) = (k.width as f64, k.height as f64);
    if mean2d.x + radius_px < 0.0
        || mean2d.x - radius_px > w - 1.0
        || mean2d.y + radius_px < 0.0
        || mean2d.y - radius_px > h - 1.0
    {
        return None;
    }
    Some(ProjectedGaussian {
        index,
        mean2d,
        cov2d,
        conic,
        depth: p_cam.z,
        opacity: g.opacity(),
        payload: g.payload.clone(),
        radius_px,
        p_cam,
        cov_cam,
        jac,
    })
}
