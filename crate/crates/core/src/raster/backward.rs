use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::forward::{pixel_alpha, tile_geom, RenderOutput};
use super::RasterConfig;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::geometry::{Se3Pose, Tangent};
use crate::map::PlanarMap;

/// Which gradients [`rasterize_backward`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradRequest {
    Pose,
    PoseAndScene,
}

/// Loss gradient with respect to the parameters of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vector3<f64>,
    /// With respect to the (w, x, y, z) components of the unit rotation,
    /// tangent to the unit sphere.
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub payload: Vec<f64>,
}

impl GaussianGrad {
    fn zeros(k: usize) -> Self {
        Self {
            mean: Vector3::zeros(),
            rotation: Vector4::zeros(),
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            payload: vec![0.0; k],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderGradients {
    /// d(loss)/d(xi) for the left increment `view' = exp(xi) * view`.
    pub pose: Tangent,
    /// Per scene Gaussian, when requested.
    pub gaussians: Option<Vec<GaussianGrad>>,
}

/// Image-space gradients accumulated for one projected Gaussian.
#[derive(Clone)]
struct Accum {
    mean2d: Vector2<f64>,
    // gradient of the conic, entries treated independently
    conic: [f64; 3],
    opacity: f64,
    payload: Vec<f64>,
}

impl Accum {
    fn new(k: usize) -> Self {
        Self {
            mean2d: Vector2::zeros(),
            conic: [0.0; 3],
            opacity: 0.0,
            payload: vec![0.0; k],
        }
    }

    fn add(&mut self, o: &Accum) {
        self.mean2d += o.mean2d;
        for i in 0..3 {
            self.conic[i] += o.conic[i];
        }
        self.opacity += o.opacity;
        for (a, b) in self.payload.iter_mut().zip(&o.payload) {
            *a += b;
        }
    }
}

/// Backpropagates `upstream = d(loss)/d(rendered map)` through the render
/// recorded in `output`.
pub fn rasterize_backward(
    scene: &GaussianScene,
    view: &Se3Pose,
    k: &CameraIntrinsics,
    output: &RenderOutput,
    upstream: &PlanarMap,
    cfg: &RasterConfig,
    request: GradRequest,
) -> Result<RenderGradients> {
    let aux = &output.aux;
    if aux.view != *view || aux.intrinsics != *k {
        return Err(Error::AuxMismatch("view or intrinsics differ from the forward pass".into()));
    }
    if aux.scene_len != scene.len() || aux.channels != scene.payload_dim() {
        return Err(Error::AuxMismatch("scene differs from the forward pass".into()));
    }
    if aux.consumed.len() != k.width * k.height {
        return Err(Error::AuxMismatch("missing per-pixel blend records".into()));
    }
    if upstream.width() != k.width || upstream.height() != k.height || upstream.channels() != aux.channels {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient is {}x{}x{}, render is {}x{}x{}",
            upstream.width(),
            upstream.height(),
            upstream.channels(),
            k.width,
            k.height,
            aux.channels
        )));
    }
    let want_scene = request == GradRequest::PoseAndScene;
    if want_scene && scene.is_frozen() {
        return Err(Error::SceneFrozen);
    }

    let channels = aux.channels;
    let (w, h) = (k.width, k.height);
    let ts = cfg.tile_size;
    let cutoff2 = cfg.extent_sigma * cfg.extent_sigma;
    let bg: Vec<f64> = (0..channels).map(|c| cfg.background_value(c)).collect();
    let projected = &aux.projected;

    // per tile, accumulators aligned with the tile list; reduced in tile order
    let tile_accums: Vec<Vec<Accum>> = aux
        .tile_lists
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let mut acc = vec![Accum::new(if want_scene { channels } else { 0 }); list.len()];
            if list.is_empty() {
                return acc;
            }
            let tg = tile_geom(t, aux.tiles_x, ts, w, h);
            for y in tg.y0..tg.y1 {
                for x in tg.x0..tg.x1 {
                    let grad = upstream.pixel(x, y);
                    if grad.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let pix = y * w + x;
                    let used = aux.consumed[pix] as usize;
                    let mut t_next = aux.final_t[pix];
                    // sum over later contributions of (g . c_j) w_j, plus background
                    let mut behind: f64 = t_next * grad.iter().zip(&bg).map(|(a, b)| a * b).sum::<f64>();
                    for slot in (0..used).rev() {
                        let g = &projected[list[slot] as usize];
                        let dx = x as f64 - g.mean2d.x;
                        let dy = y as f64 - g.mean2d.y;
                        let Some((alpha, gauss, clamped)) = pixel_alpha(g, dx, dy, cutoff2, cfg.alpha_max) else {
                            continue;
                        };
                        let one_minus = 1.0 - alpha;
                        let t_i = t_next / one_minus;
                        let gc: f64 = grad.iter().zip(&g.payload).map(|(a, b)| a * b).sum();
                        let d_alpha = gc * t_i - behind / one_minus;
                        behind += gc * alpha * t_i;
                        t_next = t_i;

                        let a = &mut acc[slot];
                        if want_scene {
                            let weight = alpha * t_i;
                            for (p, gv) in a.payload.iter_mut().zip(grad) {
                                *p += gv * weight;
                            }
                        }
                        if clamped {
                            continue;
                        }
                        a.opacity += d_alpha * gauss;
                        // alpha = o * exp(-m2 / 2)
                        let d_m2 = -0.5 * d_alpha * g.opacity * gauss;
                        a.conic[0] += d_m2 * dx * dx;
                        a.conic[1] += d_m2 * dx * dy;
                        a.conic[2] += d_m2 * dy * dy;
                        // d(m2)/d(mean) = -2 Q d
                        let q = &g.conic;
                        let qd = Vector2::new(
                            q[(0, 0)] * dx + q[(0, 1)] * dy,
                            q[(1, 0)] * dx + q[(1, 1)] * dy,
                        );
                        a.mean2d -= qd * (2.0 * d_m2);
                    }
                }
            }
            acc
        })
        .collect();

    let mut per_gauss = vec![Accum::new(if want_scene { channels } else { 0 }); projected.len()];
    for (list, accs) in aux.tile_lists.iter().zip(&tile_accums) {
        for (&gi, a) in list.iter().zip(accs) {
            per_gauss[gi as usize].add(a);
        }
    }

    let rot_view = view.rotation_matrix();
    let mut pose = [0.0; 6];
    let mut scene_grads = want_scene.then(|| vec![GaussianGrad::zeros(channels); scene.len()]);

    for (g, a) in projected.iter().zip(&per_gauss) {
        let (d_p, d_cov_cam) = image_to_camera(g.p_cam, &g.cov_cam, &g.jac, &g.conic, a, k);

        // left increment: p' = p + w x p + rho, Sigma' = (I + [w]) Sigma (I + [w])^T
        let d_omega = g.p_cam.cross(&d_p);
        let m = g.cov_cam * d_cov_cam - d_cov_cam * g.cov_cam;
        pose[0] += d_omega.x + 2.0 * m[(1, 2)];
        pose[1] += d_omega.y + 2.0 * m[(2, 0)];
        pose[2] += d_omega.z + 2.0 * m[(0, 1)];
        pose[3] += d_p.x;
        pose[4] += d_p.y;
        pose[5] += d_p.z;

        if let Some(grads) = scene_grads.as_mut() {
            let src = &scene.gaussians()[g.index];
            let out = &mut grads[g.index];
            out.mean = rot_view.transpose() * d_p;
            let d_cov_world = rot_view.transpose() * d_cov_cam * rot_view;
            let (d_rot, d_log_scale) = covariance_to_params(src.rotation.quaternion(), &src.scale(), &d_cov_world);
            out.rotation = d_rot;
            out.log_scale = d_log_scale;
            let o = g.opacity;
            out.opacity_logit = a.opacity * o * (1.0 - o);
            out.payload.clone_from(&a.payload);
        }
    }

    Ok(RenderGradients {
        pose,
        gaussians: scene_grads,
    })
}

/// Chains image-space gradients back to the camera-frame mean and covariance.
fn image_to_camera(
    p: Vector3<f64>,
    cov_cam: &Matrix3<f64>,
    jac: &Matrix2x3<f64>,
    conic: &Matrix2<f64>,
    a: &Accum,
    k: &CameraIntrinsics,
) -> (Vector3<f64>, Matrix3<f64>) {
    let d_conic = Matrix2::new(a.conic[0], a.conic[1], a.conic[1], a.conic[2]);
    // Q = Sigma2d^-1  =>  dL/dSigma2d = -Q (dL/dQ) Q
    let d_cov2d = -(conic * d_conic * conic);
    let d_cov_cam = jac.transpose() * d_cov2d * jac;
    let d_jac = 2.0 * d_cov2d * jac * cov_cam;

    // mean2d = K p / z, whose Jacobian is `jac`
    let mut d_p = jac.transpose() * a.mean2d;
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    d_p.x += d_jac[(0, 2)] * (-k.fx * iz2);
    d_p.y += d_jac[(1, 2)] * (-k.fy * iz2);
    d_p.z += d_jac[(0, 0)] * (-k.fx * iz2)
        + d_jac[(0, 2)] * (2.0 * k.fx * p.x * iz3)
        + d_jac[(1, 1)] * (-k.fy * iz2)
        + d_jac[(1, 2)] * (2.0 * k.fy * p.y * iz3);
    (d_p, d_cov_cam)
}

/// Gradient of `Sigma = R S S^T R^T` with respect to the unit quaternion and log-scales.
fn covariance_to_params(
    q: &nalgebra::Quaternion<f64>,
    scale: &Vector3<f64>,
    d_cov: &Matrix3<f64>,
) -> (Vector4<f64>, Vector3<f64>) {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let r = crate::geometry::quat_to_matrix(q).expect("unit quaternion");
    let s = Matrix3::from_diagonal(scale);
    let m = r * s;
    let d_m = (d_cov + d_cov.transpose()) * m;
    let d_r = d_m * s;
    let d_s = r.transpose() * d_m;
    let d_log_scale = Vector3::new(d_s[(0, 0)] * scale.x, d_s[(1, 1)] * scale.y, d_s[(2, 2)] * scale.z);

    let dr_dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dr_dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dr_dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dr_dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    let raw = Vector4::new(
        d_r.dot(&dr_dw),
        d_r.dot(&dr_dx),
        d_r.dot(&dr_dy),
        d_r.dot(&dr_dz),
    );
    // tangent to the unit sphere, i.e. the gradient through q / |q|
    let qv = Vector4::new(w, x, y, z);
    (raw - qv * raw.dot(&qv), d_log_scale)
}
