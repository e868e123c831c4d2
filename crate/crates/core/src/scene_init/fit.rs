use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::adam::{cosine_factor, Adam};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::geometry::Se3Pose;
use crate::loss::masked_mse_with_grad;
use crate::map::PlanarMap;
use crate::raster::{rasterize, rasterize_backward, GradRequest, RasterConfig};

/// Canonical-frame fit schedule. `lr` drives payloads; the geometric
/// parameters have their own rates. Mean steps are relative to the median
/// scene depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iters: usize,
    pub lr: f64,
    pub lr_opacity: f64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_mean: f64,
    pub lr_final_factor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 300,
            lr: 0.02,
            lr_opacity: 0.05,
            lr_log_scale: 0.01,
            lr_rotation: 0.01,
            lr_mean: 2e-4,
            lr_final_factor: 0.1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr, self.lr_opacity, self.lr_log_scale, self.lr_rotation, self.lr_mean];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument("fit learning rates must be finite and non-negative".into()));
        }
        if !(self.lr_final_factor > 0.0 && self.lr_final_factor <= 1.0) {
            return Err(Error::InvalidArgument("fit lr_final_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Number of 50-iteration spans whose loss failed to drop by 0.1%.
    pub stalled_spans: usize,
}

const SPAN: usize = 50;

/// Fits all Gaussian parameters to `target` as seen from the identity view,
/// then freezes the scene.
pub fn fit_canonical(
    scene: GaussianScene,
    target: &PlanarMap,
    mask: &PlanarMap,
    mask_threshold: f64,
    k: &CameraIntrinsics,
    cfg: &FitConfig,
    raster: &RasterConfig,
) -> Result<GaussianScene> {
    fit_canonical_report(scene, target, mask, mask_threshold, k, cfg, raster).map(|(s, _)| s)
}

/// [`fit_canonical`] returning a loss summary. The best iterate seen is
/// returned, so the final loss never exceeds the initial one.
pub fn fit_canonical_report(
    mut scene: GaussianScene,
    target: &PlanarMap,
    mask: &PlanarMap,
    mask_threshold: f64,
    k: &CameraIntrinsics,
    cfg: &FitConfig,
    raster: &RasterConfig,
) -> Result<(GaussianScene, FitReport)> {
    if scene.is_frozen() {
        return Err(Error::SceneFrozen);
    }
    cfg.validate()?;
    let dim = scene.payload_dim();
    if target.channels() != dim {
        return Err(Error::ShapeMismatch(format!(
            "target has {} channels, scene payloads have {dim}",
            target.channels()
        )));
    }
    if target.width() != k.width || target.height() != k.height {
        return Err(Error::ShapeMismatch("target does not match the intrinsics".into()));
    }
    if scene.is_empty() {
        return Err(Error::Empty("scene"));
    }
    let view = Se3Pose::identity();

    let mut depths: Vec<f64> = scene.gaussians().iter().map(|g| g.mean.z.abs()).collect();
    depths.sort_by(|a, b| a.total_cmp(b));
    let depth_scale = depths[depths.len() / 2].max(1e-6);

    let stride = 11 + dim;
    let lr_of = |i: usize| match i % stride {
        0..=2 => cfg.lr_mean * depth_scale,
        3..=6 => cfg.lr_rotation,
        7..=9 => cfg.lr_log_scale,
        10 => cfg.lr_opacity,
        _ => cfg.lr,
    };
    let mut adam = Adam::new(stride * scene.len());

    let out = rasterize(&scene, &view, k, raster)?;
    let (initial_loss, mut upstream) = masked_mse_with_grad(&out.map, target, mask, mask_threshold)?;
    let mut out = out;
    let mut loss = initial_loss;
    let mut best = (initial_loss, scene.clone());
    let mut history = vec![initial_loss];

    for it in 0..cfg.iters {
        let grads = rasterize_backward(&scene, &view, k, &out, &upstream, raster, GradRequest::PoseAndScene)?
            .gaussians
            .expect("scene gradients requested");
        let mut flat = Vec::with_capacity(adam.len());
        for g in &grads {
            flat.extend_from_slice(g.mean.as_slice());
            flat.extend_from_slice(g.rotation.as_slice());
            flat.extend_from_slice(g.log_scale.as_slice());
            flat.push(g.opacity_logit);
            flat.extend_from_slice(&g.payload);
        }
        let f = cosine_factor(it, cfg.iters, cfg.lr_final_factor);
        let step = adam.step(&flat, |i| f * lr_of(i));
        for (g, s) in scene.gaussians_mut()?.iter_mut().zip(step.chunks(stride)) {
            g.mean.x += s[0];
            g.mean.y += s[1];
            g.mean.z += s[2];
            let q = g.rotation.quaternion();
            let moved = Quaternion::new(q.w + s[3], q.i + s[4], q.j + s[5], q.k + s[6]);
            if moved.norm() > 1e-12 {
                g.rotation = UnitQuaternion::from_quaternion(moved);
            }
            g.log_scale.x += s[7];
            g.log_scale.y += s[8];
            g.log_scale.z += s[9];
            g.opacity_logit += s[10];
            for (p, d) in g.payload.iter_mut().zip(&s[11..]) {
                *p += d;
            }
        }
        out = rasterize(&scene, &view, k, raster)?;
        let (l, u) = masked_mse_with_grad(&out.map, target, mask, mask_threshold)?;
        loss = l;
        upstream = u;
        history.push(loss);
        if loss < best.0 {
            best = (loss, scene.clone());
        }
        if !loss.is_finite() {
            log::warn!("canonical fit diverged at iteration {it}; keeping best iterate");
            break;
        }
    }

    let stalled_spans = history
        .windows(SPAN + 1)
        .step_by(SPAN)
        .filter(|w| w[SPAN] > 0.999 * w[0] && w[0] > 1e-12)
        .count();
    if stalled_spans > 0 {
        log::debug!("canonical fit stalled over {stalled_spans} span(s) of {SPAN} iterations");
    }
    let (final_loss, scene) = if loss <= best.0 { (loss, scene) } else { best };
    Ok((
        scene.freeze(),
        FitReport {
            initial_loss,
            final_loss,
            stalled_spans,
        },
    ))
}
