//! Batched sliding-window pose optimization against a frozen scene, and
//! chaining of overlapping windows into a global trajectory.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{cosine_factor, Adam};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::geometry::{Se3Pose, Tangent};
use crate::loss::{apply_mask, masked_mse_with_grad, smoothness_loss, smoothness_surrogate_grad, ssim_with_grad};
use crate::map::PlanarMap;
use crate::raster::{rasterize, rasterize_backward, GradRequest, RasterConfig};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    Rgb,
    Feature,
}

/// How the smoothness weight evolves over the iterations of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    /// 0 at the first iteration up to `lambda_c_max` at the last.
    Linear,
    Constant,
}

/// Channels entering the SSIM term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimChannels {
    Average,
    First3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: usize,
    pub iters: usize,
    pub lr_rot: f64,
    pub lr_trans: f64,
    /// Learning rates decay (cosine) to this fraction by the last iteration.
    pub lr_final_factor: f64,
    pub lambda_s: f64,
    pub lambda_c_max: f64,
    pub ramp: Ramp,
    pub loss_space: LossSpace,
    pub ssim_channels: SsimChannels,
    pub mask_threshold: f64,
    /// Smoothing radius of the norm in the smoothness gradient, as a
    /// fraction of the median scene depth. The reported loss is always exact.
    pub smooth_eps: f64,
    /// Pixels where the canonical scene renders with accumulated alpha below
    /// this are left out of the photometric terms; 0 keeps every pixel.
    pub coverage_threshold: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_size: 15,
            iters: 400,
            lr_rot: 1e-2,
            lr_trans: 1e-2,
            lr_final_factor: 0.01,
            lambda_s: 0.2,
            lambda_c_max: 1.0,
            ramp: Ramp::Linear,
            loss_space: LossSpace::Rgb,
            ssim_channels: SsimChannels::Average,
            mask_threshold: 0.5,
            smooth_eps: 2.5e-3,
            coverage_threshold: 0.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::InvalidArgument("window_size must be at least 2".into()));
        }
        if !(self.lr_rot > 0.0 && self.lr_trans > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if !(self.lr_final_factor > 0.0 && self.lr_final_factor <= 1.0) {
            return Err(Error::InvalidArgument("lr_final_factor must lie in (0, 1]".into()));
        }
        if self.lambda_s < 0.0 || self.lambda_c_max < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return Err(Error::InvalidArgument("coverage_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Smoothness weight at iteration `it`.
    pub fn lambda_c(&self, it: usize) -> f64 {
        match self.ramp {
            Ramp::Constant => self.lambda_c_max,
            Ramp::Linear if self.iters <= 1 => self.lambda_c_max,
            Ramp::Linear => self.lambda_c_max * it as f64 / (self.iters - 1) as f64,
        }
    }
}

/// Relative poses of one window. `relative_poses[j]` maps the canonical
/// camera frame into the camera frame of window frame `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub canonical_index: usize,
    pub relative_poses: Vec<Se3Pose>,
}

impl WindowEstimate {
    pub fn len(&self) -> usize {
        self.relative_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative_poses.is_empty()
    }
}

/// Per-window summary of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    /// Objective at the final loss weights, evaluated at the initial poses.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    /// True if the optimized poses scored worse than the initialization and
    /// were discarded.
    pub reverted: bool,
}

/// One iteration's loss breakdown, handed to progress observers.
#[derive(Debug, Clone, Serialize)]
pub struct IterationStats {
    pub iter: usize,
    pub mse: f64,
    pub ssim_loss: f64,
    pub smooth: f64,
    pub lambda_c: f64,
    pub total: f64,
}

struct FrameEval {
    mse: f64,
    ssim_loss: f64,
    grad: Tangent,
}

fn ssim_input(map: &PlanarMap, mode: SsimChannels) -> PlanarMap {
    match mode {
        SsimChannels::Average => map.clone(),
        SsimChannels::First3 if map.channels() > 3 => map.take_channels(3),
        SsimChannels::First3 => map.clone(),
    }
}

/// Camera center of a world-to-camera view.
fn camera_center(view: &Se3Pose) -> Vector3<f64> {
    -(view.rotation_matrix().transpose() * view.translation())
}

struct Problem<'a> {
    scene: &'a GaussianScene,
    targets: Vec<PlanarMap>,
    masks: &'a [PlanarMap],
    k: &'a CameraIntrinsics,
    cfg: &'a WindowConfig,
    raster: &'a RasterConfig,
    smooth_eps: f64,
}

impl Problem<'_> {
    fn frame(&self, i: usize, view: &Se3Pose, want_grad: bool) -> Result<FrameEval> {
        let out = rasterize(self.scene, view, self.k, self.raster)?;
        let thr = self.cfg.mask_threshold;
        // static pixels the canonical scene actually covers from this view;
        // the rest (e.g. content entering past the canonical image border)
        // has nothing to match against
        let cov = self.cfg.coverage_threshold;
        let mask = PlanarMap::from_fn(self.k.width, self.k.height, 1, |x, y, _| {
            f64::from(self.masks[i].get(x, y, 0) >= thr && out.alpha.get(x, y, 0) >= cov)
        });
        let rendered = apply_mask(&out.map, &mask, 0.5)?;
        let target = apply_mask(&self.targets[i], &mask, 0.5)?;
        let (mse, mut upstream) = masked_mse_with_grad(&rendered, &target, &mask, 0.5)?;
        let mut ssim_loss = 0.0;
        if self.cfg.lambda_s > 0.0 {
            let mode = self.cfg.ssim_channels;
            let a = ssim_input(&rendered, mode);
            let b = ssim_input(&target, mode);
            let (s, g) = ssim_with_grad(&a, &b)?;
            ssim_loss = (1.0 - s) / 2.0;
            if want_grad {
                // frame-averaged: lambda_s / (b - 1) * (1 - ssim) / 2
                let w = -0.5 * self.cfg.lambda_s / (self.targets.len() - 1) as f64;
                let (kk, ks) = (upstream.channels(), g.channels());
                for ((u, gs), &m) in upstream
                    .data_mut()
                    .chunks_mut(kk)
                    .zip(g.data().chunks(ks))
                    .zip(mask.data())
                {
                    if m > 0.5 {
                        for c in 0..ks {
                            u[c] += w * gs[c];
                        }
                    }
                }
            }
        }
        let grad = if want_grad {
            rasterize_backward(self.scene, view, self.k, &out, &upstream, self.raster, GradRequest::Pose)?.pose
        } else {
            [0.0; 6]
        };
        Ok(FrameEval { mse, ssim_loss, grad })
    }

    /// Objective with smoothness weight `lambda_c`; gradients per pose when asked.
    fn evaluate(&self, poses: &[Se3Pose], lambda_c: f64, want_grad: bool) -> Result<(IterationStats, Vec<Tangent>)> {
        let b = poses.len();
        let evals: Vec<FrameEval> = (1..b)
            .into_par_iter()
            .map(|i| self.frame(i, &poses[i], want_grad))
            .collect::<Result<_>>()?;
        let mse: f64 = evals.iter().map(|e| e.mse).sum();
        let ssim_loss = evals.iter().map(|e| e.ssim_loss).sum::<f64>() / (b - 1) as f64;
        let mut grads: Vec<Tangent> = std::iter::once([0.0; 6]).chain(evals.iter().map(|e| e.grad)).collect();

        let mut smooth = 0.0;
        if b >= 3 && lambda_c > 0.0 {
            let centers: Vec<Vector3<f64>> = poses.iter().map(camera_center).collect();
            smooth = smoothness_loss(&centers, lambda_c)?;
            if want_grad {
                let dc = smoothness_surrogate_grad(&centers, lambda_c, self.smooth_eps)?;
                // c = -R^T t; under a left increment dc/d(rho) = -R^T, dc/d(omega) = 0
                for i in 1..b {
                    let d_rho = -(poses[i].rotation_matrix() * dc[i]);
                    for a in 0..3 {
                        grads[i][3 + a] += d_rho[a];
                    }
                }
            }
        }
        let total = mse + self.cfg.lambda_s * ssim_loss + smooth;
        Ok((
            IterationStats {
                iter: 0,
                mse,
                ssim_loss,
                smooth,
                lambda_c,
                total,
            },
            grads,
        ))
    }
}

/// Median depth of the scene Gaussians in front of the canonical camera.
fn median_depth(scene: &GaussianScene, near: f64) -> f64 {
    let mut z: Vec<f64> = scene.gaussians().iter().map(|g| g.mean.z).filter(|&z| z > near).collect();
    if z.is_empty() {
        return 1.0;
    }
    z.sort_by(|a, b| a.total_cmp(b));
    z[z.len() / 2]
}

/// Jointly optimizes the poses of frames `1..b` of a window against a frozen
/// scene fitted to frame 0. `targets[0]` and `masks[0]` belong to the
/// canonical frame, whose pose stays the identity. `init`, when given,
/// provides starting poses for frames `1..b` (its first entry is ignored).
pub fn optimize_window(
    scene: &GaussianScene,
    targets: &[PlanarMap],
    masks: &[PlanarMap],
    k: &CameraIntrinsics,
    cfg: &WindowConfig,
    raster: &RasterConfig,
    init: Option<&[Se3Pose]>,
) -> Result<WindowEstimate> {
    optimize_window_observed(scene, targets, masks, k, cfg, raster, init, &mut |_| {}).map(|(e, _)| e)
}

/// [`optimize_window`] with a per-iteration observer and a run report.
#[allow(clippy::too_many_arguments)]
pub fn optimize_window_observed(
    scene: &GaussianScene,
    targets: &[PlanarMap],
    masks: &[PlanarMap],
    k: &CameraIntrinsics,
    cfg: &WindowConfig,
    raster: &RasterConfig,
    init: Option<&[Se3Pose]>,
    observer: &mut dyn FnMut(&IterationStats),
) -> Result<(WindowEstimate, WindowReport)> {
    if !scene.is_frozen() {
        return Err(Error::SceneNotFrozen);
    }
    let b = targets.len();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("a window needs at least 2 frames, got {b}")));
    }
    if masks.len() != b {
        return Err(Error::ShapeMismatch(format!("{b} targets but {} masks", masks.len())));
    }
    for (i, (t, m)) in targets.iter().zip(masks).enumerate() {
        if t.channels() != scene.payload_dim() || t.width() != k.width || t.height() != k.height {
            return Err(Error::ShapeMismatch(format!(
                "target {i} is {}x{}x{}, expected {}x{}x{}",
                t.width(),
                t.height(),
                t.channels(),
                k.width,
                k.height,
                scene.payload_dim()
            )));
        }
        if !t.same_dims(m) || m.channels() != 1 {
            return Err(Error::ShapeMismatch(format!("mask {i} does not match its target")));
        }
    }
    if cfg.lr_rot <= 0.0 || cfg.lr_trans <= 0.0 || cfg.lr_final_factor <= 0.0 {
        return Err(Error::InvalidArgument("learning rates must be positive".into()));
    }
    let mut poses: Vec<Se3Pose> = match init {
        Some(p) if p.len() != b => {
            return Err(Error::ShapeMismatch(format!("{} initial poses for {b} frames", p.len())))
        }
        Some(p) => p.to_vec(),
        None => vec![Se3Pose::identity(); b],
    };
    poses[0] = Se3Pose::identity();

    let masked_targets = targets
        .iter()
        .zip(masks)
        .map(|(t, m)| apply_mask(t, m, cfg.mask_threshold))
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem {
        scene,
        targets: masked_targets,
        masks,
        k,
        cfg,
        raster,
        smooth_eps: cfg.smooth_eps * median_depth(scene, raster.near_plane),
    };

    let final_lambda_c = cfg.lambda_c(cfg.iters.saturating_sub(1));
    let initial_poses = poses.clone();
    let (initial, _) = problem.evaluate(&poses, final_lambda_c, false)?;

    let mut adams: Vec<Adam> = (0..b).map(|_| Adam::new(6)).collect();
    for it in 0..cfg.iters {
        let lambda_c = cfg.lambda_c(it);
        let (mut stats, grads) = problem.evaluate(&poses, lambda_c, true)?;
        stats.iter = it;
        observer(&stats);
        let f = cosine_factor(it, cfg.iters, cfg.lr_final_factor);
        let (lr_r, lr_t) = (cfg.lr_rot * f, cfg.lr_trans * f);
        for i in 1..b {
            let step = adams[i].step(&grads[i], |c| if c < 3 { lr_r } else { lr_t });
            let xi: Tangent = step.try_into().expect("6-vector");
            poses[i] = poses[i].perturb_left(&xi);
        }
    }

    let (fin, _) = problem.evaluate(&poses, final_lambda_c, false)?;
    let reverted = fin.total > initial.total;
    if reverted {
        log::warn!(
            "window objective rose from {} to {}; keeping initial poses",
            initial.total,
            fin.total
        );
        poses = initial_poses;
    }
    let report = WindowReport {
        initial_objective: initial.total,
        final_objective: if reverted { initial.total } else { fin.total },
        iterations: cfg.iters,
        reverted,
    };
    Ok((
        WindowEstimate {
            canonical_index: 0,
            relative_poses: poses,
        },
        report,
    ))
}

/// Frame ranges of overlapping windows over `n` frames. Consecutive windows
/// share one frame. A trailing window that would add a single new frame is
/// folded into its predecessor; a sequence shorter than `b` is one window.
pub fn window_ranges(n: usize, b: usize) -> Vec<std::ops::Range<usize>> {
    assert!(b >= 2, "window size must be at least 2");
    if n <= b {
        return vec![0..n];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < n {
        let mut end = (start + b).min(n);
        if end == n - 1 {
            end = n;
        }
        out.push(start..end);
        start = end - 1;
    }
    out
}

/// Relative views `T_j = P_j^-1 * P_0` of camera-to-world poses, so that
/// `T_0` is the identity.
pub fn relative_views(global: &[Se3Pose]) -> Vec<Se3Pose> {
    let Some(first) = global.first() else {
        return Vec::new();
    };
    let mut out: Vec<Se3Pose> = global.iter().map(|p| p.inverse().compose(first)).collect();
    out[0] = Se3Pose::identity();
    out
}

/// Chains overlapping windows into camera-to-world poses. Frame `j` of window
/// `n` gets `G_n * T_j^-1`, where `G_n` is the global pose of the canonical
/// frame. The trajectory is stamped with frame indices.
pub fn chain_windows(estimates: &[WindowEstimate]) -> Result<Trajectory> {
    let first = estimates.first().ok_or(Error::Empty("window estimates"))?;
    let mut poses: Vec<Se3Pose> = Vec::new();
    let mut global = Se3Pose::identity();
    let mut expected = first.canonical_index;
    for (n, w) in estimates.iter().enumerate() {
        if w.relative_poses.is_empty() {
            return Err(Error::Chain(format!("window {n} is empty")));
        }
        if w.canonical_index != expected {
            return Err(Error::Chain(format!(
                "window {n} starts at frame {}, expected {expected}",
                w.canonical_index
            )));
        }
        if n + 1 < estimates.len() && w.relative_poses.len() < 2 {
            return Err(Error::Chain(format!("window {n} cannot overlap its successor")));
        }
        let skip = usize::from(n > 0);
        for rel in &w.relative_poses[skip..] {
            poses.push(global.compose(&rel.inverse()));
        }
        global = *poses.last().expect("non-empty");
        expected = w.canonical_index + w.relative_poses.len() - 1;
    }
    let stamps = (0..poses.len()).map(|i| (first.canonical_index + i) as f64).collect();
    Trajectory::new(stamps, poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_with_single_overlap() {
        assert_eq!(window_ranges(30, 15), vec![0..15, 14..30]);
        assert_eq!(window_ranges(29, 15), vec![0..15, 14..29]);
        assert_eq!(window_ranges(10, 15), vec![0..10]);
        assert_eq!(window_ranges(15, 15), vec![0..15]);
        assert_eq!(window_ranges(20, 5), vec![0..5, 4..9, 8..13, 12..17, 16..20]);
        for n in 2..60 {
            let r = window_ranges(n, 4);
            assert_eq!(r[0].start, 0);
            assert_eq!(r.last().unwrap().end, n);
            for w in r.windows(2) {
                assert_eq!(w[1].start, w[0].end - 1);
            }
        }
    }

    #[test]
    fn lambda_ramp() {
        let cfg = WindowConfig {
            iters: 11,
            ..Default::default()
        };
        assert_eq!(cfg.lambda_c(0), 0.0);
        assert!((cfg.lambda_c(5) - 0.5).abs() < 1e-15);
        assert_eq!(cfg.lambda_c(10), 1.0);
    }

    #[test]
    fn chain_identity_window() {
        let w = WindowEstimate {
            canonical_index: 0,
            relative_poses: vec![Se3Pose::identity(); 4],
        };
        let t = chain_windows(&[w]).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.poses().iter().all(|p| *p == Se3Pose::identity()));
    }

    #[test]
    fn chain_two_translating_windows() {
        let b = 5;
        // camera moves +0.1 z per frame: the view of frame j is a shift by -0.1 j
        let rel: Vec<Se3Pose> = (0..b)
            .map(|j| Se3Pose::from_translation(Vector3::new(0.0, 0.0, -0.1 * j as f64)))
            .collect();
        let w0 = WindowEstimate {
            canonical_index: 0,
            relative_poses: rel.clone(),
        };
        let w1 = WindowEstimate {
            canonical_index: b - 1,
            relative_poses: rel,
        };
        let t = chain_windows(&[w0, w1]).unwrap();
        assert_eq!(t.len(), 2 * b - 1);
        let last = t.poses().last().unwrap().translation();
        assert!((last.z - 0.1 * (2 * b - 2) as f64).abs() < 1e-12);
    }

    #[test]
    fn chain_rejects_bad_overlap() {
        let w = |start| WindowEstimate {
            canonical_index: start,
            relative_poses: vec![Se3Pose::identity(); 5],
        };
        assert!(chain_windows(&[w(0), w(5)]).is_err());
        assert!(chain_windows(&[w(0), w(3)]).is_err());
        assert!(chain_windows(&[w(0), w(4)]).is_ok());
        assert!(chain_windows(&[]).is_err());
    }
}
