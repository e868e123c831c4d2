//! End-to-end sequence estimation: per window lift, fit, freeze, optimize,
//! then chain.

use std::ops::Range;

use serde::Serialize;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::geometry::Se3Pose;
use crate::io::config::{FitSpace, InitSource, RunConfig};
use crate::io::Dataset;
use crate::map::PlanarMap;
use crate::scene_init::{
    fit_canonical_report, init_gaussians, lift_depth, load_pointcloud, FitReport, LiftedPoint, PcaProjection,
};
use crate::synth::SynthSequence;
use crate::trajectory::Trajectory;
use crate::window::{
    chain_windows, optimize_window_observed, relative_views, window_ranges, IterationStats, LossSpace,
    WindowEstimate, WindowReport,
};

/// Per-frame inputs of a sequence.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn intrinsics(&self) -> &CameraIntrinsics;
    fn timestamps(&self) -> Vec<f64>;
    fn rgb(&self, i: usize) -> Result<PlanarMap>;
    fn depth(&self, i: usize) -> Result<PlanarMap>;
    fn mask(&self, i: usize) -> Result<PlanarMap>;
    /// Raw feature channels, erroring if the source has none.
    fn features(&self, i: usize) -> Result<PlanarMap>;
    fn pointcloud(&self, i: usize) -> Result<Vec<LiftedPoint>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for Dataset {
    fn len(&self) -> usize {
        Dataset::len(self)
    }
    fn intrinsics(&self) -> &CameraIntrinsics {
        Dataset::intrinsics(self)
    }
    fn timestamps(&self) -> Vec<f64> {
        Dataset::timestamps(self).to_vec()
    }
    fn rgb(&self, i: usize) -> Result<PlanarMap> {
        Dataset::rgb(self, i)
    }
    fn depth(&self, i: usize) -> Result<PlanarMap> {
        Dataset::depth(self, i)
    }
    fn mask(&self, i: usize) -> Result<PlanarMap> {
        Dataset::mask(self, i)
    }
    fn features(&self, i: usize) -> Result<PlanarMap> {
        Dataset::features(self, i)
    }
    fn pointcloud(&self, i: usize) -> Result<Vec<LiftedPoint>> {
        load_pointcloud(self.pointcloud_path(i)?)
    }
}

impl FrameSource for SynthSequence {
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }
    fn timestamps(&self) -> Vec<f64> {
        self.ground_truth.stamps().to_vec()
    }
    fn rgb(&self, i: usize) -> Result<PlanarMap> {
        Ok(self.frame(i)?.rgb.clone())
    }
    fn depth(&self, i: usize) -> Result<PlanarMap> {
        Ok(self.frame(i)?.depth.clone())
    }
    fn mask(&self, i: usize) -> Result<PlanarMap> {
        Ok(self.frame(i)?.mask.clone())
    }
    fn features(&self, i: usize) -> Result<PlanarMap> {
        self.frame(i)?
            .feat
            .clone()
            .ok_or_else(|| Error::Dataset("sequence has no feature maps".into()))
    }
    fn pointcloud(&self, _: usize) -> Result<Vec<LiftedPoint>> {
        Err(Error::Dataset("synthetic sequences carry no point clouds".into()))
    }
}

impl SynthSequence {
    fn frame(&self, i: usize) -> Result<&crate::synth::SynthFrame> {
        self.frames
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {i} out of range for {} frames", self.frames.len())))
    }
}

/// Progress notifications from [`estimate_sequence_observed`].
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Progress<'a> {
    WindowStart {
        window: usize,
        first_frame: usize,
        last_frame: usize,
    },
    Fit {
        window: usize,
        gaussians: usize,
        #[serde(flatten)]
        report: &'a FitReport,
    },
    Iteration {
        window: usize,
        #[serde(flatten)]
        stats: &'a IterationStats,
    },
    WindowDone {
        window: usize,
        #[serde(flatten)]
        report: &'a WindowReport,
    },
}

/// Loss-space targets for every frame; features are PCA-reduced with a basis
/// pooled over the whole sequence.
struct Targets {
    maps: Vec<PlanarMap>,
}

fn loss_targets(src: &dyn FrameSource, cfg: &RunConfig) -> Result<Targets> {
    let n = src.len();
    match cfg.loss_space {
        LossSpace::Rgb => Ok(Targets {
            maps: (0..n).map(|i| src.rgb(i)).collect::<Result<_>>()?,
        }),
        LossSpace::Feature => {
            let first = src.features(0)?;
            if cfg.f > first.channels() {
                return Err(Error::Config {
                    path: "f".into(),
                    msg: format!("{} channels requested, features have {}", cfg.f, first.channels()),
                });
            }
            let pca = PcaProjection::fit_streaming(n, |i| src.features(i), cfg.f)?;
            log::info!(
                "feature PCA: {} -> {} channels, explained variance {:?}",
                pca.input_channels(),
                pca.output_channels(),
                pca.explained_variance()
            );
            Ok(Targets {
                maps: (0..n).map(|i| pca.apply(&src.features(i)?)).collect::<Result<_>>()?,
            })
        }
    }
}

/// Nearest-pixel payload under the projection of `p`, clamped to the image.
fn sample_at(map: &PlanarMap, k: &CameraIntrinsics, p: &nalgebra::Vector3<f64>) -> Vec<f64> {
    let uv = if p.z > 0.0 { k.project(p) } else { nalgebra::Vector2::new(k.cx, k.cy) };
    let x = (uv.x.round().max(0.0) as usize).min(map.width() - 1);
    let y = (uv.y.round().max(0.0) as usize).min(map.height() - 1);
    map.pixel(x, y).to_vec()
}

/// Builds, fits and freezes the canonical scene of the window starting at `c`.
fn canonical_scene(
    src: &dyn FrameSource,
    cfg: &RunConfig,
    c: usize,
    loss_target: &PlanarMap,
    mask: &PlanarMap,
) -> Result<(GaussianScene, FitReport)> {
    let k = src.intrinsics();
    let fit_target = match (cfg.fit_space, cfg.loss_space) {
        (FitSpace::Rgb, LossSpace::Feature) => src.rgb(c)?,
        _ => loss_target.clone(),
    };
    let mut points = match cfg.init_source {
        InitSource::Depth => lift_depth(&src.depth(c)?, mask, k, &fit_target, &cfg.lift)?,
        InitSource::Pointcloud => src.pointcloud(c)?,
    };
    if points.iter().any(|(_, p)| p.len() != fit_target.channels()) {
        for (p, payload) in points.iter_mut() {
            *payload = sample_at(&fit_target, k, p);
        }
    }
    let scene = init_gaussians(&points, &cfg.lift)?;
    let (scene, report) = fit_canonical_report(
        scene,
        &fit_target,
        mask,
        cfg.lift.mask_threshold,
        k,
        &cfg.fit,
        &cfg.raster,
    )?;
    if matches!((cfg.fit_space, cfg.loss_space), (FitSpace::Rgb, LossSpace::Feature)) {
        // geometry from the RGB fit, payloads re-seeded from the features
        let payloads = points.iter().map(|(p, _)| sample_at(loss_target, k, p)).collect();
        let scene = scene.with_payloads(payloads, loss_target.channels())?.freeze();
        return Ok((scene, report));
    }
    Ok((scene, report))
}

/// Estimates camera-to-world poses for every frame. With `init`, each
/// window starts from the prior's relative poses and the result is anchored
/// at the prior's first pose.
pub fn estimate_sequence(src: &dyn FrameSource, cfg: &RunConfig, init: Option<&Trajectory>) -> Result<Trajectory> {
    estimate_sequence_observed(src, cfg, init, &mut |_| {})
}

pub fn estimate_sequence_observed(
    src: &dyn FrameSource,
    cfg: &RunConfig,
    init: Option<&Trajectory>,
    observer: &mut dyn FnMut(&Progress),
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = src.len();
    if n == 0 {
        return Err(Error::Empty("sequence"));
    }
    if let Some(t) = init {
        if t.len() != n {
            return Err(Error::InvalidArgument(format!(
                "initial trajectory has {} poses, sequence has {n} frames",
                t.len()
            )));
        }
    }
    let stamps = src.timestamps();
    if n == 1 {
        let pose = init.map_or(Se3Pose::identity(), |t| t.poses()[0]);
        return Trajectory::new(stamps, vec![pose]);
    }
    let targets = loss_targets(src, cfg)?;
    let wcfg = cfg.window();
    let ranges: Vec<Range<usize>> = window_ranges(n, cfg.window_size);
    let mut estimates = Vec::with_capacity(ranges.len());
    for (w, range) in ranges.iter().enumerate() {
        observer(&Progress::WindowStart {
            window: w,
            first_frame: range.start,
            last_frame: range.end - 1,
        });
        let masks: Vec<PlanarMap> = range.clone().map(|i| src.mask(i)).collect::<Result<_>>()?;
        let c = range.start;
        let (scene, fit) = canonical_scene(src, cfg, c, &targets.maps[c], &masks[0])?;
        observer(&Progress::Fit {
            window: w,
            gaussians: scene.len(),
            report: &fit,
        });
        let prior = init.map(|t| relative_views(&t.poses()[range.clone()]));
        let (mut est, report) = optimize_window_observed(
            &scene,
            &targets.maps[range.clone()],
            &masks,
            src.intrinsics(),
            &wcfg,
            &cfg.raster,
            prior.as_deref(),
            &mut |stats| {
                observer(&Progress::Iteration { window: w, stats });
            },
        )?;
        // the canonical scene is discarded here
        drop(scene);
        observer(&Progress::WindowDone { window: w, report: &report });
        est.canonical_index = c;
        estimates.push(est);
    }
    let chained = chain_windows(&estimates)?;
    let anchor = init.map_or(Se3Pose::identity(), |t| t.poses()[0]);
    Trajectory::new(stamps, chained.poses().iter().map(|p| anchor.compose(p)).collect())
}

/// Splits camera-to-world poses into windows of relative views; the inverse
/// of [`chain_windows`].
pub fn split_into_windows(poses: &[Se3Pose], b: usize) -> Vec<WindowEstimate> {
    window_ranges(poses.len(), b)
        .into_iter()
        .map(|r| WindowEstimate {
            canonical_index: r.start,
            relative_poses: relative_views(&poses[r]),
        })
        .collect()
}
