//! Synthetic small-baseline sequences with exact ground truth.
//!
//! A random Gaussian scene is placed 2–10 units in front of the first
//! camera and rendered along a generated camera path. Depth maps are the
//! alpha-weighted mean depth of the blended Gaussians; masks flag pixels
//! dominated by moving Gaussians.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::{logit, Gaussian3D, GaussianScene};
use crate::geometry::Se3Pose;
use crate::io::dataset::DatasetWriter;
use crate::io::tum::write_tum;
use crate::map::PlanarMap;
use crate::raster::{rasterize, RasterConfig};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryModel {
    Static,
    ConstantVelocity,
    Arc,
    Jitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_gaussians: usize,
    pub width: usize,
    pub height: usize,
    /// Feature channels; a feat/ directory is written when above 3.
    pub payload_dim: usize,
    pub trajectory: TrajectoryModel,
    pub max_rotation_deg: f64,
    /// Per-frame translation cap as a fraction of the mean scene depth.
    pub max_translation: f64,
    /// Explicit per-frame translation for the constant-velocity model,
    /// in scene units. Drawn at random when absent.
    pub velocity: Option<[f64; 3]>,
    pub n_frames: usize,
    pub seed: u64,
    pub dynamic_fraction: f64,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_gaussians: 600,
            width: 64,
            height: 48,
            payload_dim: 3,
            trajectory: TrajectoryModel::Jitter,
            max_rotation_deg: 0.5,
            max_translation: 0.005,
            velocity: None,
            n_frames: 30,
            seed: 0,
            dynamic_fraction: 0.0,
            fps: 30.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::InvalidArgument("n_frames must be at least 2".into()));
        }
        if self.n_gaussians == 0 || self.width == 0 || self.height == 0 || self.payload_dim == 0 {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dynamic_fraction) || !(0.0..=1.0).contains(&self.max_translation) {
            return Err(Error::InvalidArgument("fractions must lie in [0, 1]".into()));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg < 90.0) {
            return Err(Error::InvalidArgument("max_rotation_deg must lie in [0, 90)".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        Ok(())
    }

    /// Parses a JSON synth config; errors carry the offending key path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SynthConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            msg: e.into_inner().to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: ".".into(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let f = 0.9 * self.width as f64;
        CameraIntrinsics::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    fn writes_features(&self) -> bool {
        self.payload_dim > 3
    }
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub rgb: PlanarMap,
    pub depth: PlanarMap,
    pub mask: PlanarMap,
    pub feat: Option<PlanarMap>,
    /// Accumulated opacity of the render.
    pub alpha: PlanarMap,
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world poses, first one the identity.
    pub ground_truth: Trajectory,
    pub frames: Vec<SynthFrame>,
    /// Static scene as placed at frame 0, RGB payloads.
    pub scene: GaussianScene,
    pub mean_depth: f64,
}

struct Sampled {
    mean: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
    log_scale: Vector3<f64>,
    opacity: f64,
    rgb: [f64; 3],
    feat: Vec<f64>,
    dynamic: bool,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Uniform sample from the ball of radius `r`.
fn random_ball(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    random_unit(rng) * r * rng.gen::<f64>().cbrt()
}

fn sample_scene(cfg: &SynthConfig, k: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> Vec<Sampled> {
    // smooth random feature field: sum of low-frequency sinusoids per channel
    let fields: Vec<(Vector3<f64>, f64)> = (0..cfg.payload_dim)
        .map(|_| (random_unit(rng) * rng.gen_range(0.3..1.2), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let n_dynamic = (cfg.dynamic_fraction * cfg.n_gaussians as f64).round() as usize;
    (0..cfg.n_gaussians)
        .map(|i| {
            let z = rng.gen_range(2.0..10.0);
            let u = rng.gen_range(-0.1..1.1) * k.width as f64;
            let v = rng.gen_range(-0.1..1.1) * k.height as f64;
            let mean = k.unproject(u, v, z);
            // footprint 1.5–4 px at its depth, mildly anisotropic
            let sigma = rng.gen_range(1.5..4.0) * z / k.fx;
            let log_scale = Vector3::from_fn(|_, _| (sigma * rng.gen_range(0.6..1.4)).ln());
            let rotation = UnitQuaternion::from_scaled_axis(random_unit(rng) * rng.gen_range(0.0..std::f64::consts::PI));
            let rgb = [rng.gen(), rng.gen(), rng.gen()];
            let feat = fields.iter().map(|(w, b)| (w.dot(&mean) + b).sin()).collect();
            Sampled {
                mean,
                rotation,
                log_scale,
                opacity: rng.gen_range(0.5..0.95),
                rgb,
                feat,
                dynamic: i < n_dynamic,
            }
        })
        .collect()
}

/// Camera-to-world poses for `cfg.trajectory`; per-frame motion stays within
/// the rotation cap and `max_translation * mean_depth`.
fn sample_path(cfg: &SynthConfig, mean_depth: f64, rng: &mut ChaCha8Rng) -> Vec<Se3Pose> {
    let n = cfg.n_frames;
    let t_cap = cfg.max_translation * mean_depth;
    let r_cap = cfg.max_rotation_deg.to_radians();
    match cfg.trajectory {
        TrajectoryModel::Static => vec![Se3Pose::identity(); n],
        TrajectoryModel::ConstantVelocity => {
            let v = match cfg.velocity {
                Some(v) => Vector3::from(v),
                None => random_unit(rng) * 0.5 * t_cap,
            };
            let w = random_unit(rng) * 0.5 * r_cap;
            (0..n)
                .map(|i| {
                    let f = i as f64;
                    Se3Pose::from_parts(UnitQuaternion::from_scaled_axis(w * f), v * f)
                })
                .collect()
        }
        TrajectoryModel::Arc => {
            // orbit the scene center about the vertical axis
            let step = (0.5 * r_cap).min(0.5 * cfg.max_translation);
            let center = Vector3::new(0.0, 0.0, mean_depth);
            (0..n)
                .map(|i| {
                    let r = UnitQuaternion::from_scaled_axis(Vector3::y() * step * i as f64);
                    Se3Pose::from_parts(r, center - r * center)
                })
                .collect()
        }
        TrajectoryModel::Jitter => {
            // handheld shake: zero-mean uniform noise around a constant-velocity
            // base path. Base step half the cap, noise radius a quarter, so
            // consecutive frames never differ by more than the cap.
            let v = random_unit(rng) * 0.5 * t_cap;
            let w = random_unit(rng) * 0.5 * r_cap;
            (0..n)
                .map(|i| {
                    let f = i as f64;
                    let (dt, dr) = if i == 0 {
                        (Vector3::zeros(), Vector3::zeros())
                    } else {
                        (random_ball(rng, 0.25 * t_cap), random_ball(rng, 0.25 * r_cap))
                    };
                    Se3Pose::from_parts(
                        UnitQuaternion::from_scaled_axis(dr) * UnitQuaternion::from_scaled_axis(w * f),
                        v * f + dt,
                    )
                })
                .collect()
        }
    }
}

/// Renders a sequence in memory.
pub fn generate_sequence(cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampled = sample_scene(cfg, &k, &mut rng);
    let mean_depth = sampled.iter().map(|g| g.mean.z).sum::<f64>() / sampled.len() as f64;
    let path = sample_path(cfg, mean_depth, &mut rng);
    let stamps: Vec<f64> = (0..cfg.n_frames).map(|i| i as f64 / cfg.fps).collect();
    let ground_truth = Trajectory::new(stamps, path.clone())?;

    let scene = GaussianScene::new(
        sampled
            .iter()
            .map(|s| Gaussian3D {
                mean: s.mean,
                rotation: s.rotation,
                log_scale: s.log_scale,
                opacity_logit: logit(s.opacity),
                payload: s.rgb.to_vec(),
            })
            .collect(),
        3,
    )?;

    // smooth random walk for moving Gaussians
    let walk_step = 0.01 * mean_depth;
    let mut velocities: Vec<Vector3<f64>> = sampled
        .iter()
        .map(|s| if s.dynamic { random_ball(&mut rng, walk_step) } else { Vector3::zeros() })
        .collect();

    let raster = RasterConfig::default();
    let feat_dim = if cfg.writes_features() { cfg.payload_dim } else { 0 };
    let mut frames = Vec::with_capacity(cfg.n_frames);
    for (i, cam_to_world) in path.iter().enumerate() {
        if i > 0 {
            for (s, v) in sampled.iter_mut().zip(velocities.iter_mut()) {
                if s.dynamic {
                    *v = 0.8 * *v + random_ball(&mut rng, 0.5 * walk_step);
                    s.mean += *v;
                }
            }
        }
        let view = cam_to_world.inverse();
        // one pass carries rgb, features, camera depth and the dynamic flag
        let gaussians = sampled
            .iter()
            .map(|s| {
                let mut payload = s.rgb.to_vec();
                payload.extend_from_slice(&s.feat[..feat_dim]);
                payload.push(view.apply(&s.mean).z);
                payload.push(if s.dynamic { 1.0 } else { 0.0 });
                Gaussian3D {
                    mean: s.mean,
                    rotation: s.rotation,
                    log_scale: s.log_scale,
                    opacity_logit: logit(s.opacity),
                    payload,
                }
            })
            .collect();
        let c = 3 + feat_dim + 2;
        let frame_scene = GaussianScene::new(gaussians, c)?;
        let out = rasterize(&frame_scene, &view, &k, &raster)?;
        let rgb = PlanarMap::from_fn(k.width, k.height, 3, |x, y, ch| out.map.get(x, y, ch));
        let feat = (feat_dim > 0).then(|| PlanarMap::from_fn(k.width, k.height, feat_dim, |x, y, ch| out.map.get(x, y, 3 + ch)));
        let mut depth = PlanarMap::zeros(k.width, k.height, 1);
        let mut mask = PlanarMap::filled(k.width, k.height, 1, 1.0);
        for y in 0..k.height {
            for x in 0..k.width {
                let a = out.alpha.get(x, y, 0);
                if a > 1e-6 {
                    depth.set(x, y, 0, out.map.get(x, y, c - 2) / a);
                    if out.map.get(x, y, c - 1) > 0.5 * a {
                        mask.set(x, y, 0, 0.0);
                    }
                }
            }
        }
        frames.push(SynthFrame {
            rgb,
            depth,
            mask,
            feat,
            alpha: out.alpha,
        });
    }
    Ok(SynthSequence {
        intrinsics: k,
        ground_truth,
        frames,
        scene,
        mean_depth,
    })
}

/// Writes a generated sequence as a dataset plus `groundtruth.txt`.
pub fn write_sequence(seq: &SynthSequence, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let features = seq.frames.first().is_some_and(|f| f.feat.is_some());
    let w = DatasetWriter::create(out_dir, &seq.intrinsics, seq.ground_truth.stamps(), features)?;
    for (i, f) in seq.frames.iter().enumerate() {
        w.write_frame(i, &f.rgb, &f.depth, &f.mask, f.feat.as_ref())?;
    }
    write_tum(out_dir.join("groundtruth.txt"), &seq.ground_truth)
}

/// Generates a dataset in `out_dir`; identical seeds give identical bytes.
pub fn generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthSequence> {
    let seq = generate_sequence(cfg)?;
    write_sequence(&seq, out_dir)?;
    Ok(seq)
}
