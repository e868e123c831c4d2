#![allow(dead_code)]

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallgs::geometry::Tangent;
use smallgs::raster::{project_gaussian, RasterConfig};
use smallgs::{CameraIntrinsics, Gaussian3D, GaussianScene, PlanarMap, Se3Pose};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(w: usize, h: usize) -> CameraIntrinsics {
    let f = 0.9 * w as f64;
    CameraIntrinsics::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
}

pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    UnitQuaternion::new_normalize(q)
}

/// Random Gaussians in front of the identity camera with a few-pixel footprint.
pub fn random_scene(rng: &mut impl Rng, n: usize, k: usize, cam: &CameraIntrinsics) -> GaussianScene {
    let gaussians = (0..n)
        .map(|_| {
            let u = rng.gen_range(0.0..cam.width as f64);
            let v = rng.gen_range(0.0..cam.height as f64);
            let z = rng.gen_range(2.0..6.0);
            let sigma_px: f64 = rng.gen_range(1.5..4.0);
            let base = sigma_px * z / cam.fx;
            Gaussian3D {
                mean: cam.unproject(u, v, z),
                rotation: random_rotation(rng),
                log_scale: Vector3::new(
                    (base * rng.gen_range(0.5..1.5)).ln(),
                    (base * rng.gen_range(0.5..1.5)).ln(),
                    (base * rng.gen_range(0.5..1.5)).ln(),
                ),
                opacity_logit: rng.gen_range(-1.4..1.4),
                payload: (0..k).map(|_| rng.gen_range(0.0..1.0)).collect(),
            }
        })
        .collect();
    GaussianScene::new(gaussians, k).unwrap()
}

pub fn random_tangent(rng: &mut impl Rng, rot: f64, trans: f64) -> Tangent {
    let mut xi = [0.0; 6];
    for (i, v) in xi.iter_mut().enumerate() {
        let s = if i < 3 { rot } else { trans };
        *v = rng.gen_range(-s..s);
    }
    xi
}

/// Per-pixel brute-force blending over every Gaussian, front to back by mean
/// depth, with the same per-Gaussian opacity rule as the renderer.
pub fn brute_force_render(
    scene: &GaussianScene,
    view: &Se3Pose,
    cam: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> (PlanarMap, PlanarMap) {
    let k = scene.payload_dim();
    let mut proj: Vec<_> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, view, cam, cfg).map(|p| (i, p)))
        .collect();
    proj.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    let mut out = PlanarMap::zeros(cam.width, cam.height, k);
    let mut alpha = PlanarMap::zeros(cam.width, cam.height, 1);
    let cut2 = cfg.extent_sigma * cfg.extent_sigma;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut t = 1.0;
            let mut acc = vec![0.0; k];
            for (_, p) in &proj {
                let d = nalgebra::Vector2::new(x as f64, y as f64) - p.mean2d;
                let m2 = (d.transpose() * p.cov2d.try_inverse().unwrap() * d)[0];
                if m2 > cut2 {
                    continue;
                }
                let a = (p.opacity * (-0.5 * m2).exp()).min(cfg.alpha_max);
                for c in 0..k {
                    acc[c] += p.payload[c] * a * t;
                }
                t *= 1.0 - a;
                if t < cfg.min_transmittance {
                    break;
                }
            }
            for c in 0..k {
                out.set(x, y, c, acc[c] + t * cfg.background.get(c).copied().unwrap_or(0.0));
            }
            alpha.set(x, y, 0, 1.0 - t);
        }
    }
    (out, alpha)
}

pub fn mse(a: &PlanarMap, b: &PlanarMap) -> f64 {
    let n = a.data().len() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

pub fn mse_grad(a: &PlanarMap, b: &PlanarMap) -> PlanarMap {
    let n = a.data().len() as f64;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * (x - y) / n).collect();
    PlanarMap::new(a.width(), a.height(), a.channels(), data).unwrap()
}

/// Central finite difference of `f` along each tangent direction.
pub fn fd_pose_gradient(view: &Se3Pose, h: f64, f: impl Fn(&Se3Pose) -> f64) -> Tangent {
    let mut out = [0.0; 6];
    for (i, o) in out.iter_mut().enumerate() {
        let mut xi = [0.0; 6];
        xi[i] = h;
        let plus = f(&view.perturb_left(&xi));
        xi[i] = -h;
        let minus = f(&view.perturb_left(&xi));
        *o = (plus - minus) / (2.0 * h);
    }
    out
}

pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Scene spilling slightly past the image borders so small camera motions
/// keep the view covered. Smooth payloads are sinusoids of position.
pub fn covering_scene(rng: &mut impl Rng, n: usize, k: usize, cam: &CameraIntrinsics, smooth: bool) -> GaussianScene {
    let fields: Vec<(Vector3<f64>, f64)> = (0..k)
        .map(|_| {
            let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            (dir * 2.0, rng.gen_range(0.0..6.28))
        })
        .collect();
    let gaussians = (0..n)
        .map(|_| {
            let u = rng.gen_range(-0.15..1.15) * cam.width as f64;
            let v = rng.gen_range(-0.15..1.15) * cam.height as f64;
            let z = rng.gen_range(2.0..6.0);
            let base = rng.gen_range(1.5..4.0) * z / cam.fx;
            let mean = cam.unproject(u, v, z);
            let payload = if smooth {
                fields.iter().map(|(w, b)| 0.5 + 0.5 * (w.dot(&mean) + b).sin()).collect()
            } else {
                (0..k).map(|_| rng.gen_range(0.0..1.0)).collect()
            };
            Gaussian3D {
                mean,
                rotation: random_rotation(rng),
                log_scale: Vector3::from_fn(|_, _| (base * rng.gen_range(0.6..1.4)).ln()),
                opacity_logit: rng.gen_range(0.0..2.5),
                payload,
            }
        })
        .collect();
    GaussianScene::new(gaussians, k).unwrap()
}

pub fn mean_depth(scene: &GaussianScene) -> f64 {
    scene.gaussians().iter().map(|g| g.mean.z).sum::<f64>() / scene.len() as f64
}

/// Targets rendered from a frozen scene at known views.
pub struct Recovery {
    pub cam: CameraIntrinsics,
    pub scene: GaussianScene,
    /// World-to-camera views of the window frames; the first is the identity.
    pub views: Vec<Se3Pose>,
    pub targets: Vec<PlanarMap>,
    pub masks: Vec<PlanarMap>,
}

/// Camera centers advance by a constant step (no curvature for the
/// smoothness term to resist) and orientations are random within
/// `max_rot_deg`. The farthest center sits `max_trans_frac` of the mean
/// scene depth from the canonical camera.
pub fn recovery_problem(seed: u64, n: usize, k: usize, b: usize, smooth: bool, max_rot_deg: f64, max_trans_frac: f64) -> Recovery {
    let mut r = rng(seed);
    let cam = camera(64, 48);
    let scene = covering_scene(&mut r, n, k, &cam, smooth).freeze();
    let depth = mean_depth(&scene);
    let dir = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)).normalize();
    let step = dir * max_trans_frac * depth * r.gen_range(0.5..1.0) / (b - 1) as f64;
    let views: Vec<Se3Pose> = (0..b)
        .map(|j| {
            if j == 0 {
                return Se3Pose::identity();
            }
            let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)).normalize();
            let angle = r.gen_range(0.3..1.0) * max_rot_deg.to_radians();
            let cam_to_world = Se3Pose::from_parts(UnitQuaternion::from_scaled_axis(axis * angle), step * j as f64);
            cam_to_world.inverse()
        })
        .collect();
    let cfg = RasterConfig::default();
    let targets = views
        .iter()
        .map(|v| smallgs::raster::rasterize(&scene, v, &cam, &cfg).unwrap().map)
        .collect();
    let masks = vec![PlanarMap::filled(64, 48, 1, 1.0); b];
    Recovery {
        cam,
        scene,
        views,
        targets,
        masks,
    }
}

/// Worst (rotation degrees, translation) error over all frames.
pub fn worst_error(est: &[Se3Pose], truth: &[Se3Pose]) -> (f64, f64) {
    est.iter().zip(truth).fold((0.0, 0.0), |(r, t), (e, g)| {
        let (a, d) = e.distance(g);
        (f64::max(r, a.to_degrees()), f64::max(t, d))
    })
}
