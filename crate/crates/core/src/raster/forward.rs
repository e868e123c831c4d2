use rayon::prelude::*;

use super::project::{project_with_rotation, ProjectedGaussian};
use super::RasterConfig;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::geometry::Se3Pose;
use crate::map::PlanarMap;

/// Per-pixel blend records kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pub(crate) view: Se3Pose,
    pub(crate) intrinsics: CameraIntrinsics,
    pub(crate) scene_len: usize,
    pub(crate) channels: usize,
    /// Projected Gaussians, sorted front to back.
    pub(crate) projected: Vec<ProjectedGaussian>,
    pub(crate) tiles_x: usize,
    /// Per tile: indices into `projected`, front to back.
    pub(crate) tile_lists: Vec<Vec<u32>>,
    /// Per pixel: number of tile-list entries consumed before blending stopped.
    pub(crate) consumed: Vec<u32>,
    /// Per pixel: transmittance left after blending.
    pub(crate) final_t: Vec<f64>,
}

impl RenderAux {
    pub fn projected(&self) -> &[ProjectedGaussian] {
        &self.projected
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub map: PlanarMap,
    /// Accumulated opacity `1 - T`.
    pub alpha: PlanarMap,
    pub aux: RenderAux,
}

pub(crate) struct TileGeom {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

pub(crate) fn tile_geom(t: usize, tiles_x: usize, ts: usize, w: usize, h: usize) -> TileGeom {
    let (tx, ty) = (t % tiles_x, t / tiles_x);
    TileGeom {
        x0: tx * ts,
        y0: ty * ts,
        x1: ((tx + 1) * ts).min(w),
        y1: ((ty + 1) * ts).min(h),
    }
}

/// Per-pixel opacity of a projected Gaussian at offset `(dx, dy)` from its mean.
/// `None` outside the support radius.
#[inline]
pub(crate) fn pixel_alpha(g: &ProjectedGaussian, dx: f64, dy: f64, cutoff2: f64, alpha_max: f64) -> Option<(f64, f64, bool)> {
    let q = &g.conic;
    let m2 = q[(0, 0)] * dx * dx + 2.0 * q[(0, 1)] * dx * dy + q[(1, 1)] * dy * dy;
    if !(m2 <= cutoff2) {
        return None;
    }
    let gauss = (-0.5 * m2).exp();
    let a = g.opacity * gauss;
    if a > alpha_max {
        Some((alpha_max, gauss, true))
    } else {
        Some((a, gauss, false))
    }
}

/// Renders `scene` from `view` (world-to-camera) into a `payload_dim`-channel map.
pub fn rasterize(
    scene: &GaussianScene,
    view: &Se3Pose,
    k: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    let channels = scene.payload_dim();
    cfg.validate(channels)?;
    k.validate()?;
    let (w, h) = (k.width, k.height);

    let rot = view.rotation_matrix();
    let mut projected: Vec<ProjectedGaussian> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_with_rotation(i, g, &rot, view.translation(), k, cfg))
        .collect();
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let ts = cfg.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (pi, g) in projected.iter().enumerate() {
        let lo_x = (g.mean2d.x - g.radius_px).max(0.0);
        let hi_x = (g.mean2d.x + g.radius_px).min((w - 1) as f64);
        let lo_y = (g.mean2d.y - g.radius_px).max(0.0);
        let hi_y = (g.mean2d.y + g.radius_px).min((h - 1) as f64);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        // pixel centers sit on integer coordinates
        let (px0, px1) = (lo_x.ceil() as usize, hi_x.floor() as usize);
        let (py0, py1) = (lo_y.ceil() as usize, hi_y.floor() as usize);
        if px0 > px1 || py0 > py1 {
            continue;
        }
        for ty in py0 / ts..=py1 / ts {
            for tx in px0 / ts..=px1 / ts {
                tile_lists[ty * tiles_x + tx].push(pi as u32);
            }
        }
    }

    let cutoff2 = cfg.extent_sigma * cfg.extent_sigma;
    let bg: Vec<f64> = (0..channels).map(|c| cfg.background_value(c)).collect();

    struct TileOut {
        color: Vec<f64>,
        final_t: Vec<f64>,
        consumed: Vec<u32>,
    }

    let tile_out: Vec<TileOut> = (0..tile_lists.len())
        .into_par_iter()
        .map(|t| {
            let tg = tile_geom(t, tiles_x, ts, w, h);
            let list = &tile_lists[t];
            let n = (tg.x1 - tg.x0) * (tg.y1 - tg.y0);
            let mut out = TileOut {
                color: vec![0.0; n * channels],
                final_t: vec![1.0; n],
                consumed: vec![0; n],
            };
            let mut p = 0;
            for y in tg.y0..tg.y1 {
                for x in tg.x0..tg.x1 {
                    let color = &mut out.color[p * channels..(p + 1) * channels];
                    let mut t_acc = 1.0;
                    let mut used = 0u32;
                    for &gi in list {
                        used += 1;
                        let g = &projected[gi as usize];
                        let dx = x as f64 - g.mean2d.x;
                        let dy = y as f64 - g.mean2d.y;
                        let Some((alpha, _, _)) = pixel_alpha(g, dx, dy, cutoff2, cfg.alpha_max) else {
                            continue;
                        };
                        let weight = alpha * t_acc;
                        for (c, v) in color.iter_mut().zip(&g.payload) {
                            *c += v * weight;
                        }
                        t_acc *= 1.0 - alpha;
                        if t_acc < cfg.min_transmittance {
                            break;
                        }
                    }
                    for (c, b) in color.iter_mut().zip(&bg) {
                        *c += t_acc * b;
                    }
                    out.final_t[p] = t_acc;
                    out.consumed[p] = used;
                    p += 1;
                }
            }
            out
        })
        .collect();

    let mut map = PlanarMap::zeros(w, h, channels);
    let mut alpha = PlanarMap::zeros(w, h, 1);
    let mut final_t = vec![1.0; w * h];
    let mut consumed = vec![0u32; w * h];
    for (t, out) in tile_out.into_iter().enumerate() {
        let tg = tile_geom(t, tiles_x, ts, w, h);
        let mut p = 0;
        for y in tg.y0..tg.y1 {
            for x in tg.x0..tg.x1 {
                map.pixel_mut(x, y)
                    .copy_from_slice(&out.color[p * channels..(p + 1) * channels]);
                alpha.set(x, y, 0, 1.0 - out.final_t[p]);
                final_t[y * w + x] = out.final_t[p];
                consumed[y * w + x] = out.consumed[p];
                p += 1;
            }
        }
    }
    if map.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rendered map"));
    }

    Ok(RenderOutput {
        map,
        alpha,
        aux: RenderAux {
            view: *view,
            intrinsics: *k,
            scene_len: scene.len(),
            channels,
            projected,
            tiles_x,
            tile_lists,
            consumed,
            final_t,
        },
    })
}
