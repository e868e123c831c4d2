//! Canonical-frame scene construction: depth lifting, Gaussian
//! initialization, fitting, and feature channel reduction.

mod fit;
mod pca;

pub use fit::{fit_canonical, fit_canonical_report, FitConfig, FitReport};
pub use pca::{pca_select_channels, PcaProjection};

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianScene};
use crate::io::{read_npy, write_npy, NpyArray, NpyData};
use crate::map::PlanarMap;

/// A lifted point with its payload.
pub type LiftedPoint = (Vector3<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    pub pixel_stride: usize,
    pub mask_threshold: f64,
    pub init_opacity: f64,
    pub scale_knn: usize,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            pixel_stride: 2,
            mask_threshold: 0.5,
            init_opacity: 0.5,
            scale_knn: 3,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pixel_stride == 0 {
            return Err(Error::InvalidArgument("pixel_stride must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(Error::InvalidArgument("mask_threshold must lie in [0, 1]".into()));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::InvalidArgument("init_opacity must lie in (0, 1)".into()));
        }
        if self.scale_knn == 0 {
            return Err(Error::InvalidArgument("scale_knn must be at least 1".into()));
        }
        Ok(())
    }
}

/// Unprojects every `pixel_stride`-th static pixel with positive depth into
/// the camera frame, carrying the payload found at that pixel.
pub fn lift_depth(
    depth: &PlanarMap,
    mask: &PlanarMap,
    k: &CameraIntrinsics,
    payload_source: &PlanarMap,
    cfg: &LiftConfig,
) -> Result<Vec<LiftedPoint>> {
    cfg.validate()?;
    for (name, m) in [("depth", depth), ("mask", mask), ("payload", payload_source)] {
        if m.width() != k.width || m.height() != k.height {
            return Err(Error::ShapeMismatch(format!(
                "{name} map is {}x{}, intrinsics say {}x{}",
                m.width(),
                m.height(),
                k.width,
                k.height
            )));
        }
    }
    if depth.channels() != 1 || mask.channels() != 1 {
        return Err(Error::ShapeMismatch("depth and mask must have one channel".into()));
    }
    let mut out = Vec::new();
    for v in (0..k.height).step_by(cfg.pixel_stride) {
        for u in (0..k.width).step_by(cfg.pixel_stride) {
            let d = depth.get(u, v, 0);
            if mask.get(u, v, 0) >= cfg.mask_threshold && d > 0.0 && d.is_finite() {
                out.push((k.unproject(u as f64, v as f64, d), payload_source.pixel(u, v).to_vec()));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoStaticPixels);
    }
    Ok(out)
}

const MIN_SCALE: f64 = 1e-6;
const LONE_POINT_SCALE: f64 = 1e-2;

/// Mean distance from each point to its `knn` nearest neighbours (fewer if
/// the cloud is small), by exhaustive search over a uniform grid.
pub fn knn_mean_distances(points: &[Vector3<f64>], knn: usize) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![LONE_POINT_SCALE; n];
    }
    let kk = knn.min(n - 1);
    let grid = SpatialGrid::build(points, kk);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = grid.nearest(points, i, p, kk);
            (d.iter().sum::<f64>() / kk as f64).max(MIN_SCALE)
        })
        .collect()
}

/// Uniform voxel hash used for neighbour queries; searches expanding shells
/// until the k-th best distance is certainly final.
struct SpatialGrid {
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl SpatialGrid {
    fn build(points: &[Vector3<f64>], k: usize) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let max_ext = ext.max().max(1e-12);
        // aim for a few points per cell; grow cells until the grid stays small
        let target = points.len().div_ceil(2 * k.max(1)).max(1) as f64;
        let vol: f64 = ext.iter().map(|e| e.max(max_ext * 1e-3)).product();
        let mut cell = (vol / target).cbrt().max(max_ext * 1e-3);
        let budget = 4 * points.len() + 8;
        let dims = loop {
            let dims = [0, 1, 2].map(|a| (ext[a] / cell).floor() as usize + 1);
            if dims.iter().product::<usize>() <= budget {
                break dims;
            }
            cell *= 1.5;
        };
        let mut g = SpatialGrid {
            origin: lo,
            cell,
            dims,
            cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for (i, p) in points.iter().enumerate() {
            let c = g.flat(g.coord(p));
            g.cells[c].push(i as u32);
        }
        g
    }

    fn coord(&self, p: &Vector3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.origin[a]) / self.cell).floor().max(0.0) as usize).min(self.dims[a] - 1))
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn nearest(&self, points: &[Vector3<f64>], skip: usize, p: &Vector3<f64>, k: usize) -> Vec<f64> {
        let c = self.coord(p);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let max_r = self.dims.iter().copied().max().unwrap_or(1);
        for r in 0..=max_r {
            // points in shell r or beyond are at least (r - 1) cells away
            if r > 0 && best.len() == k && best[k - 1] <= (r - 1) as f64 * self.cell {
                break;
            }
            let lo = c.map(|x| x as isize - r as isize);
            let hi = c.map(|x| x as isize + r as isize);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    for x in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                        let on_shell = x == lo[0] || x == hi[0] || y == lo[1] || y == hi[1] || z == lo[2] || z == hi[2];
                        if !on_shell {
                            continue;
                        }
                        for &j in &self.cells[self.flat([x as usize, y as usize, z as usize])] {
                            let j = j as usize;
                            if j == skip {
                                continue;
                            }
                            let d = (points[j] - p).norm();
                            if best.len() < k || d < best[k - 1] {
                                let pos = best.partition_point(|&b| b <= d);
                                best.insert(pos, d);
                                best.truncate(k);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// One isotropic, axis-aligned Gaussian per point.
pub fn init_gaussians(points: &[LiftedPoint], cfg: &LiftConfig) -> Result<GaussianScene> {
    cfg.validate()?;
    let first = points.first().ok_or(Error::Empty("point list"))?;
    let dim = first.1.len();
    let means: Vec<Vector3<f64>> = points.iter().map(|(p, _)| *p).collect();
    let scales = knn_mean_distances(&means, cfg.scale_knn);
    let gaussians = points
        .iter()
        .zip(scales)
        .map(|((p, payload), s)| Gaussian3D::isotropic(*p, s, cfg.init_opacity, payload.clone()))
        .collect();
    GaussianScene::new(gaussians, dim)
}

/// Reads an N×(3+k) array of points followed by payloads.
pub fn load_pointcloud(path: impl AsRef<Path>) -> Result<Vec<LiftedPoint>> {
    let path = path.as_ref();
    let arr = read_npy(path)?;
    let bad = |msg: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        msg,
    };
    if arr.shape.len() != 2 || arr.shape[1] < 3 {
        return Err(bad(format!("expected an Nx(3+k) array, got shape {:?}", arr.shape)));
    }
    if arr.shape[0] == 0 {
        return Err(bad("point cloud is empty".into()));
    }
    let cols = arr.shape[1];
    let data = arr.data.to_f64();
    data.chunks(cols)
        .enumerate()
        .map(|(i, row)| {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("row {i} has non-finite values")));
            }
            Ok((Vector3::new(row[0], row[1], row[2]), row[3..].to_vec()))
        })
        .collect()
}

/// Writes points as an N×(3+k) float64 array.
pub fn save_pointcloud(path: impl AsRef<Path>, points: &[LiftedPoint]) -> Result<()> {
    let cols = 3 + points.first().map_or(0, |p| p.1.len());
    let mut data = Vec::with_capacity(points.len() * cols);
    for (p, payload) in points {
        if 3 + payload.len() != cols {
            return Err(Error::ShapeMismatch("point payloads differ in length".into()));
        }
        data.extend_from_slice(p.as_slice());
        data.extend_from_slice(payload);
    }
    let arr = NpyArray::new(vec![points.len(), cols], NpyData::F64(data))?;
    write_npy(path, &arr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(50.0, 40.0, 10.0, 8.0, 20, 16).unwrap()
    }

    #[test]
    fn lift_principal_point_and_offset() {
        let k = cam();
        let mut depth = PlanarMap::zeros(20, 16, 1);
        depth.set(10, 8, 0, 2.0);
        let mask = PlanarMap::filled(20, 16, 1, 1.0);
        let payload = PlanarMap::from_fn(20, 16, 2, |x, y, c| (x * 100 + y * 10 + c) as f64);
        let cfg = LiftConfig {
            pixel_stride: 1,
            ..Default::default()
        };
        let pts = lift_depth(&depth, &mask, &k, &payload, &cfg).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].0, Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(pts[0].1, vec![1080.0, 1081.0]);

        // fx pixels right of the principal point needs a wider image
        let k = CameraIntrinsics::new(5.0, 5.0, 2.0, 2.0, 10, 5).unwrap();
        let mut depth = PlanarMap::zeros(10, 5, 1);
        depth.set(7, 2, 0, 3.0);
        let pts = lift_depth(
            &depth,
            &PlanarMap::filled(10, 5, 1, 1.0),
            &k,
            &PlanarMap::zeros(10, 5, 3),
            &cfg,
        )
        .unwrap();
        let p = pts[0].0;
        // oracle: x = (u - cx) d / fx
        assert!((p - Vector3::new((7.0 - 2.0) * 3.0 / 5.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn lift_respects_mask_and_stride() {
        let k = cam();
        let depth = PlanarMap::filled(20, 16, 1, 1.0);
        let mut mask = PlanarMap::filled(20, 16, 1, 1.0);
        mask.set(0, 0, 0, 0.0);
        let payload = PlanarMap::zeros(20, 16, 1);
        let pts = lift_depth(&depth, &mask, &k, &payload, &LiftConfig::default()).unwrap();
        assert_eq!(pts.len(), 10 * 8 - 1);
        assert!(pts.iter().all(|(p, _)| k.project(p) != nalgebra::Vector2::new(0.0, 0.0)));

        let none = PlanarMap::zeros(20, 16, 1);
        assert!(matches!(
            lift_depth(&depth, &none, &k, &payload, &LiftConfig::default()),
            Err(Error::NoStaticPixels)
        ));
        let small = PlanarMap::zeros(10, 16, 1);
        assert!(lift_depth(&small, &mask, &k, &payload, &LiftConfig::default()).is_err());
    }

    #[test]
    fn knn_scales() {
        let two = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        assert_eq!(knn_mean_distances(&two, 1), vec![1.0, 1.0]);
        assert_eq!(knn_mean_distances(&two[..1], 3), vec![1e-2]);
        let dup = [Vector3::zeros(), Vector3::zeros()];
        assert_eq!(knn_mean_distances(&dup, 1), vec![1e-6, 1e-6]);
    }

    #[test]
    fn grid_knn_matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for (n, flat) in [(500, false), (300, true), (7, false)] {
            let pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    let z = if flat { 2.0 } else { rng.gen_range(1.0..5.0) };
                    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0), z)
                })
                .collect();
            for knn in [1, 3, 8] {
                let got = knn_mean_distances(&pts, knn);
                for (i, p) in pts.iter().enumerate() {
                    let mut d: Vec<f64> = pts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, q)| (q - p).norm())
                        .collect();
                    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let kk = knn.min(n - 1);
                    let want = (d[..kk].iter().sum::<f64>() / kk as f64).max(1e-6);
                    assert!((got[i] - want).abs() < 1e-12, "n={n} knn={knn} i={i}");
                }
            }
        }
    }

    #[test]
    fn init_gaussians_contract() {
        let pts: Vec<LiftedPoint> = vec![
            (Vector3::new(0.0, 0.0, 1.0), vec![0.2]),
            (Vector3::new(1.0, 0.0, 1.0), vec![0.4]),
        ];
        let cfg = LiftConfig {
            scale_knn: 1,
            ..Default::default()
        };
        let scene = init_gaussians(&pts, &cfg).unwrap();
        assert_eq!(scene.len(), 2);
        assert!(!scene.is_frozen());
        for g in scene.gaussians() {
            assert!((g.scale() - Vector3::repeat(1.0)).norm() < 1e-12);
            assert!((g.opacity() - 0.5).abs() < 1e-12);
        }
        assert_eq!(scene.gaussians()[1].payload, vec![0.4]);
        assert!(init_gaussians(&[], &cfg).is_err());
    }

    #[test]
    fn pointcloud_io() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pc.npy");
        save_pointcloud(&path, &[(Vector3::new(0.0, 0.0, 1.0), vec![0.5])]).unwrap();
        let back = load_pointcloud(&path).unwrap();
        assert_eq!(back, vec![(Vector3::new(0.0, 0.0, 1.0), vec![0.5])]);

        let empty = NpyArray::new(vec![0, 4], NpyData::F32(vec![])).unwrap();
        write_npy(&path, &empty).unwrap();
        assert!(load_pointcloud(&path).is_err());
        let wrong = NpyArray::new(vec![2, 2], NpyData::F32(vec![0.0; 4])).unwrap();
        write_npy(&path, &wrong).unwrap();
        assert!(load_pointcloud(&path).is_err());
    }
}
