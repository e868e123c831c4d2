use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::map::PlanarMap;

/// A fitted channel reduction: centering, projection onto the leading
/// principal directions, and per-output-channel whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    mean: DVector<f64>,
    /// f×C, rows ordered by non-increasing eigenvalue.
    basis: DMatrix<f64>,
    /// Output channel multipliers; zero for missing components.
    gains: Vec<f64>,
    explained: Vec<f64>,
    rank_deficient: bool,
}

impl PcaProjection {
    /// Fits on every pixel of every map, pooled.
    pub fn fit(features: &[PlanarMap], f: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("feature maps"));
        }
        Self::fit_streaming(features.len(), |i| Ok(features[i].clone()), f)
    }

    /// Like [`PcaProjection::fit`], loading map `i` through `load` (twice),
    /// so the full stack never has to be in memory.
    pub fn fit_streaming(count: usize, mut load: impl FnMut(usize) -> Result<PlanarMap>, f: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("feature maps"));
        }
        let first = load(0)?;
        let c = first.channels();
        let (w, h) = (first.width(), first.height());
        if f == 0 || f > c {
            return Err(Error::InvalidArgument(format!("cannot select {f} of {c} channels")));
        }
        let mut check = |i: usize| -> Result<PlanarMap> {
            let m = if i == 0 { first.clone() } else { load(i)? };
            if m.width() != w || m.height() != h || m.channels() != c {
                return Err(Error::ShapeMismatch(format!("feature map {i} differs in shape")));
            }
            Ok(m)
        };
        let n = (count * w * h) as f64;
        let mut mean = DVector::zeros(c);
        for i in 0..count {
            let m = check(i)?;
            for px in m.data().chunks(c) {
                for (a, v) in px.iter().enumerate() {
                    mean[a] += v;
                }
            }
        }
        mean /= n;
        // pixels are centered in batches and accumulated with a matrix product
        const BATCH: usize = 2048;
        let mut cov = DMatrix::<f64>::zeros(c, c);
        let mut batch = DMatrix::<f64>::zeros(c, BATCH);
        let mut fill = 0;
        let flush = |batch: &DMatrix<f64>, fill: usize, cov: &mut DMatrix<f64>| {
            let b = batch.columns(0, fill);
            cov.gemm(1.0, &b, &b.transpose(), 1.0);
        };
        for i in 0..count {
            let m = check(i)?;
            for px in m.data().chunks(c) {
                for a in 0..c {
                    batch[(a, fill)] = px[a] - mean[a];
                }
                fill += 1;
                if fill == BATCH {
                    flush(&batch, fill, &mut cov);
                    fill = 0;
                }
            }
        }
        if fill > 0 {
            flush(&batch, fill, &mut cov);
        }
        cov = (&cov + cov.transpose()) * 0.5;
        cov /= n;

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = top * 1e-12 * c as f64;
        let mut basis = DMatrix::zeros(f, c);
        let mut gains = Vec::with_capacity(f);
        let mut explained = Vec::with_capacity(f);
        let mut rank_deficient = false;
        for (r, &i) in order.iter().take(f).enumerate() {
            let lambda = eig.eigenvalues[i].max(0.0);
            let mut v = eig.eigenvectors.column(i).into_owned();
            // deterministic sign: largest-magnitude entry positive
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v = -v;
            }
            basis.row_mut(r).copy_from(&v.transpose());
            if lambda > tol && top > 0.0 {
                gains.push(1.0 / lambda.sqrt());
                explained.push(lambda);
            } else {
                rank_deficient = true;
                gains.push(0.0);
                explained.push(0.0);
            }
        }
        if rank_deficient {
            log::warn!("feature covariance has fewer than {f} usable components; padding with zero channels");
        }
        Ok(Self {
            mean,
            basis,
            gains,
            explained,
            rank_deficient,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.basis.nrows()
    }

    pub fn input_channels(&self) -> usize {
        self.basis.ncols()
    }

    /// f×C projection matrix.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Variance (eigenvalue) carried by each output channel before whitening.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained
    }

    /// True if some output channels had no variance to carry and are zero.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn apply(&self, map: &PlanarMap) -> Result<PlanarMap> {
        let c = self.input_channels();
        if map.channels() != c {
            return Err(Error::ShapeMismatch(format!(
                "map has {} channels, projection expects {c}",
                map.channels()
            )));
        }
        let f = self.output_channels();
        let mut out = PlanarMap::zeros(map.width(), map.height(), f);
        let mut centered = vec![0.0; c];
        for (src, dst) in map.data().chunks(c).zip(out.data_mut().chunks_mut(f)) {
            for a in 0..c {
                centered[a] = src[a] - self.mean[a];
            }
            for (r, d) in dst.iter_mut().enumerate() {
                let row = self.basis.row(r);
                let mut s = 0.0;
                for a in 0..c {
                    s += row[a] * centered[a];
                }
                *d = s * self.gains[r];
            }
        }
        Ok(out)
    }
}

/// Reduces C-channel feature maps to `f` decorrelated, unit-variance
/// channels with a basis shared across all maps.
pub fn pca_select_channels(features: &[PlanarMap], f: usize) -> Result<(Vec<PlanarMap>, PcaProjection)> {
    let proj = PcaProjection::fit(features, f)?;
    let maps = features.iter().map(|m| proj.apply(m)).collect::<Result<_>>()?;
    Ok((maps, proj))
}
