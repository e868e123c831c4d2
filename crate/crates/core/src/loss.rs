//! Rendering losses: masked MSE, SSIM and the camera-path smoothness term.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::map::PlanarMap;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_mask(map: &PlanarMap, mask: &PlanarMap) -> Result<()> {
    if !map.same_dims(mask) || mask.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{}x{} does not fit map {}x{}",
            mask.width(),
            mask.height(),
            mask.channels(),
            map.width(),
            map.height()
        )));
    }
    Ok(())
}

/// Copy of `map` with pixels whose mask value is below `threshold` set to zero.
pub fn apply_mask(map: &PlanarMap, mask: &PlanarMap, threshold: f64) -> Result<PlanarMap> {
    check_mask(map, mask)?;
    let mut out = map.clone();
    let k = map.channels();
    for (px, &m) in out.data_mut().chunks_mut(k).zip(mask.data()) {
        if m < threshold {
            px.fill(0.0);
        }
    }
    Ok(out)
}

/// Mean squared error over retained pixels (mask >= threshold) and all channels.
pub fn masked_mse(rendered: &PlanarMap, target: &PlanarMap, mask: &PlanarMap, threshold: f64) -> Result<f64> {
    masked_mse_with_grad(rendered, target, mask, threshold).map(|(v, _)| v)
}

/// Masked MSE and its gradient with respect to `rendered`.
pub fn masked_mse_with_grad(
    rendered: &PlanarMap,
    target: &PlanarMap,
    mask: &PlanarMap,
    threshold: f64,
) -> Result<(f64, PlanarMap)> {
    if !rendered.same_shape(target) {
        return Err(Error::ShapeMismatch("rendered and target maps differ in shape".into()));
    }
    check_mask(rendered, mask)?;
    let k = rendered.channels();
    let retained = mask.data().iter().filter(|&&m| m >= threshold).count();
    if retained == 0 {
        return Err(Error::NoStaticPixels);
    }
    let n = (retained * k) as f64;
    let mut grad = PlanarMap::zeros(rendered.width(), rendered.height(), k);
    let mut sum = 0.0;
    for (((r, t), g), &m) in rendered
        .data()
        .chunks(k)
        .zip(target.data().chunks(k))
        .zip(grad.data_mut().chunks_mut(k))
        .zip(mask.data())
    {
        if m < threshold {
            continue;
        }
        for c in 0..k {
            let d = r[c] - t[c];
            sum += d * d;
            g[c] = 2.0 * d / n;
        }
    }
    Ok((sum / n, grad))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Plane of one channel, row-major.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_channel(m: &PlanarMap, c: usize) -> Self {
        let k = m.channels();
        Plane {
            w: m.width(),
            h: m.height(),
            data: m.data().iter().skip(c).step_by(k).copied().collect(),
        }
    }

    fn zip_map(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&o.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Separable "valid" filtering: output is (w - n + 1) x (h - n + 1).
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    /// Adjoint of [`Plane::filter_valid`]: scatters back to a `w x h` plane.
    fn filter_valid_adjoint(&self, k: &[f64], w: usize, h: usize) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w, self.h);
        let mut tmp = vec![0.0; ow * h];
        for y in 0..oh {
            for x in 0..ow {
                let v = self.data[y * ow + x];
                for i in 0..n {
                    tmp[(y + i) * ow + x] += k[i] * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..ow {
                let v = tmp[y * ow + x];
                for i in 0..n {
                    out[y * w + x + i] += k[i] * v;
                }
            }
        }
        Plane { w, h, data: out }
    }
}

/// Channel-averaged SSIM (11x11 Gaussian window, sigma 1.5, L = 1) over the
/// valid window positions.
pub fn ssim(a: &PlanarMap, b: &PlanarMap) -> Result<f64> {
    ssim_impl(a, b, false).map(|(v, _)| v)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &PlanarMap, b: &PlanarMap) -> Result<(f64, PlanarMap)> {
    ssim_impl(a, b, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn ssim_impl(a: &PlanarMap, b: &PlanarMap, want_grad: bool) -> Result<(f64, Option<PlanarMap>)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("ssim inputs differ in shape".into()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window",
            a.width(),
            a.height()
        )));
    }
    let kern = gaussian_kernel();
    let k = a.channels();
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut grad = want_grad.then(|| PlanarMap::zeros(w, h, k));
    for c in 0..k {
        let pa = Plane::from_channel(a, c);
        let pb = Plane::from_channel(b, c);
        let mu_a = pa.filter_valid(&kern);
        let mu_b = pb.filter_valid(&kern);
        let e_aa = pa.zip_map(&pa, |x, y| x * y).filter_valid(&kern);
        let e_bb = pb.zip_map(&pb, |x, y| x * y).filter_valid(&kern);
        let e_ab = pa.zip_map(&pb, |x, y| x * y).filter_valid(&kern);
        let nq = mu_a.data.len();
        let mut sum = 0.0;
        let mut d_mu = vec![0.0; nq];
        let mut d_eaa = vec![0.0; nq];
        let mut d_eab = vec![0.0; nq];
        for q in 0..nq {
            let (ma, mb) = (mu_a.data[q], mu_b.data[q]);
            let var_a = e_aa.data[q] - ma * ma;
            let var_b = e_bb.data[q] - mb * mb;
            let cov = e_ab.data[q] - ma * mb;
            let n1 = 2.0 * ma * mb + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = ma * ma + mb * mb + SSIM_C1;
            let d2 = var_a + var_b + SSIM_C2;
            let num = n1 * n2;
            let den = d1 * d2;
            sum += num / den;
            if want_grad {
                let dn = 2.0 * mb * n2 - 2.0 * mb * n1;
                let dd = 2.0 * ma * d2 - 2.0 * ma * d1;
                d_mu[q] = (dn * den - num * dd) / (den * den);
                d_eaa[q] = -num * d1 / (den * den);
                d_eab[q] = 2.0 * n1 / den;
            }
        }
        total += sum / nq as f64;
        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / (nq as f64 * k as f64);
            let ow = mu_a.w;
            let oh = mu_a.h;
            let back = |v: Vec<f64>| Plane { w: ow, h: oh, data: v }.filter_valid_adjoint(&kern, w, h);
            let ga = back(d_mu);
            let gaa = back(d_eaa);
            let gab = back(d_eab);
            for i in 0..w * h {
                let v = ga.data[i] + 2.0 * pa.data[i] * gaa.data[i] + pb.data[i] * gab.data[i];
                g.data_mut()[i * k + c] = v * scale;
            }
        }
    }
    Ok((total / k as f64, grad))
}

/// `lambda * sum_i |(x[i+1] - x[i]) - (x[i] - x[i-1])|` over interior points.
pub fn smoothness_loss(positions: &[Vector3<f64>], lambda: f64) -> Result<f64> {
    smoothness_with_grad(positions, lambda).map(|(v, _)| v)
}

/// Smoothness loss and its gradient with respect to each position. The
/// gradient of a zero second difference is taken as zero.
pub fn smoothness_with_grad(positions: &[Vector3<f64>], lambda: f64) -> Result<(f64, Vec<Vector3<f64>>)> {
    if positions.len() < 3 {
        return Err(Error::Insufficient(format!(
            "smoothness needs at least 3 positions, got {}",
            positions.len()
        )));
    }
    let mut grad = vec![Vector3::zeros(); positions.len()];
    if lambda == 0.0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    for i in 1..positions.len() - 1 {
        let d2 = (positions[i + 1] - positions[i]) - (positions[i] - positions[i - 1]);
        let n = d2.norm();
        sum += n;
        if n > 1e-15 {
            let u = d2 * (lambda / n);
            grad[i + 1] += u;
            grad[i] -= 2.0 * u;
            grad[i - 1] += u;
        }
    }
    Ok((lambda * sum, grad))
}

/// Gradient of the smoothed surrogate `lambda * sum_i (sqrt(|d_i|^2 + eps^2) - eps)`,
/// which matches the smoothness loss to within `eps` per term but has no
/// kink at zero. `eps = 0` gives the plain subgradient.
pub fn smoothness_surrogate_grad(positions: &[Vector3<f64>], lambda: f64, eps: f64) -> Result<Vec<Vector3<f64>>> {
    if eps <= 0.0 {
        return smoothness_with_grad(positions, lambda).map(|(_, g)| g);
    }
    if positions.len() < 3 {
        return Err(Error::Insufficient(format!(
            "smoothness needs at least 3 positions, got {}",
            positions.len()
        )));
    }
    let mut grad = vec![Vector3::zeros(); positions.len()];
    for i in 1..positions.len() - 1 {
        let d2 = (positions[i + 1] - positions[i]) - (positions[i] - positions[i - 1]);
        let u = d2 * (lambda / (d2.norm_squared() + eps * eps).sqrt());
        grad[i + 1] += u;
        grad[i] -= 2.0 * u;
        grad[i - 1] += u;
    }
    Ok(grad)
}
