//! Explicit Gaussian scene representation.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::quat_to_matrix;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `R diag(s^2) R^T` for rotation `rot` and per-axis standard deviations `scale`.
pub fn build_covariance(rot: &UnitQuaternion<f64>, scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !scale.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("scale"));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale:?}")));
    }
    let r = quat_to_matrix(rot.quaternion())?;
    let m = r * Matrix3::from_diagonal(scale);
    let sigma = m * m.transpose();
    // exact symmetry
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// One anisotropic Gaussian. Scale and opacity live in unconstrained
/// (log / logit) domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub payload: Vec<f64>,
}

impl Gaussian3D {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, payload: Vec<f64>) -> Self {
        Self {
            mean,
            rotation: UnitQuaternion::identity(),
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            payload,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World-frame covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s = self.scale();
        let m = r * Matrix3::from_diagonal(&s);
        let sigma = m * m.transpose();
        (sigma + sigma.transpose()) * 0.5
    }

    fn validate(&self) -> Result<()> {
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.payload.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        if !self.scale().iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument("gaussian scale out of range".into()));
        }
        Ok(())
    }
}

/// Ordered collection of Gaussians sharing one payload dimension.
///
/// Once frozen, parameters are only reachable through shared references.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian3D>,
    payload_dim: usize,
    frozen: bool,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>, payload_dim: usize) -> Result<Self> {
        if payload_dim == 0 {
            return Err(Error::InvalidArgument("payload_dim must be positive".into()));
        }
        for (i, g) in gaussians.iter().enumerate() {
            if g.payload.len() != payload_dim {
                return Err(Error::ShapeMismatch(format!(
                    "gaussian {i} payload has length {}, expected {payload_dim}",
                    g.payload.len()
                )));
            }
            g.validate()?;
        }
        Ok(Self {
            gaussians,
            payload_dim,
            frozen: false,
        })
    }

    pub fn empty(payload_dim: usize) -> Result<Self> {
        Self::new(Vec::new(), payload_dim)
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    /// Mutable access; fails once the scene is frozen.
    pub fn gaussians_mut(&mut self) -> Result<&mut [Gaussian3D]> {
        if self.frozen {
            return Err(Error::SceneFrozen);
        }
        Ok(&mut self.gaussians)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn payload_dim(&self) -> usize {
        self.payload_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Replaces every payload, producing an unfrozen scene of a new payload dimension.
    pub fn with_payloads(&self, payloads: Vec<Vec<f64>>, payload_dim: usize) -> Result<Self> {
        if payloads.len() != self.gaussians.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} payloads for {} gaussians",
                payloads.len(),
                self.gaussians.len()
            )));
        }
        let gaussians = self
            .gaussians
            .iter()
            .zip(payloads)
            .map(|(g, payload)| Gaussian3D { payload, ..g.clone() })
            .collect();
        Self::new(gaussians, payload_dim)
    }
}
