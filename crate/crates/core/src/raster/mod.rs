//! Tile-based alpha-blended rendering of Gaussian scenes and its analytic
//! backward pass.
//!
//! Pixel `(u, v)` has its center at image coordinate `(u, v)`. Views are
//! world-to-camera transforms.

mod backward;
mod forward;
mod project;

pub use backward::{rasterize_backward, GaussianGrad, GradRequest, RenderGradients};
pub use forward::{rasterize, RenderAux, RenderOutput};
pub use project::{project_gaussian, ProjectedGaussian};

use serde::{Deserialize, Serialize};

/// Rendering constants. Defaults follow common splatting conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Upper clamp on per-Gaussian pixel opacity.
    pub alpha_max: f64,
    /// Blending stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Added to the diagonal of every projected covariance, in px^2.
    pub dilation: f64,
    pub near_plane: f64,
    /// Support radius in standard deviations. Pixels beyond this Mahalanobis
    /// distance receive no contribution; the same radius bins Gaussians to tiles.
    pub extent_sigma: f64,
    /// Per-channel background; empty means zero.
    pub background: Vec<f64>,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_max: 0.99,
            min_transmittance: 1e-4,
            dilation: 0.3,
            near_plane: 0.01,
            // exp(-0.5 * 6^2) ~ 1.5e-8: truncation is invisible at f32 precision
            extent_sigma: 6.0,
            background: Vec::new(),
        }
    }
}

impl RasterConfig {
    pub(crate) fn background_value(&self, c: usize) -> f64 {
        self.background.get(c).copied().unwrap_or(0.0)
    }

    pub(crate) fn validate(&self, channels: usize) -> crate::Result<()> {
        use crate::Error;
        if self.tile_size == 0 {
            return Err(Error::InvalidArgument("tile_size must be positive".into()));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max < 1.0) {
            return Err(Error::InvalidArgument("alpha_max must lie in (0, 1)".into()));
        }
        if !(self.extent_sigma > 0.0) || self.dilation < 0.0 || self.near_plane <= 0.0 {
            return Err(Error::InvalidArgument("invalid raster constants".into()));
        }
        if !self.background.is_empty() && self.background.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "background has {} channels, scene has {channels}",
                self.background.len()
            )));
        }
        Ok(())
    }
}
