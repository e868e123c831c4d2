//! JSON run configuration. Every key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterConfig;
use crate::scene_init::{FitConfig, LiftConfig};
use crate::window::{LossSpace, Ramp, SsimChannels, WindowConfig};

/// Which signal the canonical scene is fit against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSpace {
    /// Same space as the pose loss.
    Same,
    /// Fit to RGB, then replace payloads with the selected features before
    /// pose optimization.
    Rgb,
}

/// Where canonical-frame points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Depth,
    Pointcloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window_size: usize,
    pub iters: usize,
    pub lr_rot: f64,
    pub lr_trans: f64,
    pub lr_final_factor: f64,
    pub lambda_s: f64,
    pub lambda_c_max: f64,
    pub ramp: Ramp,
    pub loss_space: LossSpace,
    /// Feature channels kept after PCA.
    pub f: usize,
    pub ssim_channels: SsimChannels,
    pub smooth_eps: f64,
    pub coverage_threshold: f64,
    pub fit_space: FitSpace,
    pub init_source: InitSource,
    pub lift: LiftConfig,
    pub fit: FitConfig,
    pub raster: RasterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        Self {
            window_size: w.window_size,
            iters: w.iters,
            lr_rot: w.lr_rot,
            lr_trans: w.lr_trans,
            lr_final_factor: w.lr_final_factor,
            lambda_s: w.lambda_s,
            lambda_c_max: w.lambda_c_max,
            ramp: w.ramp,
            loss_space: w.loss_space,
            f: 16,
            ssim_channels: w.ssim_channels,
            smooth_eps: w.smooth_eps,
            coverage_threshold: w.coverage_threshold,
            fit_space: FitSpace::Same,
            init_source: InitSource::Depth,
            lift: LiftConfig::default(),
            fit: FitConfig::default(),
            raster: RasterConfig::default(),
        }
    }
}

fn bad(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            window_size: self.window_size,
            iters: self.iters,
            lr_rot: self.lr_rot,
            lr_trans: self.lr_trans,
            lr_final_factor: self.lr_final_factor,
            lambda_s: self.lambda_s,
            lambda_c_max: self.lambda_c_max,
            ramp: self.ramp,
            loss_space: self.loss_space,
            ssim_channels: self.ssim_channels,
            mask_threshold: self.lift.mask_threshold,
            smooth_eps: self.smooth_eps,
            coverage_threshold: self.coverage_threshold,
        }
    }

    /// Checks value ranges; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(bad("window_size", "must be at least 2"));
        }
        for (key, v) in [("lr_rot", self.lr_rot), ("lr_trans", self.lr_trans)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(key, "must be positive"));
            }
        }
        if !(self.lr_final_factor > 0.0 && self.lr_final_factor <= 1.0) {
            return Err(bad("lr_final_factor", "must lie in (0, 1]"));
        }
        for (key, v) in [("lambda_s", self.lambda_s), ("lambda_c_max", self.lambda_c_max)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(key, "must be non-negative"));
            }
        }
        if !(self.smooth_eps >= 0.0 && self.smooth_eps.is_finite()) {
            return Err(bad("smooth_eps", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return Err(bad("coverage_threshold", "must lie in [0, 1]"));
        }
        if self.f == 0 {
            return Err(bad("f", "must be at least 1"));
        }
        if self.lift.pixel_stride == 0 {
            return Err(bad("lift.pixel_stride", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lift.mask_threshold) {
            return Err(bad("lift.mask_threshold", "must lie in [0, 1]"));
        }
        if !(self.lift.init_opacity > 0.0 && self.lift.init_opacity < 1.0) {
            return Err(bad("lift.init_opacity", "must lie in (0, 1)"));
        }
        if self.lift.scale_knn == 0 {
            return Err(bad("lift.scale_knn", "must be at least 1"));
        }
        self.fit.validate().map_err(|e| bad("fit", e.to_string()))?;
        let r = &self.raster;
        if r.tile_size == 0 {
            return Err(bad("raster.tile_size", "must be positive"));
        }
        if !(r.alpha_max > 0.0 && r.alpha_max < 1.0) {
            return Err(bad("raster.alpha_max", "must lie in (0, 1)"));
        }
        if !(r.min_transmittance >= 0.0 && r.min_transmittance < 1.0) {
            return Err(bad("raster.min_transmittance", "must lie in [0, 1)"));
        }
        if !(r.extent_sigma > 0.0) {
            return Err(bad("raster.extent_sigma", "must be positive"));
        }
        if r.dilation < 0.0 {
            return Err(bad("raster.dilation", "must be non-negative"));
        }
        if !(r.near_plane > 0.0) {
            return Err(bad("raster.near_plane", "must be positive"));
        }
        Ok(())
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        bad(&path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
