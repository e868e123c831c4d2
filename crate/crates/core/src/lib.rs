//! Pose estimation for small-baseline video with frozen Gaussian-splat scenes.
//!
//! A scene is lifted from the canonical (first) frame of each sliding window,
//! fit to that frame, frozen, and then used as a differentiable renderer to
//! recover the relative camera poses of the remaining frames in the window.
//! Windows overlap by one frame and are chained into a global trajectory.

pub mod adam;
pub mod camera;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod map;
pub mod pipeline;
pub mod raster;
pub mod scene_init;
pub mod synth;
pub mod trajectory;
pub mod window;

pub use camera::CameraIntrinsics;
pub use error::{Error, Result};
pub use gaussian::{Gaussian3D, GaussianScene};
pub use geometry::Se3Pose;
pub use map::PlanarMap;
pub use trajectory::Trajectory;
