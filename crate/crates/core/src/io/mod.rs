//! On-disk formats: NPY tensors, TUM trajectories, run configuration and the
//! dataset directory layout.

pub mod config;
pub mod dataset;
pub mod npy;
pub mod tum;

pub use config::{load_config, RunConfig};
pub use dataset::Dataset;
pub use npy::{read_map, read_npy, write_map, write_npy, Dtype, NpyArray, NpyData};
pub use tum::{read_tum, write_tum};
