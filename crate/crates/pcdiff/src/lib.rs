//! Scene-scale LiDAR point cloud completion by denoising diffusion.
//!
//! The crate implements the full pipeline: a linear noise schedule with a
//! local point-wise forward process that preserves scene scale, a conditional
//! denoising sampler with classifier-free guidance, a small hand-differentiated
//! noise-prediction network with training loop, a refinement/upsampling stage,
//! completion metrics (chamfer distance, BEV occupancy JSD, voxel IoU), a
//! dataset pipeline for pose-aligned scan aggregation, and file I/O for
//! point clouds, models, and reports.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod refine;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::cli_main()
}
