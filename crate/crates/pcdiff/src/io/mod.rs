//! On-disk formats: KITTI scans and poses, PLY clouds, binary weight files,
//! run configuration, and metric reports.

pub mod config;
pub mod kitti;
pub mod model_file;
pub mod ply;
pub mod report;

pub use config::RunConfig;
pub use report::format_report;
