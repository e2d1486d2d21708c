//! KITTI-format readers: velodyne .bin scans, .label files, poses.txt.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidPose};

/// Velodyne scan: little-endian float32 records (x, y, z, intensity), 16
/// bytes per point. Intensity is dropped.
pub fn read_kitti_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "{}: size {} is not a multiple of 16; trailing record starts at byte {}",
            path.display(),
            bytes.len(),
            bytes.len() - bytes.len() % 16
        )));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|rec| {
            let f =
                |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]) as f64;
            Point3::new(f(0), f(4), f(8))
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// One little-endian u32 per point; the semantic class is the low 16 bits,
/// the high 16 bits carry the instance id and are discarded.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: size {} is not a multiple of 4; trailing record starts at byte {}",
            path.display(),
            bytes.len(),
            bytes.len() - bytes.len() % 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|rec| u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]) & 0xFFFF)
        .collect())
}

/// poses.txt: one pose per line, 12 whitespace-separated reals, the top three
/// rows of the homogeneous matrix in row-major order [R | t].
pub fn read_poses(path: &Path) -> Result<Vec<RigidPose>> {
    let text = fs::read_to_string(path)?;
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(Error::Format(format!(
                "{}: line {}: expected 12 values, got {}",
                path.display(),
                lineno + 1,
                tokens.len()
            )));
        }
        let mut v = [0.0f64; 12];
        for (i, tok) in tokens.iter().enumerate() {
            v[i] = tok.parse().map_err(|_| {
                Error::Format(format!(
                    "{}: line {}: token {} ({tok:?}) is not a number",
                    path.display(),
                    lineno + 1,
                    i + 1
                ))
            })?;
        }
        poses.push(RigidPose {
            rotation: [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
            translation: Point3::new(v[3], v[7], v[11]),
        });
    }
    Ok(poses)
}
