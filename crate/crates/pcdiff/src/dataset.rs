//! Dataset pipeline: aggregating posed scans into a ground-truth map,
//! extracting (input scan, ground-truth region) training pairs, and a
//! synthetic desk-scale scene generator for end-to-end runs without any real
//! LiDAR data.
//!
//! Pairs live in the scan's local frame; the map is in the world frame.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{self, crop_range, voxel_key, Point3, PointCloud, RigidPose};
use crate::rng;

/// One training/evaluation unit: the sparse input scan and the dense
/// ground-truth region around it, both in the scan's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub input: PointCloud,
    pub gt: PointCloud,
    pub center_pose: RigidPose,
}

/// Map/pair extraction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Crop radius in meters around the scan origin.
    pub range_m: f64,
    /// Input scan is farthest-point downsampled to this count.
    pub n_input: usize,
    /// Ground-truth region is sampled without replacement to this count.
    pub n_gt: usize,
    /// Semantic labels treated as moving objects and dropped from maps.
    pub moving_label_ids: BTreeSet<u32>,
    /// Optional voxel deduplication resolution for map building.
    pub dedup_resolution: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            range_m: 50.0,
            n_input: 18_000,
            n_gt: 180_000,
            moving_label_ids: (252..=259).collect(),
            dedup_resolution: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_m > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "range_m must be > 0, got {}",
                self.range_m
            )));
        }
        if self.n_input > self.n_gt {
            return Err(Error::InvalidParameter(format!(
                "n_input {} exceeds n_gt {}",
                self.n_input, self.n_gt
            )));
        }
        if let Some(res) = self.dedup_resolution {
            if !(res > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "dedup_resolution must be > 0, got {res}"
                )));
            }
        }
        Ok(())
    }
}

/// Aggregate posed scans into one world-frame map, dropping moving-labeled
/// points. Scans contribute in input order; with dedup enabled, the first
/// point seen in each voxel wins.
pub fn build_map(
    scans: &[(PointCloud, RigidPose)],
    labels: Option<&[Vec<u32>]>,
    config: &PipelineConfig,
) -> Result<PointCloud> {
    config.validate()?;
    if scans.is_empty() {
        return Err(Error::EmptyInput("build_map scans"));
    }
    if let Some(labels) = labels {
        if labels.len() != scans.len() {
            return Err(Error::SizeMismatch {
                what: "label arrays",
                expected: scans.len(),
                got: labels.len(),
            });
        }
        for ((scan, _), l) in scans.iter().zip(labels) {
            if l.len() != scan.len() {
                return Err(Error::SizeMismatch {
                    what: "per-scan labels",
                    expected: scan.len(),
                    got: l.len(),
                });
            }
        }
    }
    for (_, pose) in scans {
        pose.validate()?;
    }

    let per_scan: Vec<Vec<Point3>> = scans
        .par_iter()
        .enumerate()
        .map(|(i, (scan, pose))| {
            scan.points
                .iter()
                .enumerate()
                .filter(|(j, _)| match labels {
                    Some(labels) => !config.moving_label_ids.contains(&labels[i][*j]),
                    None => true,
                })
                .map(|(_, &p)| pose.apply(p))
                .collect()
        })
        .collect();

    let mut points: Vec<Point3> = per_scan.into_iter().flatten().collect();
    if let Some(res) = config.dedup_resolution {
        let mut seen = HashSet::new();
        points.retain(|&p| seen.insert(voxel_key(p, res)));
    }
    Ok(PointCloud::new(points))
}

/// Extract a training pair: the scan cropped and downsampled to `n_input`,
/// and `n_gt` map points within `range_m` of the scan origin expressed in the
/// scan's frame. Errors when either side is too sparse; never pads.
pub fn make_pair(
    scan: &PointCloud,
    pose: &RigidPose,
    map: &PointCloud,
    config: &PipelineConfig,
    seed: u64,
) -> Result<ScenePair> {
    config.validate()?;
    pose.validate()?;
    if map.is_empty() {
        return Err(Error::EmptyInput("make_pair map"));
    }
    let mut seeds = rng::seeded(seed);
    let fps_seed = seeds.gen::<u64>();
    let gt_seed = seeds.gen::<u64>();

    let cropped = crop_range(scan, config.range_m);
    if cropped.len() < config.n_input {
        return Err(Error::RegionTooSparse {
            available: cropped.len(),
            required: config.n_input,
        });
    }
    let input = geometry::fps(&cropped, config.n_input, fps_seed)?;

    let origin = pose.translation;
    let to_scan = pose.inverse();
    let region: Vec<Point3> = map
        .points
        .iter()
        .filter(|p| p.dist(&origin) <= config.range_m)
        .map(|&p| to_scan.apply(p))
        .collect();
    if region.len() < config.n_gt {
        return Err(Error::RegionTooSparse {
            available: region.len(),
            required: config.n_gt,
        });
    }
    let gt = geometry::sample_without_replacement(&PointCloud::new(region), config.n_gt, gt_seed)?;

    Ok(ScenePair {
        input,
        gt,
        center_pose: *pose,
    })
}

/// Parameters of one synthetic scene: a finite ground plane plus axis-aligned
/// boxes, observed by a ring-pattern range sensor at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Half-extent of the ground plane in meters.
    pub extent: f64,
    pub n_boxes: usize,
    /// Dense ground-truth sample count over all surfaces.
    pub gt_points: usize,
    /// Ray pattern: azimuth steps per ring and ring count.
    pub azimuth_steps: usize,
    pub rings: usize,
    /// Sensor origin height above the plane.
    pub sensor_height: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            extent: 10.0,
            n_boxes: 4,
            gt_points: 2000,
            azimuth_steps: 36,
            rings: 6,
            sensor_height: 1.2,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scene extent must be > 0, got {}",
                self.extent
            )));
        }
        if self.gt_points == 0 {
            return Err(Error::InvalidParameter("gt_points must be >= 1".into()));
        }
        if self.azimuth_steps == 0 || self.rings == 0 {
            return Err(Error::InvalidParameter(
                "scan ray pattern needs at least one azimuth step and ring".into(),
            ));
        }
        if !(self.sensor_height > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sensor_height must be > 0, got {}",
                self.sensor_height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BoxGeom {
    min: Point3,
    max: Point3,
}

impl BoxGeom {
    fn face_areas(&self) -> [f64; 6] {
        let d = self.max - self.min;
        // -x, +x, -y, +y, -z, +z
        [
            d.y * d.z,
            d.y * d.z,
            d.x * d.z,
            d.x * d.z,
            d.x * d.y,
            d.x * d.y,
        ]
    }

    fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    fn sample_surface(&self, rng: &mut impl Rng) -> Point3 {
        let areas = self.face_areas();
        let total: f64 = areas.iter().sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut face = 5;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u = rng.gen::<f64>();
        let v = rng.gen::<f64>();
        let d = self.max - self.min;
        match face {
            0 => Point3::new(self.min.x, self.min.y + u * d.y, self.min.z + v * d.z),
            1 => Point3::new(self.max.x, self.min.y + u * d.y, self.min.z + v * d.z),
            2 => Point3::new(self.min.x + u * d.x, self.min.y, self.min.z + v * d.z),
            3 => Point3::new(self.min.x + u * d.x, self.max.y, self.min.z + v * d.z),
            4 => Point3::new(self.min.x + u * d.x, self.min.y + v * d.y, self.min.z),
            _ => Point3::new(self.min.x + u * d.x, self.min.y + v * d.y, self.max.z),
        }
    }

    /// Signed distance convention is unnecessary here: absolute distance from
    /// a point to the box surface.
    #[cfg(test)]
    fn surface_distance(&self, p: Point3) -> f64 {
        let cx = (self.min.x + self.max.x) * 0.5;
        let cy = (self.min.y + self.max.y) * 0.5;
        let cz = (self.min.z + self.max.z) * 0.5;
        let hx = (self.max.x - self.min.x) * 0.5;
        let hy = (self.max.y - self.min.y) * 0.5;
        let hz = (self.max.z - self.min.z) * 0.5;
        let qx = (p.x - cx).abs() - hx;
        let qy = (p.y - cy).abs() - hy;
        let qz = (p.z - cz).abs() - hz;
        let outside = Point3::new(qx.max(0.0), qy.max(0.0), qz.max(0.0)).norm();
        let inside = qx.max(qy).max(qz).min(0.0);
        (outside + inside).abs()
    }

    /// Slab-test ray intersection; returns the entry parameter t > eps.
    fn ray_hit(&self, origin: Point3, dir: Point3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        let mut t0 = EPS;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let o = origin.coord(axis);
            let d = dir.coord(axis);
            let lo = self.min.coord(axis);
            let hi = self.max.coord(axis);
            if d.abs() < 1e-12 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let mut ta = (lo - o) / d;
            let mut tb = (hi - o) / d;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

// Ray pattern elevation range in radians: mostly downward, slightly upward.
const ELEV_MIN: f64 = -0.75;
const ELEV_MAX: f64 = 0.03;

fn scene_boxes(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<BoxGeom> {
    (0..spec.n_boxes)
        .map(|_| {
            let cx = rng.gen_range(-0.6 * spec.extent..0.6 * spec.extent);
            let cy = rng.gen_range(-0.6 * spec.extent..0.6 * spec.extent);
            let sx = rng.gen_range(0.5..2.0);
            let sy = rng.gen_range(0.5..2.0);
            let sz = rng.gen_range(0.5..2.0);
            BoxGeom {
                min: Point3::new(cx - sx * 0.5, cy - sy * 0.5, 0.0),
                max: Point3::new(cx + sx * 0.5, cy + sy * 0.5, sz),
            }
        })
        .collect()
}

/// Generate one synthetic scene: a dense surface sample as ground truth and a
/// sparse ring-pattern scan of the same geometry. Deterministic per seed; the
/// generator draws boxes first, then ground-truth samples.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<(PointCloud, PointCloud)> {
    spec.validate()?;
    let mut rng = rng::seeded(seed);
    let boxes = scene_boxes(spec, &mut rng);

    // Ground-truth budget split by surface area.
    let plane_area = (2.0 * spec.extent) * (2.0 * spec.extent);
    let box_area: f64 = boxes.iter().map(|b| b.surface_area()).sum();
    let total_area = plane_area + box_area;
    let n_plane = ((spec.gt_points as f64) * plane_area / total_area).round() as usize;
    let n_plane = n_plane.min(spec.gt_points).max(1);

    let mut gt = Vec::with_capacity(spec.gt_points);
    for _ in 0..n_plane {
        let x = rng.gen_range(-spec.extent..spec.extent);
        let y = rng.gen_range(-spec.extent..spec.extent);
        gt.push(Point3::new(x, y, 0.0));
    }
    if !boxes.is_empty() {
        let remaining = spec.gt_points - n_plane;
        for i in 0..remaining {
            let b = &boxes[i % boxes.len()];
            gt.push(b.sample_surface(&mut rng));
        }
    }

    let origin = Point3::new(0.0, 0.0, spec.sensor_height);
    let mut scan = Vec::new();
    for r in 0..spec.rings {
        let f = if spec.rings == 1 {
            0.0
        } else {
            r as f64 / (spec.rings - 1) as f64
        };
        let elev = ELEV_MIN + f * (ELEV_MAX - ELEV_MIN);
        for a in 0..spec.azimuth_steps {
            let az = 2.0 * std::f64::consts::PI * a as f64 / spec.azimuth_steps as f64;
            let dir = Point3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
            let mut best: Option<f64> = None;
            // Finite ground plane at z = 0.
            if dir.z < -1e-12 {
                let t = -origin.z / dir.z;
                let hit = origin + dir * t;
                if hit.x.abs() <= spec.extent && hit.y.abs() <= spec.extent {
                    best = Some(t);
                }
            }
            for b in &boxes {
                if let Some(t) = b.ray_hit(origin, dir) {
                    if best.map_or(true, |cur| t < cur) {
                        best = Some(t);
                    }
                }
            }
            if let Some(t) = best {
                scan.push(origin + dir * t);
            }
        }
    }

    Ok((PointCloud::new(gt), PointCloud::new(scan)))
}
