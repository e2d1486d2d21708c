//! Point-cloud primitives and spatial operations shared by the rest of the crate.
//!
//! Coordinates are meters in f64. Deterministic tie-breaking everywhere:
//! nearest/farthest ties resolve to the lowest index, so every operation is a
//! pure function of its inputs (plus an explicit seed where randomness is
//! involved).

use std::collections::{HashMap, HashSet};
use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

/// A 3D point (or 3-vector) in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub const fn zero() -> Self {
        Point3::new(0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        self.dist_sq(other).sqrt()
    }

    /// Coordinate accessor by axis index (0 = x, 1 = y, 2 = z).
    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered point cloud with optional per-point labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            labels: None,
        }
    }

    /// Attach per-point labels; the label array must match the point count.
    pub fn with_labels(points: Vec<Point3>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::SizeMismatch {
                what: "labels",
                expected: points.len(),
                got: labels.len(),
            });
        }
        Ok(PointCloud {
            points,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All coordinates finite and labels (if any) aligned.
    pub fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::SizeMismatch {
                    what: "labels",
                    expected: self.points.len(),
                    got: labels.len(),
                });
            }
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite coordinate at point {i}"
            )));
        }
        Ok(())
    }

    /// New cloud keeping the points (and labels) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// A rigid transform: rotation (row-major 3x3) followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

const POSE_TOL: f64 = 1e-6;

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Point3::zero(),
        }
    }

    /// Build a validated pose.
    pub fn new(rotation: [[f64; 3]; 3], translation: Point3) -> Result<Self> {
        let pose = RigidPose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Rotation orthonormal with determinant +1 within 1e-6, translation finite.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for row in r {
            for v in row {
                if !v.is_finite() {
                    return Err(Error::InvalidPose("non-finite rotation entry".into()));
                }
            }
        }
        if !self.translation.is_finite() {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        // R * R^T must be the identity.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > POSE_TOL {
                    return Err(Error::InvalidPose(format!(
                        "rows {i},{j} not orthonormal (dot = {dot})"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > POSE_TOL {
            return Err(Error::InvalidPose(format!("determinant {det} != +1")));
        }
        Ok(())
    }

    /// Apply the transform: `R * p + t`.
    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + self.translation.x,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + self.translation.y,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + self.translation.z,
        )
    }

    /// Inverse transform `(R^T, -R^T t)`.
    pub fn inverse(&self) -> RigidPose {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.translation;
        let ti = Point3::new(
            -(rt[0][0] * t.x + rt[0][1] * t.y + rt[0][2] * t.z),
            -(rt[1][0] * t.x + rt[1][1] * t.y + rt[1][2] * t.z),
            -(rt[2][0] * t.x + rt[2][1] * t.y + rt[2][2] * t.z),
        );
        RigidPose {
            rotation: rt,
            translation: ti,
        }
    }
}

/// A sparse occupancy grid: the set of voxel keys occupied at `resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: f64,
    pub occupied: HashSet<[i64; 3]>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// Center of a voxel key, for re-voxelization round trips.
    pub fn key_center(&self, key: [i64; 3]) -> Point3 {
        Point3::new(
            (key[0] as f64 + 0.5) * self.resolution,
            (key[1] as f64 + 0.5) * self.resolution,
            (key[2] as f64 + 0.5) * self.resolution,
        )
    }
}

/// Voxel key of a point: per-axis `floor(coordinate / resolution)`.
pub fn voxel_key(p: Point3, resolution: f64) -> [i64; 3] {
    [
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
        (p.z / resolution).floor() as i64,
    ]
}

/// Rigidly transform every point; labels and order are preserved.
pub fn transform(cloud: &PointCloud, pose: &RigidPose) -> Result<PointCloud> {
    pose.validate()?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|&p| pose.apply(p)).collect(),
        labels: cloud.labels.clone(),
    })
}

/// Keep points with 3D Euclidean norm <= `r_max` (boundary inclusive); order preserved.
pub fn crop_range(cloud: &PointCloud, r_max: f64) -> PointCloud {
    let keep: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.norm() <= r_max)
        .map(|(i, _)| i)
        .collect();
    cloud.select(&keep)
}

/// Farthest point sampling.
///
/// The first point is the point at index `seed mod N`; each subsequent point
/// maximizes the minimum distance to the already-selected set, ties broken by
/// lowest index.
pub fn fps(cloud: &PointCloud, k: usize, seed: u64) -> Result<PointCloud> {
    Ok(cloud.select(&fps_indices(cloud, k, seed)?))
}

/// Index sequence chosen by [`fps`], in selection order.
pub fn fps_indices(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyInput("fps cloud"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("fps k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::SizeMismatch {
            what: "fps k",
            expected: n,
            got: k,
        });
    }
    let start = (seed % n as u64) as usize;
    let mut selected = Vec::with_capacity(k);
    selected.push(start);
    // min squared distance from each point to the selected set
    let mut min_d2: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| p.dist_sq(&cloud.points[start]))
        .collect();
    while selected.len() < k {
        let mut best = 0usize;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, &d2) in min_d2.iter().enumerate() {
            if d2 > best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        selected.push(best);
        let chosen = cloud.points[best];
        for (i, d2) in min_d2.iter_mut().enumerate() {
            let d = cloud.points[i].dist_sq(&chosen);
            if d < *d2 {
                *d2 = d;
            }
        }
    }
    Ok(selected)
}

/// Voxelize a cloud; duplicate keys collapse.
pub fn voxelize(cloud: &PointCloud, resolution: f64) -> Result<VoxelGrid> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "voxel resolution must be > 0, got {resolution}"
        )));
    }
    let occupied = cloud
        .points
        .iter()
        .map(|&p| voxel_key(p, resolution))
        .collect();
    Ok(VoxelGrid {
        resolution,
        occupied,
    })
}

/// Concatenate the cloud with itself `k` times (copy 0 first, then copy 1, ...).
pub fn replicate(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::InvalidParameter("replicate K must be >= 1".into()));
    }
    let mut points = Vec::with_capacity(cloud.len() * k);
    for _ in 0..k {
        points.extend_from_slice(&cloud.points);
    }
    let labels = cloud.labels.as_ref().map(|l| {
        let mut out = Vec::with_capacity(l.len() * k);
        for _ in 0..k {
            out.extend_from_slice(l);
        }
        out
    });
    Ok(PointCloud { points, labels })
}

/// Draw `m` distinct points uniformly at random (seeded partial Fisher-Yates).
pub fn sample_without_replacement(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    let n = cloud.len();
    if m > n {
        return Err(Error::SizeMismatch {
            what: "sample_without_replacement m",
            expected: n,
            got: m,
        });
    }
    let mut rng = rng::seeded(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    indices.truncate(m);
    Ok(cloud.select(&indices))
}

// Brute force nearest lookup: exact, ties to the lowest index. Reference
// truth for the grid-accelerated path. Returns (index, squared distance).
pub(crate) fn nearest_brute(query: Point3, reference: &[Point3]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for (i, r) in reference.iter().enumerate() {
        let d2 = query.dist_sq(r);
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    (best, best_d2)
}

/// Uniform hash-grid over a fixed reference cloud for exact nearest-neighbor
/// queries. Results are identical to the brute-force scan, including the
/// lowest-index tie rule.
pub struct GridIndex {
    points: Vec<Point3>,
    cell: f64,
    min_cell: [i64; 3],
    max_cell: [i64; 3],
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl GridIndex {
    pub fn build(points: &[Point3]) -> GridIndex {
        assert!(!points.is_empty(), "GridIndex requires a non-empty cloud");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(hi.z - lo.z);
        let divisions = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 {
            extent / divisions
        } else {
            1.0
        };
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut min_cell = [i64::MAX; 3];
        let mut max_cell = [i64::MIN; 3];
        for (i, &p) in points.iter().enumerate() {
            let key = voxel_key(p, cell);
            for a in 0..3 {
                min_cell[a] = min_cell[a].min(key[a]);
                max_cell[a] = max_cell[a].max(key[a]);
            }
            cells.entry(key).or_default().push(i as u32);
        }
        GridIndex {
            points: points.to_vec(),
            cell,
            min_cell,
            max_cell,
            cells,
        }
    }

    /// Exact nearest reference point to `q`: `(index, squared distance)`.
    pub fn nearest(&self, q: Point3) -> (usize, f64) {
        let qk = voxel_key(q, self.cell);
        // Farthest shell that can hold any cell of the index.
        let max_ring = (0..3)
            .map(|a| {
                (qk[a] - self.min_cell[a])
                    .abs()
                    .max((qk[a] - self.max_cell[a]).abs())
            })
            .max()
            .unwrap_or(0);
        let mut best = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        for ring in 0..=max_ring {
            // Any point in a shell-`ring` cell is at least (ring-1)*cell away.
            if ring >= 1 {
                let bound = (ring - 1) as f64 * self.cell;
                if bound * bound > best_d2 {
                    break;
                }
            }
            self.visit_shell(qk, ring, |idx, points| {
                for &pi in idx {
                    let d2 = q.dist_sq(&points[pi as usize]);
                    let pi = pi as usize;
                    if d2 < best_d2 || (d2 == best_d2 && pi < best) {
                        best_d2 = d2;
                        best = pi;
                    }
                }
            });
        }
        debug_assert!(best != usize::MAX);
        (best, best_d2)
    }

    fn visit_shell(&self, center: [i64; 3], ring: i64, mut f: impl FnMut(&[u32], &[Point3])) {
        let lo: Vec<i64> = (0..3)
            .map(|a| (center[a] - ring).max(self.min_cell[a]))
            .collect();
        let hi: Vec<i64> = (0..3)
            .map(|a| (center[a] + ring).min(self.max_cell[a]))
            .collect();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let cheb = (x - center[0])
                        .abs()
                        .max((y - center[1]).abs())
                        .max((z - center[2]).abs());
                    if cheb != ring {
                        continue;
                    }
                    if let Some(idx) = self.cells.get(&[x, y, z]) {
                        f(idx, &self.points);
                    }
                }
            }
        }
    }
}

// Reference clouds at or below this size skip index construction.
const NN_BRUTE_THRESHOLD: usize = 64;

/// For each query, the index of the Euclidean-nearest reference point and the
/// squared distance to it; ties resolve to the lowest reference index.
pub fn nearest_neighbor(queries: &PointCloud, reference: &PointCloud) -> Result<Vec<(usize, f64)>> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("nearest_neighbor reference"));
    }
    if reference.len() <= NN_BRUTE_THRESHOLD {
        return Ok(queries
            .points
            .iter()
            .map(|&q| nearest_brute(q, &reference.points))
            .collect());
    }
    let index = GridIndex::build(&reference.points);
    Ok(queries
        .points
        .par_iter()
        .map(|&q| index.nearest(q))
        .collect())
}
