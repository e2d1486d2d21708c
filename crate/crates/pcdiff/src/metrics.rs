//! Evaluation metrics: symmetric chamfer distance, bird's-eye-view
//! Jensen-Shannon divergence, and multi-resolution occupancy IoU.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud};

/// One evaluation of a completed cloud against ground truth. `iou` pairs each
/// requested resolution (meters) with its ratio, in the order requested.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Symmetric mean nearest-neighbor distance, meters.
    pub cd: f64,
    /// Bird's-eye-view Jensen-Shannon divergence, nats.
    pub jsd_bev: f64,
    pub iou: Vec<(f64, f64)>,
}

/// Symmetric chamfer distance in meters: the mean over A of each point's
/// nearest-neighbor distance into B, averaged with the reverse direction.
/// Non-squared Euclidean, so the value carries the clouds' length unit.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(0.5 * (mean_nn_dist(a, b)? + mean_nn_dist(b, a)?))
}

fn mean_nn_dist(from: &PointCloud, to: &PointCloud) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyInput("chamfer operand"));
    }
    let total: f64 = geometry::nearest_neighbor(from, to)?
        .iter()
        .map(|&(_, d2)| d2.sqrt())
        .sum();
    Ok(total / from.len() as f64)
}

/// Per-(x,y)-column counts of occupied voxels after 3D voxelization.
fn bev_histogram(cloud: &PointCloud, resolution: f64) -> Result<BTreeMap<[i64; 2], usize>> {
    let grid = geometry::voxelize(cloud, resolution)?;
    let mut columns: BTreeMap<[i64; 2], usize> = BTreeMap::new();
    for key in &grid.occupied {
        *columns.entry([key[0], key[1]]).or_insert(0) += 1;
    }
    Ok(columns)
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Jensen-Shannon divergence (natural log) between the BEV occupancy
/// histograms of the two clouds, normalized over the union of columns.
/// Bounded by [0, ln 2]; 0 * ln 0 taken as 0.
pub fn jsd_bev(a: &PointCloud, b: &PointCloud, resolution: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("jsd operand"));
    }
    let ha = bev_histogram(a, resolution)?;
    let hb = bev_histogram(b, resolution)?;
    let na: f64 = ha.values().sum::<usize>() as f64;
    let nb: f64 = hb.values().sum::<usize>() as f64;
    let mut keys: Vec<[i64; 2]> = ha.keys().chain(hb.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    // JSD(P,Q) = H(M) - (H(P) + H(Q))/2 with M = (P+Q)/2, expanded per term
    // so absent columns contribute exactly zero.
    let mut jsd = 0.0;
    for key in keys {
        let p = ha.get(&key).copied().unwrap_or(0) as f64 / na;
        let q = hb.get(&key).copied().unwrap_or(0) as f64 / nb;
        let m = 0.5 * (p + q);
        jsd += 0.5 * (xlogx(p) + xlogx(q)) - xlogx(m);
    }
    // exact arithmetic gives [0, ln 2]; rounding can land a hair outside
    Ok(jsd.clamp(0.0, std::f64::consts::LN_2))
}

/// Voxel-occupancy intersection over union at each requested resolution.
/// Returns (resolution, ratio) pairs in the order requested.
pub fn occupancy_iou(
    a: &PointCloud,
    b: &PointCloud,
    resolutions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("iou operand"));
    }
    let mut out = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let va = geometry::voxelize(a, res)?;
        let vb = geometry::voxelize(b, res)?;
        let inter = va.occupied.intersection(&vb.occupied).count();
        let union = va.occupied.union(&vb.occupied).count();
        out.push((res, inter as f64 / union as f64));
    }
    Ok(out)
}

/// All three metrics in one report.
pub fn evaluate(
    pred: &PointCloud,
    gt: &PointCloud,
    jsd_resolution: f64,
    iou_resolutions: &[f64],
) -> Result<MetricReport> {
    Ok(MetricReport {
        cd: chamfer_distance(pred, gt)?,
        jsd_bev: jsd_bev(pred, gt, jsd_resolution)?,
        iou: occupancy_iou(pred, gt, iou_resolutions)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use proptest::prelude::*;

    fn cloud(points: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(
            points
                .iter()
                .map(|&(x, y, z)| Point3::new(x, y, z))
                .collect(),
        )
    }

    fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
        let dir = |from: &PointCloud, to: &PointCloud| {
            from.points
                .iter()
                .map(|p| {
                    to.points
                        .iter()
                        .map(|q| p.dist(q))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        0.5 * (dir(a, b) + dir(b, a))
    }

    #[test]
    fn chamfer_identical_is_zero() {
        let a = cloud(&[(0.0, 0.0, 0.0), (1.0, 2.0, 3.0), (-1.0, 0.5, 2.0)]);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_singletons() {
        let a = cloud(&[(0.0, 0.0, 0.0)]);
        let b = cloud(&[(3.0, 4.0, 0.0)]);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn chamfer_asymmetric_counts() {
        let a = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let b = cloud(&[(0.0, 0.0, 0.0)]);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 0.25);
    }

    #[test]
    fn chamfer_rejects_empty() {
        let a = cloud(&[(0.0, 0.0, 0.0)]);
        assert!(chamfer_distance(&a, &PointCloud::default()).is_err());
        assert!(chamfer_distance(&PointCloud::default(), &a).is_err());
    }

    #[test]
    fn jsd_identical_is_zero() {
        let a = cloud(&[(0.1, 0.1, 0.0), (3.0, 3.0, 1.0), (3.0, 3.0, 5.0)]);
        assert_eq!(jsd_bev(&a, &a, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn jsd_disjoint_is_ln2() {
        let a = cloud(&[(0.0, 0.0, 0.0), (0.1, 0.1, 0.1)]);
        let b = cloud(&[(100.0, 100.0, 0.0)]);
        let got = jsd_bev(&a, &b, 0.5).unwrap();
        assert!((got - 2.0f64.ln()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn jsd_two_column_hand_example() {
        // Column u: A has 1 occupied voxel, B has 1. Column v: B has 1 more.
        // P = (1, 0), Q = (0.5, 0.5).
        let a = cloud(&[(0.1, 0.1, 0.1)]);
        let b = cloud(&[(0.1, 0.1, 0.1), (10.0, 0.1, 0.1)]);
        let want = 0.5 * (4.0f64 / 3.0).ln() + 0.25 * (2.0f64 / 3.0).ln() + 0.25 * 2.0f64.ln();
        let got = jsd_bev(&a, &b, 0.5).unwrap();
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        assert!((got - 0.2157615543388171).abs() < 1e-12);
    }

    #[test]
    fn jsd_column_counts_see_z_structure() {
        // Same (x,y) footprint, different occupied-voxel counts per column.
        let a = cloud(&[(0.1, 0.1, 0.1), (5.0, 0.1, 0.1)]);
        let b = cloud(&[
            (0.1, 0.1, 0.1),
            (0.1, 0.1, 2.0),
            (0.1, 0.1, 4.0),
            (5.0, 0.1, 0.1),
        ]);
        // P = (0.5, 0.5), Q = (0.75, 0.25) over the two columns.
        let got = jsd_bev(&a, &b, 0.5).unwrap();
        assert!(got > 0.0 && got < 2.0f64.ln());
    }

    #[test]
    fn jsd_translation_invariance_on_grid_multiples() {
        let a = cloud(&[(0.1, 0.2, 0.3), (1.4, -0.7, 0.9), (2.2, 2.2, 0.0)]);
        let b = cloud(&[(0.6, 0.2, 0.3), (1.2, -0.3, 1.5)]);
        let res = 0.5;
        let shift = Point3::new(3.0 * res, -7.0 * res, 0.0);
        let shifted =
            |c: &PointCloud| PointCloud::new(c.points.iter().map(|&p| p + shift).collect());
        let base = jsd_bev(&a, &b, res).unwrap();
        let moved = jsd_bev(&shifted(&a), &shifted(&b), res).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let a = cloud(&[(0.1, 0.1, 0.1)]);
        assert_eq!(
            occupancy_iou(&a, &a, &[0.5, 0.2, 0.1]).unwrap(),
            vec![(0.5, 1.0), (0.2, 1.0), (0.1, 1.0)]
        );
        let b = cloud(&[(10.0, 10.0, 10.0)]);
        assert_eq!(occupancy_iou(&a, &b, &[0.5]).unwrap()[0].1, 0.0);
        // occ(A) = {v1, v2}, occ(B) = {v2, v3}: intersection 1, union 3
        let a2 = cloud(&[(0.1, 0.1, 0.1), (1.1, 0.1, 0.1)]);
        let b2 = cloud(&[(1.1, 0.1, 0.1), (2.1, 0.1, 0.1)]);
        let got = occupancy_iou(&a2, &b2, &[0.5]).unwrap()[0].1;
        assert!((got - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_rejects_bad_inputs() {
        let a = cloud(&[(0.0, 0.0, 0.0)]);
        assert!(occupancy_iou(&a, &PointCloud::default(), &[0.5]).is_err());
        assert!(occupancy_iou(&a, &a, &[0.0]).is_err());
        assert!(occupancy_iou(&a, &a, &[-1.0]).is_err());
    }

    #[test]
    fn evaluate_bundles_all_three() {
        let a = cloud(&[(0.1, 0.1, 0.1), (4.0, 4.0, 0.0)]);
        let r = evaluate(&a, &a, 0.5, &[0.5, 0.2, 0.1]).unwrap();
        assert_eq!(r.cd, 0.0);
        assert_eq!(r.jsd_bev, 0.0);
        assert!(r.iou.iter().all(|&(_, v)| v == 1.0));
    }

    proptest! {
        #[test]
        fn chamfer_matches_brute_force_and_is_symmetric(
            a in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -4.0f64..4.0), 1..40),
            b in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -4.0f64..4.0), 1..40),
        ) {
            let ca = cloud(&a);
            let cb = cloud(&b);
            let fast = chamfer_distance(&ca, &cb).unwrap();
            prop_assert!((fast - brute_chamfer(&ca, &cb)).abs() < 1e-12);
            let rev = chamfer_distance(&cb, &ca).unwrap();
            prop_assert!((fast - rev).abs() < 1e-12);
        }

        #[test]
        fn jsd_stays_in_range(
            a in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -4.0f64..4.0), 1..40),
            b in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -4.0f64..4.0), 1..40),
        ) {
            let got = jsd_bev(&cloud(&a), &cloud(&b), 0.5).unwrap();
            prop_assert!(got >= 0.0);
            prop_assert!(got <= 2.0f64.ln() + 1e-12);
        }

        #[test]
        fn removing_points_never_grows_intersection(
            pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -4.0f64..4.0), 2..40),
            keep in 1usize..39,
        ) {
            let full = cloud(&pts);
            let keep = keep.min(pts.len());
            let reduced = cloud(&pts[..keep]);
            let vf = geometry::voxelize(&full, 0.5).unwrap();
            let vr = geometry::voxelize(&reduced, 0.5).unwrap();
            let vb = geometry::voxelize(&full, 0.5).unwrap();
            let inter_full = vf.occupied.intersection(&vb.occupied).count();
            let inter_reduced = vr.occupied.intersection(&vb.occupied).count();
            prop_assert!(inter_reduced <= inter_full);
        }
    }
}
