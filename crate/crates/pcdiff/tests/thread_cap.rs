//! PCDF_THREADS handling, isolated in its own test binary because it
//! mutates process environment.

use pcdiff::cli::run_from;
use pcdiff::geometry::{Point3, PointCloud};
use pcdiff::io::ply::write_ply;

#[test]
fn thread_cap_values_are_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let ply = tmp.path().join("cloud.ply");
    write_ply(
        &ply,
        &PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 0.0)]),
    )
    .unwrap();
    let p = ply.to_str().unwrap();
    let eval = ["pcdiff", "eval", "--pred", p, "--gt", p];

    // valid inputs, garbage cap: the env check is the only failure possible
    std::env::set_var("PCDF_THREADS", "banana");
    assert_eq!(run_from(eval), 1);

    // 0 means automatic
    std::env::set_var("PCDF_THREADS", "0");
    assert_eq!(run_from(eval), 0);

    // a real cap is applied (or kept from an earlier initialization)
    std::env::set_var("PCDF_THREADS", "1");
    assert_eq!(run_from(eval), 0);
    std::env::remove_var("PCDF_THREADS");
}
