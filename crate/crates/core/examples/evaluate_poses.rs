// Writes estimated and ground-truth pose files, reads them back and prints
// the precision buckets.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};

use semloc::eval::{bucket_errors, evaluate, load_poses, write_poses, ThresholdBuckets};
use semloc::geometry::Pose;

pub fn run_example() -> Result<[f64; 3], Box<dyn std::error::Error>> {
    let buckets = ThresholdBuckets::default();
    let fixed = [Some((0.1, 1.0)), Some((0.3, 3.0)), Some((4.0, 8.0)), Some((10.0, 20.0))];
    println!("fixed error list: {:?}", bucket_errors(&fixed, &buckets));

    let dir = tempfile::tempdir()?;
    let mut gt = BTreeMap::new();
    let mut est = BTreeMap::new();
    for (i, (dt, deg)) in [(0.05, 0.5), (0.4, 1.0), (2.0, 7.0), (0.0, 0.0)].into_iter().enumerate() {
        let truth = Pose::new(UnitQuaternion::from_euler_angles(0.0, 0.1 * i as f64, 0.0), Vector3::new(i as f64, 0.0, 0.0));
        gt.insert(format!("q{i}"), truth);
        if i < 3 {
            let rot = UnitQuaternion::from_euler_angles(f64::to_radians(deg), 0.0, 0.0) * truth.rotation;
            // moving the camera center by dt along x
            let center = truth.camera_center() + Vector3::new(dt, 0.0, 0.0);
            est.insert(format!("q{i}"), Pose::new(rot, -(rot * center)));
        }
    }
    write_poses(&dir.path().join("gt.txt"), &gt)?;
    write_poses(&dir.path().join("poses.txt"), &est)?;
    let report = evaluate(
        &load_poses(&dir.path().join("poses.txt"))?,
        &load_poses(&dir.path().join("gt.txt"))?,
        None,
        &buckets,
    );
    for row in &report.rows {
        println!("{}: {:?} m {:?} deg", row.name, row.translation_error_m, row.rotation_error_deg);
    }
    let all = report.summary_for("all").ok_or("missing summary")?;
    println!("fine {}  medium {}  coarse {}", all.fine, all.medium, all.coarse);
    Ok([all.fine, all.medium, all.coarse])
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
