// Recovers a pose from three correspondences with the minimal solver, then
// refines a perturbed pose on noisy correspondences.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use semloc::geometry::{
    pose_error, project, refine_pnp_with, solve_p3p, CameraIntrinsics, Correspondence, Pose,
    RefineConfig,
};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480)?;
    let gt = Pose::from_center(
        Rotation3::from_euler_angles(0.1, -0.2, 0.05).matrix(),
        &Vector3::new(0.5, -0.3, -1.0),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut points = Vec::new();
    while points.len() < 60 {
        let x = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..9.0));
        if let Some(px) = project(&gt, &k, &x) {
            points.push((px, x));
        }
    }

    let three = [0, 1, 2].map(|i| Correspondence::new(points[i].0, points[i].1));
    for (i, pose) in solve_p3p(&three, &k)?.iter().enumerate() {
        let (dt, dr) = pose_error(pose, &gt);
        println!("p3p root {i}: {dt:.2e} m, {dr:.2e} deg");
    }

    let noise = Normal::new(0.0, 1.0)?;
    let noisy: Vec<Correspondence> = points
        .iter()
        .map(|(px, x)| Correspondence::new(px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)), *x))
        .collect();
    let start = Pose::new(
        gt.rotation * nalgebra::UnitQuaternion::from_euler_angles(0.02, 0.0, -0.02),
        gt.translation + Vector3::new(0.1, 0.05, -0.1),
    );
    let r = refine_pnp_with(&noisy, &k, &start, &RefineConfig::default())?;
    let history: Vec<String> = r.rms_history.iter().map(|v| format!("{v:.3}")).collect();
    println!("refinement rms: {}", history.join(" -> "));
    let (dt, dr) = pose_error(&r.pose, &gt);
    println!("refined pose: {dt:.4} m, {dr:.4} deg after {} iterations", r.iterations);
    Ok(r.final_rms)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
