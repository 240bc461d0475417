//! Nonlinear PnP refinement.
//!
//! Minimizes `0.5 * sum ||pi(R X + t) - u||^2` over a six-parameter local
//! update `(omega, dt)` applied as `R <- exp(omega) R`, `t <- t + dt`.
//! The solver is Levenberg-Marquardt style: Gauss-Newton normal equations
//! with multiplicative diagonal damping.

use nalgebra::{Matrix2x3, Matrix6, SMatrix, UnitQuaternion, Vector2, Vector3, Vector6};

use super::{CameraIntrinsics, Correspondence, GeometryError, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub max_iters: usize,
    pub step_tol: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step_tol: 1e-10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
        }
    }
}

/// Outcome of a refinement run, including the RMS error after every
/// accepted step (`rms_history[0]` is the initial RMS).
#[derive(Debug, Clone)]
pub struct Refinement {
    pub pose: Pose,
    pub initial_rms: f64,
    pub final_rms: f64,
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

/// Applies a local update to a pose.
pub fn retract(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    Pose::new(
        UnitQuaternion::from_scaled_axis(omega) * pose.rotation,
        pose.translation + dt,
    )
}

fn residual(pose: &Pose, k: &CameraIntrinsics, c: &Correspondence) -> Vector2<f64> {
    let p = pose.transform(&c.point);
    Vector2::new(
        k.fx * p.x / p.z + k.cx - c.pixel.x,
        k.fy * p.y / p.z + k.cy - c.pixel.y,
    )
}

/// Residual and its 2x6 Jacobian with respect to the local update.
fn residual_jacobian(
    pose: &Pose,
    k: &CameraIntrinsics,
    c: &Correspondence,
) -> (Vector2<f64>, SMatrix<f64, 2, 6>) {
    let rx = pose.rotation * c.point;
    let p = rx + pose.translation;
    let iz = 1.0 / p.z;
    let r = Vector2::new(
        k.fx * p.x * iz + k.cx - c.pixel.x,
        k.fy * p.y * iz + k.cy - c.pixel.y,
    );
    let dpi = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    );
    // d(exp(w) R X)/dw at w = 0 is -[R X]_x
    let d_rot = -rx.cross_matrix();
    let mut j = SMatrix::<f64, 2, 6>::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpi * d_rot));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
    (r, j)
}

/// Half the sum of squared pixel residuals.
pub fn reprojection_cost(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> f64 {
    0.5 * corrs
        .iter()
        .map(|c| residual(pose, k, c).norm_squared())
        .sum::<f64>()
}

/// Root-mean-square pixel reprojection error.
pub fn reprojection_rms(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    (2.0 * reprojection_cost(corrs, k, pose) / corrs.len() as f64).sqrt()
}

/// Analytic gradient of [`reprojection_cost`] with respect to the local update.
pub fn cost_gradient(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> Vector6<f64> {
    corrs.iter().fold(Vector6::zeros(), |acc, c| {
        let (r, j) = residual_jacobian(pose, k, c);
        acc + j.transpose() * r
    })
}

fn normal_equations(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    pose: &Pose,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in corrs {
        let (r, j) = residual_jacobian(pose, k, c);
        h += j.transpose() * j;
        g += j.transpose() * r;
    }
    (h, g)
}

/// Refines `init` and returns the improved pose.
pub fn refine_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
) -> Result<Pose, GeometryError> {
    refine_pnp_with(corrs, k, init, &RefineConfig::default()).map(|r| r.pose)
}

/// Refinement with explicit configuration and full diagnostics.
pub fn refine_pnp_with(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    cfg: &RefineConfig,
) -> Result<Refinement, GeometryError> {
    if corrs.len() < 4 {
        return Err(GeometryError::TooFewCorrespondences {
            needed: 4,
            got: corrs.len(),
        });
    }
    refine_unchecked(corrs, k, init, cfg)
}

pub(crate) fn refine_unchecked(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    cfg: &RefineConfig,
) -> Result<Refinement, GeometryError> {
    let n = corrs.len().max(1) as f64;
    let mut pose = *init;
    let mut cost = reprojection_cost(corrs, k, &pose);
    if !cost.is_finite() {
        return Err(GeometryError::NumericalFailure);
    }
    let rms = |c: f64| (2.0 * c / n).sqrt();
    let initial_rms = rms(cost);
    let mut history = vec![initial_rms];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;

    let (mut h, mut g) = normal_equations(corrs, k, &pose);
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
            lambda *= cfg.damping_up;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        if !step.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NumericalFailure);
        }
        if step.norm() < cfg.step_tol {
            break;
        }
        let candidate = retract(&pose, &step);
        let new_cost = reprojection_cost(corrs, k, &candidate);
        if new_cost.is_finite() && new_cost < cost {
            pose = candidate;
            cost = new_cost;
            history.push(rms(cost));
            lambda = (lambda * cfg.damping_down).max(1e-15);
            (h, g) = normal_equations(corrs, k, &pose);
        } else {
            lambda *= cfg.damping_up;
            if lambda > 1e12 {
                break;
            }
        }
    }

    Ok(Refinement {
        pose,
        initial_rms,
        final_rms: rms(cost),
        rms_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> (Pose, Vec<Correspondence>) {
        let gt = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(0.2, -0.1, 0.5),
        );
        let inv = gt.rotation.inverse();
        let corrs = (0..n)
            .map(|_| {
                let pc = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(4.0..8.0),
                );
                let x = inv * (pc - gt.translation);
                let px = k().project_camera_point(&pc).unwrap();
                Correspondence::new(px, x)
            })
            .collect();
        (gt, corrs)
    }

    #[test]
    fn fixed_point_at_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (gt, corrs) = scene(&mut rng, 30);
        let out = refine_pnp(&corrs, &k(), &gt).unwrap();
        assert_eq!(out, gt);
    }

    #[test]
    fn recovers_from_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (gt, corrs) = scene(&mut rng, 40);
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        let delta = Vector6::new(
            axis.x * 1f64.to_radians(),
            axis.y * 1f64.to_radians(),
            axis.z * 1f64.to_radians(),
            0.05,
            0.0,
            0.0,
        );
        let init = retract(&gt, &delta);
        let out = refine_pnp(&corrs, &k(), &init).unwrap();
        let (dt, dr) = super::super::pose_error(&out, &gt);
        assert!(dt < 1e-6, "dt {dt}");
        assert!(dr.to_radians() < 1e-6, "dr {dr}");
    }

    #[test]
    fn noisy_refinement_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (gt, mut corrs) = scene(&mut rng, 100);
        let noise = Normal::new(0.0, 0.5).unwrap();
        for c in &mut corrs {
            c.pixel += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        let init = retract(&gt, &Vector6::new(0.01, -0.02, 0.005, 0.1, -0.05, 0.02));
        let out = refine_pnp_with(&corrs, &k(), &init, &RefineConfig::default()).unwrap();
        assert!(out.final_rms <= out.initial_rms);
        for w in out.rms_history.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(out.final_rms < 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (gt, corrs) = scene(&mut rng, 20);
        let pose = retract(&gt, &Vector6::new(0.02, 0.01, -0.03, 0.1, 0.2, -0.1));
        let g = cost_gradient(&corrs, &k(), &pose);
        let h = 1e-6;
        for i in 0..6 {
            let mut e = Vector6::zeros();
            e[i] = h;
            let fd = (reprojection_cost(&corrs, &k(), &retract(&pose, &e))
                - reprojection_cost(&corrs, &k(), &retract(&pose, &(-e))))
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn rejects_too_few_and_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (gt, corrs) = scene(&mut rng, 3);
        assert!(matches!(
            refine_pnp(&corrs, &k(), &gt),
            Err(GeometryError::TooFewCorrespondences { .. })
        ));
        let (gt, mut corrs) = scene(&mut rng, 6);
        corrs[0].pixel.x = f64::NAN;
        assert!(matches!(
            refine_pnp(&corrs, &k(), &gt),
            Err(GeometryError::NumericalFailure)
        ));
    }
}
