//! Minimal three-point absolute pose solver (Grunert's formulation).
//!
//! The distances along the three bearing rays are parameterized as
//! `s2 = u s1`, `s3 = v s1`; eliminating `u` from the law-of-cosines system
//! gives a quartic in `v`. Each positive real root yields the three
//! camera-frame points, and the rigid transform is recovered by
//! least-squares absolute orientation. Every candidate is polished with a few
//! Gauss-Newton steps and kept only if it reprojects all three inputs
//! within [`P3P_REPROJECTION_TOL`] pixels.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::refine::{refine_unchecked, reprojection_rms, RefineConfig};
use super::{pose_error, CameraIntrinsics, Correspondence, GeometryError, Pose};

/// Maximum pixel reprojection error of a returned P3P pose.
pub const P3P_REPROJECTION_TOL: f64 = 1e-6;

/// Minimum triangle area (m^2) of the three world points.
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

/// Solves for every camera pose consistent with three 2D-3D correspondences.
///
/// Returns between one and four poses in ascending order of the distance
/// ratio root, or an error when the configuration is degenerate or the
/// polynomial has no admissible real root.
pub fn solve_p3p(
    corrs: &[Correspondence; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<Pose>, GeometryError> {
    let finite = corrs
        .iter()
        .all(|c| c.pixel.iter().chain(c.point.iter()).all(|v| v.is_finite()));
    if !finite {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let [x1, x2, x3] = [corrs[0].point, corrs[1].point, corrs[2].point];
    let area = 0.5 * (x2 - x1).cross(&(x3 - x1)).norm();
    if area <= MIN_TRIANGLE_AREA {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let f: Vec<Vector3<f64>> = corrs.iter().map(|c| k.bearing(&c.pixel)).collect();
    let cos_alpha = f[1].dot(&f[2]);
    let cos_beta = f[0].dot(&f[2]);
    let cos_gamma = f[0].dot(&f[1]);

    let a2 = (x2 - x3).norm_squared();
    let b2 = (x1 - x3).norm_squared();
    let c2 = (x1 - x2).norm_squared();

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let (ca, cb, cg) = (cos_alpha, cos_beta, cos_gamma);

    let q4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let q3 = 4.0
        * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let q2 = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg);
    let q1 = 4.0
        * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
    let q0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let roots = real_roots(&[q4, q3, q2, q1, q0]);

    let polish_cfg = RefineConfig {
        max_iters: 20,
        step_tol: 1e-15,
        initial_damping: 1e-12,
        damping_up: 10.0,
        damping_down: 0.1,
    };

    let mut poses: Vec<Pose> = Vec::new();
    for v in roots.into_iter().filter(|v| *v > 0.0) {
        for u in ratio_u(v, amc, ca, cb, cg, c2 / b2) {
            if u <= 0.0 {
                continue;
            }
            let denom = 1.0 + v * v - 2.0 * v * cb;
            if denom <= 0.0 {
                continue;
            }
            let s1 = (b2 / denom).sqrt();
            let cam = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
            let Some(mut pose) = absolute_orientation(&[x1, x2, x3], &cam) else {
                continue;
            };
            if reprojection_rms(corrs, k, &pose) > 1e-10 {
                if let Ok(polished) = refine_unchecked(corrs, k, &pose, &polish_cfg) {
                    pose = polished.pose;
                }
            }
            let in_front = corrs.iter().all(|c| pose.transform(&c.point).z > 0.0);
            if !in_front || max_reprojection_error(corrs, k, &pose) > P3P_REPROJECTION_TOL {
                continue;
            }
            let duplicate = poses.iter().any(|p| {
                let (dt, dr) = pose_error(p, &pose);
                dt < 1e-9 && dr < 1e-9
            });
            if !duplicate {
                poses.push(pose);
            }
        }
    }

    if poses.is_empty() {
        Err(GeometryError::NoRealSolution)
    } else {
        Ok(poses)
    }
}

fn max_reprojection_error(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> f64 {
    corrs
        .iter()
        .map(|c| match super::project(pose, k, &c.point) {
            Some(px) => (px - c.pixel).norm(),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Candidate values of `u = s2 / s1` for a root `v`.
fn ratio_u(v: f64, amc: f64, ca: f64, cb: f64, cg: f64, c2_b2: f64) -> Vec<f64> {
    let den = 2.0 * (cg - v * ca);
    if den.abs() > 1e-10 {
        let num = (amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc;
        return vec![num / den];
    }
    // Closed form is singular; fall back to 1 + u^2 - 2u cg = (c/b)^2 (1 + v^2 - 2v cb).
    let rhs = c2_b2 * (1.0 + v * v - 2.0 * v * cb);
    let disc = cg * cg - 1.0 + rhs;
    if disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    vec![cg - s, cg + s]
}

/// Rigid transform `(R, t)` with `cam_i ~ R world_i + t` (Kabsch).
fn absolute_orientation(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<Pose> {
    let wc = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (world[i] - wc) * (cam[i] - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cc - r * wc;
    if !r.iter().chain(t.iter()).all(|x| x.is_finite()) {
        return None;
    }
    Some(Pose::from_rotation_matrix(&r, t))
}

/// Real roots of a polynomial given highest-degree coefficient first,
/// sorted ascending. Roots come from companion-matrix eigenvalues and are
/// polished with Newton steps.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let c: Vec<f64> = coeffs.iter().map(|v| v / scale).collect();
    let lead = c.iter().position(|v| v.abs() > 1e-13).unwrap_or(c.len());
    let c = &c[lead..];
    let degree = c.len().saturating_sub(1);
    if degree == 0 {
        return Vec::new();
    }

    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    let eig = companion.complex_eigenvalues();

    let eval = |x: f64| c.iter().fold((0.0, 0.0), |(p, dp), &a| (p * x + a, dp * x + p));
    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() <= 1e-4 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let (p, dp) = eval(x);
                if dp == 0.0 || p == 0.0 {
                    break;
                }
                let next = x - p / dp;
                if !next.is_finite() {
                    break;
                }
                x = next;
            }
            x
        })
        .collect();
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn corrs_for(pose: &Pose, pts: &[Vector3<f64>; 3]) -> [Correspondence; 3] {
        pts.map(|x| Correspondence::new(super::super::project(pose, &k(), &x).unwrap(), x))
    }

    #[test]
    fn identity_pose_is_recovered() {
        let pts = [
            Vector3::new(1.0, 0.0, 5.0),
            Vector3::new(0.0, 1.0, 5.0),
            Vector3::new(-1.0, -1.0, 5.0),
        ];
        let sols = solve_p3p(&corrs_for(&Pose::identity(), &pts), &k()).unwrap();
        assert!(sols.iter().any(|p| {
            let (dt, dr) = pose_error(p, &Pose::identity());
            dt < 1e-8 && dr.to_radians() < 1e-8
        }));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let corrs = [
            Correspondence::new(Vector2::new(320.0, 240.0), Vector3::new(0.0, 0.0, 5.0)),
            Correspondence::new(Vector2::new(320.0, 240.0), Vector3::new(0.0, 0.0, 6.0)),
            Correspondence::new(Vector2::new(320.0, 240.0), Vector3::new(0.0, 0.0, 7.0)),
        ];
        assert!(matches!(
            solve_p3p(&corrs, &k()),
            Err(GeometryError::DegenerateConfiguration)
        ));
    }

    #[test]
    fn all_solutions_are_exact_interpolants() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let pose = Pose::new(
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-3.0..3.0),
                ),
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            let inv = pose.rotation.inverse();
            let pts = [0, 1, 2].map(|_| {
                let pc = k().unproject(
                    &Vector2::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0)),
                    rng.random_range(2.0..10.0),
                );
                inv * (pc - pose.translation)
            });
            let corrs = corrs_for(&pose, &pts);
            if let Ok(sols) = solve_p3p(&corrs, &k()) {
                assert!(sols.len() <= 4);
                for s in &sols {
                    assert!(max_reprojection_error(&corrs, &k(), s) <= P3P_REPROJECTION_TOL);
                }
            }
        }
    }

    #[test]
    fn polynomial_roots() {
        // (x - 1)(x - 2)(x + 3)
        let r = real_roots(&[1.0, 0.0, -7.0, 6.0]);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // (x - 1)(x + 3)(x^2 + 1)
        let r = real_roots(&[1.0, 2.0, -2.0, 2.0, -3.0]);
        assert_eq!(r.len(), 2);
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
    }
}
