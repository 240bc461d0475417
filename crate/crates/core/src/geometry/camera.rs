use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Depth below which a point is treated as lying on or behind the image plane.
pub const MIN_DEPTH: f64 = 1e-9;

/// Calibrated pinhole camera, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics that skip the principal-point bounds check. Only useful for
    /// normalized-coordinate math (f = 1, c = 0).
    pub fn unchecked(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cy > 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera-frame point to pixel. `None` when the point is not in front.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Back-projects a pixel to the camera-frame point at depth `z`.
    pub fn unproject(&self, px: &Vector2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new(
            (px.x - self.cx) / self.fx * z,
            (px.y - self.cy) / self.fy * z,
            z,
        )
    }

    /// Unit bearing vector through a pixel.
    pub fn bearing(&self, px: &Vector2<f64>) -> Vector3<f64> {
        self.unproject(px, 1.0).normalize()
    }

    /// True when the continuous pixel lies in `[0,w) x [0,h)`.
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// World-to-camera rigid transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Pose of a camera centred at `center` whose axes (as world vectors)
    /// are the rows of `r`.
    pub fn from_center(r: &Matrix3<f64>, center: &Vector3<f64>) -> Self {
        let t = -(r * center);
        Self::from_rotation_matrix(r, t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Projects a world point. `None` when it lands on or behind the camera plane.
pub fn project(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    k.project_camera_point(&pose.transform(x))
}

pub fn camera_center(pose: &Pose) -> Vector3<f64> {
    pose.camera_center()
}

/// Translation error in meters between camera centers and rotation error in
/// degrees.
pub fn pose_error(est: &Pose, gt: &Pose) -> (f64, f64) {
    let dt = (est.camera_center() - gt.camera_center()).norm();
    let r_rel = gt.rotation_matrix().transpose() * est.rotation_matrix();
    let c = ((r_rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (dt, c.acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3x4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics::unchecked(1.0, 1.0, 0.0, 0.0, 1, 1)
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::new(
            UnitQuaternion::from_scaled_axis(axis),
            Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
        )
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let px = project(&Pose::identity(), &unit_k(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
        assert!(project(&Pose::identity(), &unit_k(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn projection_matches_homogeneous_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::new(520.0, 515.0, 320.0, 240.0, 640, 480).unwrap();
        for _ in 0..200 {
            let pose = random_pose(&mut rng);
            // sample in the camera frame so both in-front and behind cases occur
            let pc: Vector3<f64> = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-10.0..10.0),
            );
            let pc = if pc.z.abs() < 0.5 { pc + Vector3::new(0.0, 0.0, 1.0) } else { pc };
            let x = pose.rotation.inverse() * (pc - pose.translation);
            // P = K [R | t]
            let r = pose.rotation_matrix();
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            rt.set_column(3, &pose.translation);
            let h = k.matrix() * rt * Vector4::new(x.x, x.y, x.z, 1.0);
            match project(&pose, &k, &x) {
                Some(px) => {
                    assert!(h.z > 0.0);
                    assert!((px.x - h.x / h.z).abs() < 1e-9);
                    assert!((px.y - h.y / h.z).abs() < 1e-9);
                }
                None => assert!(h.z <= 1e-9),
            }
        }
    }

    #[test]
    fn camera_center_cases() {
        assert_eq!(camera_center(&Pose::identity()), Vector3::zeros());
        let p = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, -5.0));
        assert_eq!(camera_center(&p), Vector3::new(0.0, 0.0, 5.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let c = pose.camera_center();
            assert!(pose.transform(&c).norm() < 1e-12);
            assert!(project(&pose, &unit_k(), &c).is_none());
        }
    }

    #[test]
    fn unproject_then_project_is_identity() {
        let k = CameraIntrinsics::new(500.0, 480.0, 321.5, 239.0, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let z = rng.random_range(0.1..50.0);
            let back = k.project_camera_point(&k.unproject(&px, z)).unwrap();
            assert!((back - px).norm() < 1e-9);
        }
    }

    #[test]
    fn pose_error_cases() {
        let gt = Pose::identity();
        assert_eq!(pose_error(&gt, &gt), (0.0, 0.0));

        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians());
        let est = Pose::new(rz * gt.rotation, Vector3::zeros());
        let (dt, dr) = pose_error(&est, &gt);
        assert_relative_eq!(dt, 0.0, epsilon = 1e-12);
        assert_relative_eq!(dr, 10.0, epsilon = 1e-9);

        let a = Pose::from_center(&Matrix3::identity(), &Vector3::zeros());
        let b = Pose::from_center(&Matrix3::identity(), &Vector3::new(3.0, 4.0, 0.0));
        let (dt, dr) = pose_error(&a, &b);
        assert_relative_eq!(dt, 5.0, epsilon = 1e-12);
        assert_eq!(dr, 0.0);
    }

    #[test]
    fn pose_error_rotation_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let (tab, rab) = pose_error(&a, &b);
            let (tba, rba) = pose_error(&b, &a);
            assert_relative_eq!(rab, rba, epsilon = 1e-9);
            assert_relative_eq!(tab, tba, epsilon = 1e-12);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
    }
}
