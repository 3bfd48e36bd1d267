//! Pinhole projection into the eye cameras. No lens distortion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, rigid_inverse, Eye, RobotModel, Transform};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    /// 320x240 eye cameras with fx = fy = 257.34 px. `cx` is assumed to be
    /// the image centre.
    pub const fn icub() -> Self {
        Self {
            fx: 257.34,
            fy: 257.34,
            cx: 160.0,
            cy: 120.0,
            width: 320.0,
            height: 240.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..=self.width).contains(&self.cx)
            && (0.0..=self.height).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.cx, self.cy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// `u = fx X / Z + cx`, `v = fy Y / Z + cy` for a point in the camera frame
/// (+z is the optical axis).
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<PixelPoint> {
    if point.z.is_nan() || point.z <= 0.0 {
        return Err(Error::BehindCamera { z: point.z });
    }
    Ok(PixelPoint::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Root-to-camera transform: the inverse of the eye chain's forward kinematics.
pub fn root_to_eye(model: &RobotModel, eye: Eye, q_head: &[f64]) -> Result<Transform> {
    forward_kinematics(model.chain(eye.chain()), q_head).map(|t| rigid_inverse(&t))
}

pub fn in_frame(p: &PixelPoint, k: &CameraIntrinsics) -> bool {
    p.u >= 0.0 && p.u < k.width && p.v >= 0.0 && p.v < k.height
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;
    use proptest::prelude::*;

    use super::*;
    use crate::kinematics::{default_icub_model, end_effector_position, transform_point, DhLink, KinematicChain};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::icub()
    }

    fn backproject(p: &PixelPoint, z: f64, k: &CameraIntrinsics) -> Vector3<f64> {
        Vector3::new((p.u - k.cx) * z / k.fx, (p.v - k.cy) * z / k.fy, z)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 1000.0), &k()).unwrap();
        assert_eq!(p, PixelPoint::new(160.0, 120.0));
    }

    #[test]
    fn unit_slope_adds_focal_length() {
        let p = project(&Vector3::new(1000.0, 0.0, 1000.0), &k()).unwrap();
        assert!((p.u - 417.34).abs() < 1e-12 && (p.v - 120.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -5.0), &k()),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project(&Vector3::new(1.0, 1.0, 0.0), &k()).is_err());
    }

    #[test]
    fn frame_bounds() {
        assert!(in_frame(&PixelPoint::new(160.0, 120.0), &k()));
        assert!(!in_frame(&PixelPoint::new(320.0, 120.0), &k()));
        assert!(!in_frame(&PixelPoint::new(-1.0, 0.0), &k()));
        assert!(in_frame(&PixelPoint::new(0.0, 0.0), &k()));
    }

    #[test]
    fn identity_eye_chain_gives_identity() {
        let model = default_icub_model();
        let id = KinematicChain::new("id", vec![DhLink::new(0., 0., 0., 0.); 6], None).unwrap();
        let model = RobotModel::new(
            model.left_arm().clone(),
            model.right_arm().clone(),
            id.clone(),
            id,
            model.intrinsics,
            model.joint_limits.clone(),
        )
        .unwrap();
        let t = root_to_eye(&model, Eye::Left, &[0.0; 6]).unwrap();
        assert!((t - Transform::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn root_to_eye_inverts_eye_kinematics() {
        let model = default_icub_model();
        let q = [0.0, 0.2, -0.1, 0.3, 0.05, -0.2];
        let fk = forward_kinematics(model.left_eye(), &q).unwrap();
        let inv = root_to_eye(&model, Eye::Left, &q).unwrap();
        let p = Vector3::new(12.0, -40.0, 300.0);
        let back = transform_point(&inv, &transform_point(&fk, &p));
        assert!((back - p).norm() < 1e-10);
    }

    // Frozen from an independent numpy composition.
    #[test]
    fn left_hand_in_left_eye_at_zero() {
        let model = default_icub_model();
        let ee = end_effector_position(model.left_arm(), &[0.0; 8]).unwrap();
        let t = root_to_eye(&model, Eye::Left, &[0.0; 6]).unwrap();
        let p = transform_point(&t, &ee);
        let expected = Vector3::new(12.497016185876596, 131.3744770867892, -21.299374761739994);
        assert!((p - expected).norm() < 1e-9, "{p}");
    }

    proptest! {
        #[test]
        fn projection_is_scale_invariant(
            x in -500.0..500.0f64, y in -500.0..500.0f64, z in 1.0..2000.0f64, s in 0.01..100.0f64
        ) {
            let a = project(&Vector3::new(x, y, z), &k()).unwrap();
            let b = project(&Vector3::new(s * x, s * y, s * z), &k()).unwrap();
            prop_assert!((a.u - b.u).abs() <= 1e-9 * a.u.abs().max(1.0));
            prop_assert!((a.v - b.v).abs() <= 1e-9 * a.v.abs().max(1.0));
        }

        #[test]
        fn backprojection_round_trip(u in -100.0..400.0f64, v in -100.0..300.0f64, z in 1.0..3000.0f64) {
            let p = PixelPoint::new(u, v);
            let q = project(&backproject(&p, z, &k()), &k()).unwrap();
            prop_assert!(q.distance(&p) < 1e-9);
        }
    }
}
