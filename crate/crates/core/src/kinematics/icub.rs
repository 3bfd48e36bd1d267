//! Built-in humanoid upper-body model (iCub v1 kinematics, Root at the third
//! torso joint).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::Vector3;

use super::{translation_transform, ChainId, DhLink, JointLimits, KinematicChain, RobotModel, Transform};
use crate::camera::CameraIntrinsics;

/// Default fingertip translation along the right-arm end-effector z axis.
pub const FINGERTIP_OFFSET_MM: f64 = 60.0;

const fn deg(v: f64) -> f64 {
    v * PI / 180.0
}

fn left_arm_links() -> Vec<DhLink> {
    vec![
        DhLink::new(23.36, 143.3, FRAC_PI_2, deg(105.0)),
        DhLink::new(0.0, 107.74, -FRAC_PI_2, FRAC_PI_2),
        DhLink::new(0.0, 0.0, FRAC_PI_2, -FRAC_PI_2),
        DhLink::new(15.0, 152.28, -FRAC_PI_2, deg(75.0)),
        DhLink::new(-15.0, 0.0, FRAC_PI_2, 0.0),
        DhLink::new(0.0, 137.3, FRAC_PI_2, -FRAC_PI_2),
        DhLink::new(0.0, 0.0, FRAC_PI_2, FRAC_PI_2),
        DhLink::new(62.5, -16.0, 0.0, 0.0),
    ]
}

/// Mirror image of the left arm across the Root x-z plane.
///
/// Conjugating every link by a reflection of its z axis turns
/// `(a, d, alpha, o)` into `(a, -d, -alpha, o)`; the extra half turn about the
/// Root x axis that completes the y reflection folds into the first link as
/// `(a, d, pi - alpha, -o)` with a reversed (and frozen) joint. The resulting
/// chain satisfies `p_RA(q) = diag(1, -1, 1) p_LA(q)` for the palm position.
fn right_arm_links() -> Vec<DhLink> {
    let left = left_arm_links();
    let first = left[0];
    std::iter::once(DhLink::new(first.a, first.d, PI - first.alpha, -first.offset))
        .chain(left[1..].iter().map(|l| DhLink::new(l.a, -l.d, -l.alpha, l.offset)))
        .collect()
}

fn head_links() -> [DhLink; 4] {
    [
        DhLink::new(2.31, -193.3, -FRAC_PI_2, FRAC_PI_4),
        DhLink::new(33.0, 0.0, FRAC_PI_2, FRAC_PI_4),
        DhLink::new(0.0, 1.0, -FRAC_PI_2, FRAC_PI_4),
        DhLink::new(-54.0, 82.5, -FRAC_PI_2, FRAC_PI_4),
    ]
}

fn left_eye_links() -> Vec<DhLink> {
    let mut links = head_links().to_vec();
    links.push(DhLink::new(0.0, -34.0, -FRAC_PI_2, 0.0));
    links.push(DhLink::new(0.0, 0.0, FRAC_PI_2, -FRAC_PI_4));
    links
}

fn right_eye_links() -> Vec<DhLink> {
    let mut links = head_links().to_vec();
    links.push(DhLink::new(0.0, 34.0, FRAC_PI_2, -FRAC_PI_4));
    links.push(DhLink::new(0.0, 0.0, -FRAC_PI_2, 0.0));
    links
}

/// Pure translation from the right palm to the index fingertip.
pub fn fingertip_transform() -> Transform {
    translation_transform(Vector3::new(0.0, 0.0, FINGERTIP_OFFSET_MM))
}

/// The first link of every chain is frozen at `q = 0`; all other joints get
/// `[-pi/2, pi/2]` around their offset.
pub(crate) fn default_limits(n: usize) -> Vec<[f64; 2]> {
    std::iter::once([0.0, 0.0])
        .chain(std::iter::repeat_n([-FRAC_PI_2, FRAC_PI_2], n - 1))
        .collect()
}

pub fn default_icub_model() -> RobotModel {
    let la = KinematicChain::new(ChainId::LeftArm.short_name(), left_arm_links(), None).expect("static left arm");
    let ra = KinematicChain::new(
        ChainId::RightArm.short_name(),
        right_arm_links(),
        Some(fingertip_transform()),
    )
    .expect("static right arm");
    let le = KinematicChain::new(ChainId::LeftEye.short_name(), left_eye_links(), None).expect("static left eye");
    let re = KinematicChain::new(ChainId::RightEye.short_name(), right_eye_links(), None).expect("static right eye");
    let limits = JointLimits {
        left_arm: default_limits(8),
        right_arm: default_limits(8),
        left_eye: default_limits(6),
        right_eye: default_limits(6),
    };
    RobotModel::new(la, ra, le, re, CameraIntrinsics::icub(), limits).expect("static model")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{end_effector_position, forward_kinematics, is_rigid_transform};

    #[test]
    fn table_values_are_verbatim() {
        let m = default_icub_model();
        assert_eq!(
            m.left_arm().links()[3],
            DhLink::new(15.0, 152.28, -FRAC_PI_2, 75.0 * PI / 180.0)
        );
        assert_eq!(m.left_eye().links()[4], DhLink::new(0.0, -34.0, -FRAC_PI_2, 0.0));
        assert_eq!(m.right_eye().links()[4], DhLink::new(0.0, 34.0, FRAC_PI_2, -FRAC_PI_4));
        assert_eq!(m.left_arm().len(), 8);
        assert_eq!(m.right_arm().len(), 8);
        assert_eq!(m.left_eye().len(), 6);
        assert_eq!(m.right_eye().len(), 6);
        assert_eq!(m.left_eye().links()[..4], m.right_eye().links()[..4]);
    }

    // Frozen from an independent numpy composition of elementary
    // Rz * Tz * Tx * Rx matrices.
    #[test]
    fn left_arm_zero_pose_matches_oracle() {
        let m = default_icub_model();
        let p = end_effector_position(m.left_arm(), &[0.0; 8]).unwrap();
        let expected = Vector3::new(84.16642917023836, 42.44919122145819, -208.78);
        assert!((p - expected).norm() < 1e-9, "{p}");

        let q = [0.0, 0.3, -0.2, 0.5, 1.0, -0.4, 0.25, -0.6];
        let p = end_effector_position(m.left_arm(), &q).unwrap();
        let expected = Vector3::new(29.296920869594114, -77.78837755880951, -111.19215778882912);
        assert!((p - expected).norm() < 1e-9, "{p}");
    }

    #[test]
    fn right_fingertip_zero_pose_matches_oracle() {
        let m = default_icub_model();
        let p = end_effector_position(m.right_arm(), &[0.0; 8]).unwrap();
        let expected = Vector3::new(32.20490494317198, -12.449191221458172, -208.78);
        assert!((p - expected).norm() < 1e-9, "{p}");
    }

    #[test]
    fn right_arm_mirrors_left_arm() {
        let m = default_icub_model();
        let ra = m.right_arm().without_tail();
        for q in [
            [0.0, 0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7],
            [0.0, -1.2, 0.8, 0.3, 1.1, -0.9, 0.2, -1.4],
        ] {
            let l = end_effector_position(m.left_arm(), &q).unwrap();
            let r = end_effector_position(&ra, &q).unwrap();
            assert!((Vector3::new(l.x, -l.y, l.z) - r).norm() < 1e-9);
        }
    }

    #[test]
    fn shipped_tail_is_rigid() {
        let m = default_icub_model();
        assert!(is_rigid_transform(m.right_arm().fixed_tail().unwrap(), 1e-12));
        let t = forward_kinematics(m.right_arm(), &[0.0; 8]).unwrap();
        assert!(is_rigid_transform(&t, 1e-9));
    }
}
