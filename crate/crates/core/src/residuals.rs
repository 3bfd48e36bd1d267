//! Stacked residuals and their Jacobian for any combination of closed chains.
//!
//! Per pose the residual is the touch block (3 components, LA-RA, mm) followed
//! by one 2-component pixel block per selected (arm, eye) pair in the order
//! LA-LEye, LA-REye, RA-LEye, RA-REye. When a combination mixes touch and
//! reprojection blocks, the touch block is multiplied by the pose's `mu`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{project, root_to_eye, PixelPoint};
use crate::dataset::PoseSample;
use crate::error::{Error, Result};
use crate::kinematics::{
    end_effector_position, forward_kinematics, transform_point, translation, Arm, Eye, RobotModel,
};
use crate::optimizer::central_difference_jacobian;
use crate::params::{unpack, ParameterMask};

/// Pixel value substituted for each coordinate of a point behind the camera.
pub const BEHIND_CAMERA_SENTINEL: f64 = 1e6;

/// Central-difference half-width for `a` and `d` (mm).
pub const LENGTH_STEP: f64 = 1e-3;
/// Central-difference half-width for `alpha` and `offset` (rad).
pub const ANGLE_STEP: f64 = 1e-6;

/// Which closed chains contribute residuals.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ChainCombo {
    pub touch: bool,
    pub reprojections: BTreeSet<(Arm, Eye)>,
}

type NamedCombo = (&'static str, bool, &'static [(Arm, Eye)]);

const NAMED_COMBOS: [NamedCombo; 9] = [
    ("LARA", true, &[]),
    ("LALEye", false, &[(Arm::Left, Eye::Left)]),
    ("LAREye", false, &[(Arm::Left, Eye::Right)]),
    ("RALEye", false, &[(Arm::Right, Eye::Left)]),
    ("RAREye", false, &[(Arm::Right, Eye::Right)]),
    ("LALREye", false, &[(Arm::Left, Eye::Left), (Arm::Left, Eye::Right)]),
    ("RALREye", false, &[(Arm::Right, Eye::Left), (Arm::Right, Eye::Right)]),
    ("LARALEye", true, &[(Arm::Left, Eye::Left), (Arm::Right, Eye::Left)]),
    (
        "LARALREye",
        true,
        &[
            (Arm::Left, Eye::Left),
            (Arm::Left, Eye::Right),
            (Arm::Right, Eye::Left),
            (Arm::Right, Eye::Right),
        ],
    ),
];

impl ChainCombo {
    pub fn new(touch: bool, reprojections: impl IntoIterator<Item = (Arm, Eye)>) -> Result<Self> {
        let combo = Self {
            touch,
            reprojections: reprojections.into_iter().collect(),
        };
        if !combo.touch && combo.reprojections.is_empty() {
            return Err(Error::UnknownCombo("combination selects no chain pair".into()));
        }
        Ok(combo)
    }

    pub fn named(name: &str) -> Result<Self> {
        name.parse()
    }

    /// Residual components per pose: `3 t + 2 r`.
    pub fn rows_per_pose(&self) -> usize {
        3 * usize::from(self.touch) + 2 * self.reprojections.len()
    }

    /// Touch residuals are scaled by `mu` only when mixed with pixel residuals.
    pub fn uses_mu(&self) -> bool {
        self.touch && !self.reprojections.is_empty()
    }

    pub fn name(&self) -> String {
        NAMED_COMBOS
            .iter()
            .find(|(_, t, r)| *t == self.touch && r.iter().copied().collect::<BTreeSet<_>>() == self.reprojections)
            .map(|(n, _, _)| n.to_string())
            .unwrap_or_else(|| {
                let mut parts: Vec<String> = Vec::new();
                if self.touch {
                    parts.push("touch".into());
                }
                parts.extend(self.reprojections.iter().map(|(a, e)| format!("{a}-{e}")));
                parts.join("+")
            })
    }
}

impl fmt::Display for ChainCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ChainCombo {
    type Err = Error;

    /// A named combination (`LARA`, `LALREye`, ...) or the general form
    /// `touch+LA-LEye+RA-REye`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((_, t, r)) = NAMED_COMBOS.iter().find(|(n, _, _)| n.eq_ignore_ascii_case(s)) {
            return ChainCombo::new(*t, r.iter().copied());
        }
        let mut touch = false;
        let mut pairs = Vec::new();
        for part in s.split('+') {
            let part = part.trim();
            if part.eq_ignore_ascii_case("touch") || part.eq_ignore_ascii_case("LA-RA") {
                touch = true;
                continue;
            }
            let (arm, eye) = part.split_once('-').ok_or_else(|| Error::UnknownCombo(s.to_string()))?;
            let arm = match arm.to_ascii_uppercase().as_str() {
                "LA" => Arm::Left,
                "RA" => Arm::Right,
                _ => return Err(Error::UnknownCombo(s.to_string())),
            };
            let eye = match eye.to_ascii_lowercase().as_str() {
                "leye" => Eye::Left,
                "reye" => Eye::Right,
                _ => return Err(Error::UnknownCombo(s.to_string())),
            };
            pairs.push((arm, eye));
        }
        ChainCombo::new(touch, pairs).map_err(|_| Error::UnknownCombo(s.to_string()))
    }
}

impl From<ChainCombo> for String {
    fn from(c: ChainCombo) -> String {
        c.name()
    }
}

impl TryFrom<String> for ChainCombo {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// `mu = 320 px / (d * pi / 3)` for an eye-to-end-effector distance `d` in mm.
pub fn mu_coefficient(distance_mm: f64) -> Result<f64> {
    if !distance_mm.is_finite() || distance_mm <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "eye to end-effector distance {distance_mm}"
        )));
    }
    Ok(320.0 / (distance_mm * (PI / 3.0)))
}

/// How the touch-block weight is obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuPolicy {
    /// Recomputed from the current estimate at every evaluation, from the
    /// left-eye-to-left-palm distance.
    #[default]
    Current,
    /// One precomputed value per pose (e.g. frozen at the initial estimate).
    PerPose(Vec<f64>),
    /// Same value for every pose.
    Fixed(f64),
}

/// Per-pose `mu` from the left-eye-to-left-palm distance under `model`.
pub fn pose_mu(model: &RobotModel, sample: &PoseSample) -> Result<f64> {
    let eye = forward_kinematics(model.left_eye(), &sample.eye_angles(Eye::Left))?;
    let ee = end_effector_position(model.left_arm(), &sample.arm_angles(Arm::Left))?;
    mu_coefficient((ee - translation(&eye)).norm())
}

/// Freezes `mu` for every sample at `model`.
pub fn frozen_mu(model: &RobotModel, samples: &[PoseSample]) -> Result<MuPolicy> {
    samples
        .iter()
        .map(|s| pose_mu(model, s))
        .collect::<Result<_>>()
        .map(MuPolicy::PerPose)
}

/// `X_RA - X_LA - eps`: right fingertip minus left palm minus recorded contact error.
pub fn touch_residual(model: &RobotModel, sample: &PoseSample) -> Result<Vector3<f64>> {
    let right = end_effector_position(model.right_arm(), &sample.arm_angles(Arm::Right))?;
    let left = end_effector_position(model.left_arm(), &sample.arm_angles(Arm::Left))?;
    Ok(right - left - sample.contact_noise())
}

/// Projection of the arm end-effector into `eye` under `model`.
pub fn predicted_pixel(model: &RobotModel, sample: &PoseSample, arm: Arm, eye: Eye) -> Result<PixelPoint> {
    let ee = end_effector_position(model.chain(arm.chain()), &sample.arm_angles(arm))?;
    let to_eye = root_to_eye(model, eye, &sample.eye_angles(eye))?;
    project(&transform_point(&to_eye, &ee), &model.intrinsics)
}

/// Predicted minus observed pixel. A point behind the camera yields
/// [`Error::BehindCamera`]; [`assemble`] turns that into a sentinel.
pub fn reprojection_residual(model: &RobotModel, sample: &PoseSample, arm: Arm, eye: Eye) -> Result<[f64; 2]> {
    let observed = observed_pixel(sample, arm, eye, None)?;
    let p = predicted_pixel(model, sample, arm, eye)?;
    Ok([p.u - observed.u, p.v - observed.v])
}

fn observed_pixel(sample: &PoseSample, arm: Arm, eye: Eye, pose: Option<usize>) -> Result<PixelPoint> {
    sample
        .pixel(arm, eye)
        .copied()
        .ok_or_else(|| Error::MissingObservation {
            pose: pose.unwrap_or(0),
            what: format!("{arm}-{eye}"),
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum BlockValues {
    Touch3d([f64; 3]),
    Reprojection2d([f64; 2]),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub pose: usize,
    pub values: BlockValues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    pub values: DVector<f64>,
    pub behind_camera: usize,
}

fn mu_for(policy: &MuPolicy, model: &RobotModel, sample: &PoseSample, pose: usize) -> Result<f64> {
    match policy {
        MuPolicy::Current => pose_mu(model, sample),
        MuPolicy::PerPose(values) => values.get(pose).copied().ok_or(Error::Dimension {
            expected: pose + 1,
            actual: values.len(),
            context: "per-pose mu values",
        }),
        MuPolicy::Fixed(v) => Ok(*v),
    }
}

/// Residual blocks for every pose, in stacking order.
pub fn residual_blocks(
    model: &RobotModel,
    samples: &[PoseSample],
    combo: &ChainCombo,
    mu: &MuPolicy,
) -> Result<(Vec<ResidualBlock>, usize)> {
    let mut blocks = Vec::with_capacity(samples.len() * (usize::from(combo.touch) + combo.reprojections.len()));
    let mut behind = 0;
    for (pose, sample) in samples.iter().enumerate() {
        if combo.touch {
            let scale = if combo.uses_mu() {
                mu_for(mu, model, sample, pose)?
            } else {
                1.0
            };
            let r = touch_residual(model, sample)? * scale;
            blocks.push(ResidualBlock {
                pose,
                values: BlockValues::Touch3d([r.x, r.y, r.z]),
            });
        }
        for &(arm, eye) in &combo.reprojections {
            let observed = observed_pixel(sample, arm, eye, Some(pose))?;
            let values = match predicted_pixel(model, sample, arm, eye) {
                Ok(p) => [p.u - observed.u, p.v - observed.v],
                Err(Error::BehindCamera { .. }) => {
                    behind += 1;
                    [BEHIND_CAMERA_SENTINEL; 2]
                }
                Err(e) => return Err(e),
            };
            blocks.push(ResidualBlock {
                pose,
                values: BlockValues::Reprojection2d(values),
            });
        }
    }
    Ok((blocks, behind))
}

/// Concatenated residual vector of length `M * (3 t + 2 r)`.
pub fn assemble(model: &RobotModel, samples: &[PoseSample], combo: &ChainCombo, mu: &MuPolicy) -> Result<Residuals> {
    let (blocks, behind_camera) = residual_blocks(model, samples, combo, mu)?;
    let mut values = Vec::with_capacity(samples.len() * combo.rows_per_pose());
    for b in &blocks {
        match b.values {
            BlockValues::Touch3d(v) => values.extend_from_slice(&v),
            BlockValues::Reprojection2d(v) => values.extend_from_slice(&v),
        }
    }
    Ok(Residuals {
        values: DVector::from_vec(values),
        behind_camera,
    })
}

/// Finite-difference step per free parameter of `mask`.
pub fn jacobian_steps(mask: &ParameterMask) -> Vec<f64> {
    mask.free_keys()
        .iter()
        .map(|k| if k.field.is_length() { LENGTH_STEP } else { ANGLE_STEP })
        .collect()
}

/// Central-difference Jacobian of [`assemble`] with respect to the packed
/// free parameters of `mask`, evaluated at `model`.
pub fn jacobian(
    model: &RobotModel,
    mask: &ParameterMask,
    samples: &[PoseSample],
    combo: &ChainCombo,
    mu: &MuPolicy,
) -> Result<DMatrix<f64>> {
    let x = DVector::from_vec(crate::params::pack(model, mask).values);
    jacobian_at(model, mask, samples, combo, mu, &x)
}

pub(crate) fn jacobian_at(
    model: &RobotModel,
    mask: &ParameterMask,
    samples: &[PoseSample],
    combo: &ChainCombo,
    mu: &MuPolicy,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let steps = jacobian_steps(mask);
    central_difference_jacobian(
        |x| {
            let m = unpack(model, mask, x.as_slice())?;
            assemble(&m, samples, combo, mu).map(|r| r.values)
        },
        x,
        &steps,
    )
}
