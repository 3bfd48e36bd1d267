//! Calibration quality: Cartesian end-effector errors on held-out poses,
//! per-parameter estimation errors and residual scatter for plotting.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{project, root_to_eye};
use crate::dataset::PoseSample;
use crate::error::{Error, Result};
use crate::kinematics::{end_effector_position, transform_point, Arm, Eye, RobotModel};
use crate::observability::ObservabilityReport;
use crate::optimizer::SubsetSolve;
use crate::params::{ParamKey, ParameterVector};

/// Euclidean distance between two points (mm).
pub fn cartesian_error(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm()
}

/// `(mean, sample std)`; the std uses `n - 1` and is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterError {
    pub key: ParamKey,
    pub truth: f64,
    /// `sum_r |estimate_r - truth| / R`, native units (mm or rad).
    pub mean_abs_error: f64,
    /// Sample standard deviation of the estimates.
    pub std: f64,
}

/// Per-parameter errors over repetitions sharing one layout.
pub fn parameter_errors(estimates: &[ParameterVector], truth: &RobotModel) -> Result<Vec<ParameterError>> {
    let first = estimates.first().ok_or(Error::InsufficientSamples {
        requested: 1,
        available: 0,
    })?;
    if estimates
        .iter()
        .any(|e| e.layout != first.layout || e.values.len() != first.layout.len())
    {
        return Err(Error::MaskMismatch);
    }
    Ok(first
        .layout
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let t = truth.value(key.chain, key.link, key.field);
            let column: Vec<f64> = estimates.iter().map(|e| e.values[i]).collect();
            let mean_abs_error = column.iter().map(|v| (v - t).abs()).sum::<f64>() / column.len() as f64;
            ParameterError {
                key: *key,
                truth: t,
                mean_abs_error,
                std: mean_std(&column).1,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// End-effector position distance (mm).
    #[default]
    Ee3d,
    /// Pixel distance of end-effector projections (px).
    Reprojection,
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Evaluation::Ee3d => "ee3d",
            Evaluation::Reprojection => "reprojection",
        })
    }
}

impl FromStr for Evaluation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ee3d" => Ok(Evaluation::Ee3d),
            "reprojection" => Ok(Evaluation::Reprojection),
            _ => Err(Error::Config(format!("unknown evaluation `{s}` (ee3d, reprojection)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestError {
    pub evaluation: Evaluation,
    pub arms: Vec<Arm>,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    /// One entry per test pose and arm (pose-major); reprojection adds the
    /// eye as innermost index. Behind-camera projections are skipped.
    pub values: Vec<f64>,
}

/// Error of `calibrated` against `truth` on held-out samples.
pub fn test_error(
    calibrated: &RobotModel,
    truth: &RobotModel,
    samples: &[PoseSample],
    evaluation: Evaluation,
    arms: &[Arm],
) -> Result<TestError> {
    let mut values = Vec::with_capacity(samples.len() * arms.len() * 2);
    for s in samples {
        for &arm in arms {
            let q = s.arm_angles(arm);
            let est = end_effector_position(calibrated.chain(arm.chain()), &q)?;
            let tru = end_effector_position(truth.chain(arm.chain()), &q)?;
            match evaluation {
                Evaluation::Ee3d => values.push(cartesian_error(&est, &tru)),
                Evaluation::Reprojection => {
                    for eye in Eye::BOTH {
                        let qe = s.eye_angles(eye);
                        let pe = project(
                            &transform_point(&root_to_eye(calibrated, eye, &qe)?, &est),
                            &calibrated.intrinsics,
                        );
                        let pt = project(
                            &transform_point(&root_to_eye(truth, eye, &qe)?, &tru),
                            &truth.intrinsics,
                        );
                        if let (Ok(a), Ok(b)) = (pe, pt) {
                            values.push(a.distance(&b));
                        }
                    }
                }
            }
        }
    }
    let (mean, std) = mean_std(&values);
    Ok(TestError {
        evaluation,
        arms: arms.to_vec(),
        mean,
        std,
        max: values.iter().copied().fold(0.0, f64::max),
        values,
    })
}

/// Signed end-effector error `X_calibrated - X_truth` of one test pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub repetition: usize,
    pub pose: usize,
    pub ex: f64,
    pub ey: f64,
    pub ez: f64,
}

pub fn residual_scatter(
    calibrated: &RobotModel,
    truth: &RobotModel,
    samples: &[PoseSample],
    arm: Arm,
    repetition: usize,
) -> Result<Vec<ScatterRow>> {
    samples
        .iter()
        .enumerate()
        .map(|(pose, s)| {
            let q = s.arm_angles(arm);
            let e = end_effector_position(calibrated.chain(arm.chain()), &q)?
                - end_effector_position(truth.chain(arm.chain()), &q)?;
            Ok(ScatterRow {
                repetition,
                pose,
                ex: e.x,
                ey: e.y,
                ez: e.z,
            })
        })
        .collect()
}

/// Everything recorded for one calibration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub solve: SubsetSolve,
    pub initial: ParameterVector,
    pub estimate: ParameterVector,
    pub test: TestError,
    pub parameters: Vec<ParameterError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observability: Option<ObservabilityReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{default_icub_model, ChainId, DhField};
    use proptest::prelude::*;

    fn pose(theta: Vec<f64>) -> PoseSample {
        PoseSample {
            target: [0.0; 3],
            theta,
            la_position: [0.0; 3],
            ra_position: [0.0; 3],
            contact_noise: [0.0; 3],
            observations: vec![],
        }
    }

    #[test]
    fn cartesian_examples() {
        let o = Vector3::zeros();
        assert_eq!(cartesian_error(&o, &o), 0.0);
        assert_eq!(cartesian_error(&o, &Vector3::new(1.0, 2.0, 2.0)), 3.0);
        assert_eq!(cartesian_error(&Vector3::new(1.0, 2.0, 2.0), &o), 3.0);
    }

    #[test]
    fn parameter_error_arithmetic() {
        let truth = default_icub_model();
        let key = ParamKey::new(ChainId::LeftArm, 3, DhField::D);
        let t = truth.value(key.chain, key.link, key.field);
        let est = |v: f64| ParameterVector {
            values: vec![v],
            layout: vec![key],
        };
        let exact = parameter_errors(&[est(t)], &truth).unwrap();
        assert_eq!(exact[0].mean_abs_error, 0.0);
        assert_eq!(exact[0].std, 0.0);
        let d = 0.25;
        let two = parameter_errors(&[est(t + d), est(t - d)], &truth).unwrap();
        assert!((two[0].mean_abs_error - d).abs() < 1e-12);
        assert!((two[0].std - d * 2f64.sqrt()).abs() < 1e-12);
        let other = ParameterVector {
            values: vec![0.0],
            layout: vec![ParamKey::new(ChainId::LeftArm, 3, DhField::A)],
        };
        assert!(matches!(
            parameter_errors(&[est(t), other], &truth),
            Err(Error::MaskMismatch)
        ));
    }

    #[test]
    fn test_error_against_fk_oracle() {
        let truth = default_icub_model();
        let samples = vec![pose(vec![0.0; 20])];
        let zero = test_error(&truth, &truth, &samples, Evaluation::Ee3d, &Arm::BOTH).unwrap();
        assert_eq!(zero.mean, 0.0);
        assert_eq!(zero.values, vec![0.0, 0.0]);
        let mut shifted = truth.clone();
        shifted.set_value(
            ChainId::LeftArm,
            3,
            DhField::D,
            truth.value(ChainId::LeftArm, 3, DhField::D) + 1.0,
        );
        let e = test_error(&shifted, &truth, &samples, Evaluation::Ee3d, &[Arm::Left]).unwrap();
        let q = samples[0].arm_angles(Arm::Left);
        let oracle = (end_effector_position(shifted.left_arm(), &q).unwrap()
            - end_effector_position(truth.left_arm(), &q).unwrap())
        .norm();
        assert!((e.mean - oracle).abs() < 1e-12);
        // A pure translation along a joint axis moves the end-effector by exactly 1 mm.
        assert!((e.mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scatter_rows() {
        let truth = default_icub_model();
        let samples: Vec<_> = (0..300).map(|i| pose(vec![0.001 * i as f64; 20])).collect();
        let mut rows = Vec::new();
        for rep in 0..10 {
            rows.extend(residual_scatter(&truth, &truth, &samples, Arm::Left, rep).unwrap());
        }
        assert_eq!(rows.len(), 3000);
        assert!(rows.iter().all(|r| r.ex == 0.0 && r.ey == 0.0 && r.ez == 0.0));
    }

    proptest! {
        #[test]
        fn cartesian_metric_axioms(a in prop::array::uniform3(-1e3f64..1e3), b in prop::array::uniform3(-1e3f64..1e3), c in prop::array::uniform3(-1e3f64..1e3)) {
            let (a, b, c) = (Vector3::from(a), Vector3::from(b), Vector3::from(c));
            prop_assert!(cartesian_error(&a, &b) >= 0.0);
            prop_assert_eq!(cartesian_error(&a, &b), cartesian_error(&b, &a));
            prop_assert!(cartesian_error(&a, &c) <= cartesian_error(&a, &b) + cartesian_error(&b, &c) + 1e-9);
        }

        #[test]
        fn parameter_errors_ignore_order(v in proptest::collection::vec(-1.0f64..1.0, 2..8)) {
            let truth = default_icub_model();
            let key = ParamKey::new(ChainId::RightArm, 2, DhField::Offset);
            let make = |x: f64| ParameterVector { values: vec![x], layout: vec![key] };
            let fwd: Vec<_> = v.iter().map(|&x| make(x)).collect();
            let rev: Vec<_> = v.iter().rev().map(|&x| make(x)).collect();
            let a = parameter_errors(&fwd, &truth).unwrap();
            let b = parameter_errors(&rev, &truth).unwrap();
            prop_assert!((a[0].mean_abs_error - b[0].mean_abs_error).abs() < 1e-12);
            prop_assert!((a[0].std - b[0].std).abs() < 1e-12);
        }
    }
}
