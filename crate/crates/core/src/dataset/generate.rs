use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, NoiseSpec, PixelObservation, PoseSample, THETA_LEN};
use crate::camera::{in_frame, project, root_to_eye};
use crate::error::{Error, Result};
use crate::kinematics::{
    end_effector_position, forward_kinematics, model_hash, transform_point, translation, Arm, ChainId, Eye, RobotModel,
};
use crate::optimizer::{forward_difference_jacobian, solve, FnProblem, SolverSettings};

/// Axis-aligned box of contact targets in the Root frame (mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        Self {
            min: [100.0, -150.0, -250.0],
            max: [400.0, 150.0, 50.0],
        }
    }
}

impl WorkspaceBox {
    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i]);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "workspace box {self} has min > max or non-finite bounds"
            )))
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            if self.min[i] == self.max[i] {
                self.min[i]
            } else {
                rng.random_range(self.min[i]..=self.max[i])
            }
        })
    }
}

impl fmt::Display for WorkspaceBox {
    /// `xmin,xmax,ymin,ymax,zmin,zmax`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.min[0], self.max[0], self.min[1], self.max[1], self.min[2], self.max[2]
        )
    }
}

impl FromStr for WorkspaceBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Config(format!("workspace box `{s}`: {e}")))?;
        if v.len() != 6 {
            return Err(Error::Config(format!(
                "workspace box `{s}` needs 6 comma-separated values"
            )));
        }
        let b = WorkspaceBox {
            min: [v[0], v[2], v[4]],
            max: [v[1], v[3], v[5]],
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOptions {
    pub count: usize,
    pub workspace: WorkspaceBox,
    pub seed: u64,
    /// Maximum `|X_RA - X_LA|` at generation (mm).
    pub contact_tolerance: f64,
    /// Maximum distance of the target projection from each image center (px).
    pub gaze_tolerance: f64,
    /// Maximum angle between the right finger axis and the left palm normal (deg).
    pub approach_cone_deg: f64,
    /// Targets tried per sample before giving up.
    pub max_attempts: usize,
    /// Random restarts per IK stage within one attempt.
    pub restarts: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            count: 1000,
            workspace: WorkspaceBox::default(),
            seed: 0,
            contact_tolerance: 0.01,
            gaze_tolerance: 20.0,
            approach_cone_deg: 50.0,
            max_attempts: 100,
            restarts: 4,
        }
    }
}

impl GenerationOptions {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        let ok = self.contact_tolerance > 0.0
            && self.gaze_tolerance > 0.0
            && self.approach_cone_deg > 0.0
            && self.approach_cone_deg <= 90.0
            && self.max_attempts > 0
            && self.restarts > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid generation options {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    LeftArm,
    RightArm,
    Gaze,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::LeftArm => "left-arm IK",
            Stage::RightArm => "right-arm IK",
            Stage::Gaze => "gaze",
        }
    }
}

fn ik_settings() -> SolverSettings {
    SolverSettings {
        max_iterations: 400,
        cost_tolerance: 1e-15,
        step_tolerance: 1e-14,
        ..SolverSettings::default()
    }
}

/// Joint values inside `limits` from unconstrained variables: `mid + half * sin(z)`.
fn bounded(z: &[f64], limits: &[[f64; 2]]) -> Vec<f64> {
    z.iter()
        .zip(limits)
        .map(|(z, [lo, hi])| 0.5 * (lo + hi) + 0.5 * (hi - lo) * z.sin())
        .collect()
}

fn within(q: &[f64], limits: &[[f64; 2]]) -> bool {
    q.iter().zip(limits).all(|(q, [lo, hi])| *q >= *lo && *q <= *hi)
}

/// Minimizes `f` from a few random starts; returns the best final variables.
fn least_squares<F, R>(
    f: F,
    n: usize,
    restarts: usize,
    accept: impl Fn(&[f64]) -> bool,
    rng: &mut R,
) -> Option<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
    R: Rng,
{
    let steps = vec![1e-7; n];
    let problem = FnProblem {
        residuals: &f,
        jacobian: |x: &DVector<f64>| -> Result<DMatrix<f64>> { forward_difference_jacobian(&f, x, &steps) },
    };
    for _ in 0..restarts {
        let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.2..=1.2)).collect();
        let Ok(report) = solve(&problem, &z0, &ik_settings()) else {
            continue;
        };
        if accept(&report.params) {
            return Some(report.params);
        }
    }
    None
}

fn full(q7: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(q7.len() + 1);
    q.push(0.0);
    q.extend_from_slice(q7);
    q
}

fn head_full(z_head: &[f64], eye: Eye) -> Vec<f64> {
    let pan = match eye {
        Eye::Left => z_head[4],
        Eye::Right => z_head[5],
    };
    vec![0.0, z_head[0], z_head[1], z_head[2], z_head[3], pan]
}

struct Generator<'a> {
    model: &'a RobotModel,
    options: &'a GenerationOptions,
}

impl Generator<'_> {
    fn limits(&self, chain: ChainId) -> &[[f64; 2]] {
        &self.model.joint_limits.get(chain)[1..]
    }

    fn head_limits(&self) -> Vec<[f64; 2]> {
        let left = self.limits(ChainId::LeftEye);
        let right = self.limits(ChainId::RightEye);
        let mut l = left.to_vec();
        l.push(right[4]);
        l
    }

    fn left_arm(&self, target: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let limits = self.limits(ChainId::LeftArm);
        let chain = self.model.left_arm();
        let tol = 0.05 * self.options.contact_tolerance;
        let f = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let p = end_effector_position(chain, &full(&bounded(z.as_slice(), limits)))?;
            Ok(DVector::from_column_slice((p - target).as_slice()))
        };
        let accept = |z: &[f64]| f(&DVector::from_column_slice(z)).is_ok_and(|r| r.norm() <= tol);
        least_squares(f, 7, self.options.restarts, accept, rng).map(|z| bounded(&z, limits))
    }

    fn right_arm(&self, target: &Vector3<f64>, q_left: &[f64], rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let limits = self.limits(ChainId::RightArm);
        let chain = self.model.right_arm();
        let palm = forward_kinematics(self.model.left_arm(), &full(q_left)).ok()?;
        let normal: Vector3<f64> = palm.fixed_view::<3, 1>(0, 2).into();
        let min_cos = self.options.approach_cone_deg.to_radians().cos();
        let tol = 0.05 * self.options.contact_tolerance;
        let approach = |q: &[f64]| -> Result<(Vector3<f64>, f64)> {
            let t = forward_kinematics(chain, &full(q))?;
            let axis: Vector3<f64> = t.fixed_view::<3, 1>(0, 2).into();
            Ok((translation(&t) - target, axis.dot(&normal).abs()))
        };
        // Position error plus a hinge penalty keeping the finger inside the approach cone.
        let penalized = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let (e, cos) = approach(&bounded(z.as_slice(), limits))?;
            Ok(DVector::from_vec(vec![e.x, e.y, e.z, 100.0 * (min_cos - cos).max(0.0)]))
        };
        let cone_ok = |z: &[f64]| approach(&bounded(z, limits)).is_ok_and(|(_, c)| c >= min_cos);
        let z = least_squares(penalized, 7, self.options.restarts, cone_ok, rng)?;
        // Position-only polish from the cone-feasible start.
        let position = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let (e, _) = approach(&bounded(z.as_slice(), limits))?;
            Ok(DVector::from_column_slice(e.as_slice()))
        };
        let steps = vec![1e-7; 7];
        let problem = FnProblem {
            residuals: &position,
            jacobian: |x: &DVector<f64>| -> Result<DMatrix<f64>> { forward_difference_jacobian(position, x, &steps) },
        };
        let polished = solve(&problem, &z, &ik_settings()).ok()?.params;
        let q = bounded(&polished, limits);
        let (e, cos) = approach(&q).ok()?;
        (e.norm() <= tol && cos >= min_cos).then_some(q)
    }

    /// Neck, tilt, left pan, right pan so that both optical axes pass near `target`.
    fn gaze(&self, target: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let limits = self.head_limits();
        let k = &self.model.intrinsics;
        let f = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let q = bounded(z.as_slice(), &limits);
            let mut r = Vec::with_capacity(6);
            for eye in Eye::BOTH {
                let p = transform_point(&root_to_eye(self.model, eye, &head_full(&q, eye))?, target);
                let dir = p / p.norm();
                r.extend_from_slice(&[k.fx * dir.x, k.fy * dir.y, k.fx * (1.0 - dir.z)]);
            }
            Ok(DVector::from_vec(r))
        };
        let accept = |z: &[f64]| {
            let q = bounded(z, &limits);
            self.gaze_error(target, &q)
                .is_some_and(|e| e <= self.options.gaze_tolerance)
        };
        least_squares(f, 6, self.options.restarts, accept, rng).map(|z| bounded(&z, &limits))
    }

    /// Largest pixel distance of `target` from either image center.
    fn gaze_error(&self, target: &Vector3<f64>, q_head: &[f64]) -> Option<f64> {
        let k = &self.model.intrinsics;
        let mut worst: f64 = 0.0;
        for eye in Eye::BOTH {
            let to_eye = root_to_eye(self.model, eye, &head_full(q_head, eye)).ok()?;
            let px = project(&transform_point(&to_eye, target), k).ok()?;
            worst = worst.max(px.distance(&k.center()));
        }
        Some(worst)
    }

    fn attempt(&self, rng: &mut ChaCha8Rng) -> std::result::Result<PoseSample, Stage> {
        let target = self.options.workspace.sample(rng);
        let ql = self.left_arm(&target, rng).ok_or(Stage::LeftArm)?;
        let qr = self.right_arm(&target, &ql, rng).ok_or(Stage::RightArm)?;
        let qh = self.gaze(&target, rng).ok_or(Stage::Gaze)?;
        let mut theta = Vec::with_capacity(THETA_LEN);
        theta.extend_from_slice(&ql);
        theta.extend_from_slice(&qr);
        theta.extend_from_slice(&qh);
        let mut sample = PoseSample {
            target: target.into(),
            theta,
            la_position: [0.0; 3],
            ra_position: [0.0; 3],
            contact_noise: [0.0; 3],
            observations: Vec::with_capacity(4),
        };
        let la =
            end_effector_position(self.model.left_arm(), &sample.arm_angles(Arm::Left)).map_err(|_| Stage::LeftArm)?;
        let ra = end_effector_position(self.model.right_arm(), &sample.arm_angles(Arm::Right))
            .map_err(|_| Stage::RightArm)?;
        if (ra - la).norm() > self.options.contact_tolerance {
            return Err(Stage::RightArm);
        }
        let arm_ok = within(
            &sample.arm_angles(Arm::Left),
            self.model.joint_limits.get(ChainId::LeftArm),
        ) && within(
            &sample.arm_angles(Arm::Right),
            self.model.joint_limits.get(ChainId::RightArm),
        );
        if !arm_ok {
            return Err(Stage::RightArm);
        }
        sample.la_position = la.into();
        sample.ra_position = ra.into();
        let k = &self.model.intrinsics;
        for arm in Arm::BOTH {
            let ee = if arm == Arm::Left { la } else { ra };
            for eye in Eye::BOTH {
                let to_eye = root_to_eye(self.model, eye, &sample.eye_angles(eye)).map_err(|_| Stage::Gaze)?;
                let px = project(&transform_point(&to_eye, &ee), k).map_err(|_| Stage::Gaze)?;
                let visible = in_frame(&px, k);
                sample.observations.push(PixelObservation {
                    arm,
                    eye,
                    visible,
                    pixel: visible.then_some(px),
                });
            }
        }
        Ok(sample)
    }

    fn sample(&self, index: usize) -> Result<PoseSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
        rng.set_stream(index as u64);
        let mut failures = [0usize; 3];
        for _ in 0..self.options.max_attempts {
            match self.attempt(&mut rng) {
                Ok(s) => return Ok(s),
                Err(stage) => failures[stage as usize] += 1,
            }
        }
        let worst = [Stage::LeftArm, Stage::RightArm, Stage::Gaze]
            .into_iter()
            .max_by_key(|s| failures[*s as usize])
            .unwrap_or(Stage::LeftArm);
        Err(Error::Generation {
            stage: worst.name(),
            index,
            attempts: self.options.max_attempts,
        })
    }
}

/// Noiseless self-touch dataset: for each target, the left palm and the right
/// fingertip both reach it and both eyes gaze at it. Sample `i` depends only
/// on `(options.seed, i)`.
pub fn generate(model: &RobotModel, options: &GenerationOptions) -> Result<Dataset> {
    options.validate()?;
    let gen = Generator { model, options };
    let samples = (0..options.count)
        .into_par_iter()
        .map(|i| gen.sample(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        model_hash: model_hash(model),
        seed: options.seed,
        noise: NoiseSpec::NONE,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_icub_model;

    #[test]
    fn box_parsing() {
        let b: WorkspaceBox = "100,400,-150,150,-250,50".parse().unwrap();
        assert_eq!(b, WorkspaceBox::default());
        assert_eq!(b.to_string().parse::<WorkspaceBox>().unwrap(), b);
        assert!("1,0,0,0,0,0".parse::<WorkspaceBox>().is_err());
        assert!("1,2,3".parse::<WorkspaceBox>().is_err());
    }

    #[test]
    fn empty_count() {
        let d = generate(&default_icub_model(), &GenerationOptions::new(0, 3)).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn samples_meet_generation_contract() {
        let m = default_icub_model();
        let opts = GenerationOptions::new(12, 7);
        let d = generate(&m, &opts).unwrap();
        assert_eq!(d.len(), 12);
        let k = &m.intrinsics;
        for s in &d.samples {
            assert!(s.validate().is_ok());
            assert!(s.contact_discrepancy().norm() <= 0.01);
            assert!(opts.workspace.contains(&Vector3::from(s.target)));
            for eye in Eye::BOTH {
                let to_eye = root_to_eye(&m, eye, &s.eye_angles(eye)).unwrap();
                let px = project(&transform_point(&to_eye, &Vector3::from(s.target)), k).unwrap();
                assert!(in_frame(&px, k));
                assert!(px.distance(&k.center()) <= 20.0);
            }
            let palm = forward_kinematics(m.left_arm(), &s.arm_angles(Arm::Left)).unwrap();
            let finger = forward_kinematics(m.right_arm(), &s.arm_angles(Arm::Right)).unwrap();
            let cos = palm
                .fixed_view::<3, 1>(0, 2)
                .dot(&finger.fixed_view::<3, 1>(0, 2))
                .abs();
            assert!(cos >= 50f64.to_radians().cos() - 1e-12);
        }
    }

    #[test]
    fn samples_are_schedule_independent() {
        let m = default_icub_model();
        let all = generate(&m, &GenerationOptions::new(4, 11)).unwrap();
        let gen = Generator {
            model: &m,
            options: &GenerationOptions::new(4, 11),
        };
        assert_eq!(gen.sample(2).unwrap(), all.samples[2]);
    }

    #[test]
    fn unreachable_box_names_stage() {
        let opts = GenerationOptions {
            count: 1,
            workspace: WorkspaceBox {
                min: [2000.0, 0.0, 0.0],
                max: [2000.0, 0.0, 0.0],
            },
            max_attempts: 2,
            restarts: 1,
            ..Default::default()
        };
        match generate(&default_icub_model(), &opts) {
            Err(Error::Generation { stage, attempts, .. }) => {
                assert_eq!(stage, "left-arm IK");
                assert_eq!(attempts, 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
