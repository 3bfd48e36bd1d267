//! Synthetic self-touch / self-observation pose sets: generation from a
//! ground-truth model, measurement noise, train/test splits and persistence.

mod generate;
mod io;
mod noise;
mod split;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::PixelPoint;
use crate::error::{Error, Result};
use crate::kinematics::{Arm, Eye};

pub use generate::{generate, GenerationOptions, WorkspaceBox};
pub use io::{load, parse, save, to_jsonl, DATASET_FORMAT_VERSION};
pub use noise::{apply_noise, noisy_samples};
pub use split::{draw_test, draw_train, split, Split};

/// Joint vector layout: 7 left arm, 7 right arm, 3 neck, eye tilt, left pan,
/// right pan. The frozen Root-attached joint of each chain is not stored.
pub const THETA_LEN: usize = 20;
const LA_RANGE: std::ops::Range<usize> = 0..7;
const RA_RANGE: std::ops::Range<usize> = 7..14;
const NECK_RANGE: std::ops::Range<usize> = 14..17;
const TILT: usize = 17;
const LEFT_PAN: usize = 18;
const RIGHT_PAN: usize = 19;

/// Pixel observation of one arm end-effector in one eye. `pixel` is present
/// only when the true projection is inside the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelObservation {
    pub arm: Arm,
    pub eye: Eye,
    pub visible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<PixelPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    /// Commanded contact point (mm, Root frame).
    pub target: [f64; 3],
    pub theta: Vec<f64>,
    /// Ground-truth left palm and right fingertip positions at generation.
    pub la_position: [f64; 3],
    pub ra_position: [f64; 3],
    /// Contact measurement error, subtracted in the touch residual.
    pub contact_noise: [f64; 3],
    pub observations: Vec<PixelObservation>,
}

impl PoseSample {
    /// Full 8-joint left or right arm vector (leading frozen joint = 0).
    pub fn arm_angles(&self, arm: Arm) -> [f64; 8] {
        let range = match arm {
            Arm::Left => LA_RANGE,
            Arm::Right => RA_RANGE,
        };
        let mut q = [0.0; 8];
        q[1..].copy_from_slice(&self.theta[range]);
        q
    }

    /// Full 6-joint eye chain vector (leading frozen joint = 0).
    pub fn eye_angles(&self, eye: Eye) -> [f64; 6] {
        let mut q = [0.0; 6];
        q[1..4].copy_from_slice(&self.theta[NECK_RANGE]);
        q[4] = self.theta[TILT];
        q[5] = match eye {
            Eye::Left => self.theta[LEFT_PAN],
            Eye::Right => self.theta[RIGHT_PAN],
        };
        q
    }

    pub fn observation(&self, arm: Arm, eye: Eye) -> Option<&PixelObservation> {
        self.observations.iter().find(|o| o.arm == arm && o.eye == eye)
    }

    pub fn pixel(&self, arm: Arm, eye: Eye) -> Option<&PixelPoint> {
        self.observation(arm, eye).and_then(|o| o.pixel.as_ref())
    }

    pub fn contact_noise(&self) -> Vector3<f64> {
        Vector3::from(self.contact_noise)
    }

    /// Generation-time discrepancy `X_RA - X_LA`.
    pub fn contact_discrepancy(&self) -> Vector3<f64> {
        Vector3::from(self.ra_position) - Vector3::from(self.la_position)
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.theta.len() != THETA_LEN {
            return Err(format!(
                "joint vector has {} entries, expected {THETA_LEN}",
                self.theta.len()
            ));
        }
        let finite = self
            .theta
            .iter()
            .chain(&self.target)
            .chain(&self.la_position)
            .chain(&self.ra_position)
            .chain(&self.contact_noise)
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite value".into());
        }
        for o in &self.observations {
            if o.pixel.is_some() != o.visible {
                return Err(format!("{}-{} pixel presence disagrees with visibility", o.arm, o.eye));
            }
        }
        Ok(())
    }
}

/// Measurement noise standard deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-axis std of the contact point (mm).
    pub sigma_touch: f64,
    /// Per-coordinate std of pixel observations (px).
    pub sigma_camera: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        sigma_touch: 0.0,
        sigma_camera: 0.0,
    };

    pub fn new(sigma_touch: f64, sigma_camera: f64) -> Self {
        Self {
            sigma_touch,
            sigma_camera,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_touch == 0.0 && self.sigma_camera == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_touch >= 0.0 && self.sigma_camera >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("noise sigmas must be >= 0, got {self:?}")))
        }
    }
}

impl fmt::Display for NoiseSpec {
    /// `<camera px>E<touch mm>T`, e.g. `5E2T`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}E{}T", self.sigma_camera, self.sigma_touch)
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("noise label `{s}` is not <px>E<mm>T"));
        let body = s.trim().strip_suffix('T').ok_or_else(bad)?;
        let (cam, touch) = body.split_once('E').ok_or_else(bad)?;
        let spec = NoiseSpec::new(touch.parse().map_err(|_| bad())?, cam.parse().map_err(|_| bad())?);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// [`crate::kinematics::model_hash`] of the generating model.
    pub model_hash: String,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub samples: Vec<PoseSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<PoseSample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn visibility(&self) -> VisibilityStats {
        let mut stats = VisibilityStats {
            samples: self.samples.len(),
            ..Default::default()
        };
        for s in &self.samples {
            let seen = |arm| {
                Eye::BOTH
                    .iter()
                    .filter(|&&e| s.observation(arm, e).is_some_and(|o| o.visible))
                    .count()
            };
            match seen(Arm::Left) {
                2 => stats.left_both += 1,
                1 => stats.left_one += 1,
                _ => {}
            }
            match seen(Arm::Right) {
                2 => stats.right_both += 1,
                1 => stats.right_one += 1,
                _ => {}
            }
        }
        stats
    }
}

/// In-frame counts per arm (there is no occlusion model).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityStats {
    pub samples: usize,
    pub left_both: usize,
    pub left_one: usize,
    pub right_both: usize,
    pub right_one: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_labels() {
        let n: NoiseSpec = "10E2T".parse().unwrap();
        assert_eq!(n, NoiseSpec::new(2.0, 10.0));
        assert_eq!(n.to_string(), "10E2T");
        assert!("5E5".parse::<NoiseSpec>().is_err());
        assert!("-1E5T".parse::<NoiseSpec>().is_err());
    }

    #[test]
    fn joint_layout() {
        let s = PoseSample {
            target: [0.0; 3],
            theta: (0..20).map(|v| v as f64).collect(),
            la_position: [0.0; 3],
            ra_position: [0.0; 3],
            contact_noise: [0.0; 3],
            observations: vec![],
        };
        assert_eq!(s.arm_angles(Arm::Left), [0., 0., 1., 2., 3., 4., 5., 6.]);
        assert_eq!(s.arm_angles(Arm::Right), [0., 7., 8., 9., 10., 11., 12., 13.]);
        assert_eq!(s.eye_angles(Eye::Left), [0., 14., 15., 16., 17., 18.]);
        assert_eq!(s.eye_angles(Eye::Right), [0., 14., 15., 16., 17., 19.]);
    }
}
