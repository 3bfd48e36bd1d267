//! Multi-chain kinematic self-calibration of a simulated humanoid upper body.
//!
//! The crate generates self-touch / self-observation datasets from a
//! ground-truth DH model, re-estimates perturbed DH parameters with
//! Levenberg-Marquardt over any combination of closed chains, and reports
//! calibration quality and parameter observability.

pub mod camera;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod kinematics;
pub mod metrics;
pub mod observability;
pub mod optimizer;
pub mod params;
pub mod residuals;

pub use camera::{CameraIntrinsics, PixelPoint};
pub use dataset::{Dataset, NoiseSpec, PoseSample};
pub use error::{Error, Result};
pub use kinematics::{default_icub_model, Arm, ChainId, DhField, Eye, RobotModel};
pub use observability::ObservabilityReport;
pub use optimizer::{SolveReport, SolverSettings, Termination};
pub use params::{ParamKey, ParameterMask, Selection};
pub use residuals::{ChainCombo, MuPolicy};
