use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_scaled, LeastSquaresProblem, SolveReport, SolverSettings};
use crate::dataset::PoseSample;
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::observability::{rank_of, singular_values};
use crate::params::{pack, unpack, ParameterMask};
use crate::residuals::{assemble, jacobian_at, ChainCombo, MuPolicy};

/// Least-squares problem over the free parameters of `mask`, starting from
/// `model` (which supplies every frozen value).
pub struct CalibrationProblem<'a> {
    pub model: &'a RobotModel,
    pub mask: &'a ParameterMask,
    pub samples: &'a [PoseSample],
    pub combo: &'a ChainCombo,
    pub mu: MuPolicy,
    behind_camera: AtomicUsize,
}

impl<'a> CalibrationProblem<'a> {
    pub fn new(
        model: &'a RobotModel,
        mask: &'a ParameterMask,
        samples: &'a [PoseSample],
        combo: &'a ChainCombo,
    ) -> Self {
        Self {
            model,
            mask,
            samples,
            combo,
            mu: MuPolicy::Current,
            behind_camera: AtomicUsize::new(0),
        }
    }

    pub fn with_mu(mut self, mu: MuPolicy) -> Self {
        self.mu = mu;
        self
    }

    pub fn initial(&self) -> Vec<f64> {
        pack(self.model, self.mask).values
    }

    pub fn model_at(&self, x: &[f64]) -> Result<RobotModel> {
        unpack(self.model, self.mask, x)
    }

    /// Sentinel residuals seen by [`LeastSquaresProblem::residuals`] so far.
    pub fn behind_camera(&self) -> usize {
        self.behind_camera.load(Ordering::Relaxed)
    }
}

impl LeastSquaresProblem for CalibrationProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.model_at(x.as_slice())?;
        let r = assemble(&m, self.samples, self.combo, &self.mu)?;
        self.behind_camera.fetch_add(r.behind_camera, Ordering::Relaxed);
        Ok(r.values)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        jacobian_at(self.model, self.mask, self.samples, self.combo, &self.mu, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSolve {
    #[serde(skip)]
    pub model: Option<RobotModel>,
    pub report: SolveReport,
    /// Numerical rank of the identification Jacobian at the solution.
    pub rank: usize,
    pub free_parameters: usize,
    pub residual_dim: usize,
    pub warnings: Vec<String>,
}

impl SubsetSolve {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.free_parameters
    }

    pub fn calibrated(&self) -> &RobotModel {
        self.model.as_ref().expect("calibrated model present")
    }
}

/// Estimates the free parameters of `mask` from `samples` with `combo`,
/// starting at `model`. `mu` is recomputed from the estimate at every evaluation.
pub fn solve_subset(
    model: &RobotModel,
    mask: &ParameterMask,
    samples: &[PoseSample],
    combo: &ChainCombo,
    settings: &SolverSettings,
) -> Result<SubsetSolve> {
    solve_problem(&CalibrationProblem::new(model, mask, samples, combo), settings)
}

pub fn solve_problem(problem: &CalibrationProblem<'_>, settings: &SolverSettings) -> Result<SubsetSolve> {
    let n = problem.mask.free_count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    if problem.samples.is_empty() {
        return Err(Error::InsufficientSamples {
            requested: 1,
            available: 0,
        });
    }
    let x0 = problem.initial();
    let mut report = solve_scaled(problem, &x0, settings, None)?;
    report.behind_camera = problem.behind_camera();
    let x = DVector::from_column_slice(&report.params);
    let jac = problem.jacobian(&x)?;
    let sv = singular_values(&jac);
    let rank = rank_of(&sv, jac.nrows(), jac.ncols());
    let mut warnings = Vec::new();
    if jac.nrows() < n {
        warnings.push(format!(
            "underdetermined: {} residuals for {n} free parameters",
            jac.nrows()
        ));
    }
    if rank < n {
        warnings.push(format!("rank-deficient Jacobian: rank {rank} < {n} free parameters"));
    }
    if report.behind_camera > 0 {
        warnings.push(format!(
            "{} behind-camera residuals during the solve",
            report.behind_camera
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SubsetSolve {
        model: Some(problem.model_at(&report.params)?),
        residual_dim: jac.nrows(),
        free_parameters: n,
        rank,
        warnings,
        report,
    })
}
