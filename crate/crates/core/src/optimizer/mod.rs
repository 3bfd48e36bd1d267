//! Levenberg-Marquardt for nonlinear least squares.
//!
//! Minimizes `cost(x) = sum_i r_i(x)^2` with the damped normal equations
//! `(J^T J + lambda D) dx = -J^T r`, `D = diag(J^T J)` (floored at a small
//! fraction of its largest entry). `lambda` starts at `initial_damping`, is
//! divided by `damping_down` after an accepted step and multiplied by
//! `damping_up` after a rejected one.

mod subset;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use subset::{solve_problem, solve_subset, CalibrationProblem, SubsetSolve};

pub trait LeastSquaresProblem {
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Adapts a pair of closures to [`LeastSquaresProblem`].
pub struct FnProblem<R, J> {
    pub residuals: R,
    pub jacobian: J,
}

impl<R, J> LeastSquaresProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.residuals)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        (self.jacobian)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop when `|dx| <= step_tolerance * (|x| + step_tolerance)`.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-10,
            initial_damping: 1e-6,
            damping_up: 2.0,
            damping_down: 3.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cost_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    CostTol,
    StepTol,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub params: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Linear solves attempted (accepted and rejected).
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// Behind-camera sentinel residuals produced while solving.
    pub behind_camera: usize,
}

/// Smallest damping weight relative to the largest diagonal of `J^T J`.
const DIAG_FLOOR: f64 = 1e-9;

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn solve<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    settings: &SolverSettings,
) -> Result<SolveReport> {
    settings.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("initial parameters are not finite".into()));
    }
    let mut x = DVector::from_column_slice(x0);
    let mut r = problem.residuals(&x)?;
    if r.is_empty() {
        return Err(Error::Solve("empty residual vector".into()));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("residuals are not finite at the initial estimate".into()));
    }
    let n = x.len();
    let mut cost = sum_sq(&r);
    let initial_cost = cost;
    let mut trace = vec![cost];

    let normal = |x: &DVector<f64>, r: &DVector<f64>| -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        let j = problem.jacobian(x)?;
        if j.nrows() != r.len() || j.ncols() != x.len() {
            return Err(Error::Dimension {
                expected: r.len() * x.len(),
                actual: j.nrows() * j.ncols(),
                context: "jacobian shape",
            });
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve("jacobian is not finite".into()));
        }
        let jtj = j.tr_mul(&j);
        let floor = DIAG_FLOOR * jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let scale = jtj.diagonal().map(|d| d.max(floor));
        Ok((jtj, j.tr_mul(r), scale))
    };

    if n == 0 || cost == 0.0 {
        return Ok(SolveReport {
            params: x.as_slice().to_vec(),
            initial_cost,
            final_cost: cost,
            iterations: 0,
            termination: Termination::CostTol,
            cost_trace: trace,
            behind_camera: 0,
        });
    }

    let (mut jtj, mut grad, mut scale) = normal(&x, &r)?;
    let mut lambda = settings.initial_damping;
    let mut iterations = 0;
    let termination = loop {
        if iterations >= settings.max_iterations {
            break Termination::MaxIter;
        }
        iterations += 1;

        let mut damped = jtj.clone();
        for i in 0..n {
            damped[(i, i)] += lambda * scale[i];
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= settings.damping_up;
            continue;
        };
        let step = chol.solve(&(-&grad));
        if step.norm() <= settings.step_tolerance * (x.norm() + settings.step_tolerance) {
            break Termination::StepTol;
        }
        let candidate = &x + &step;
        let trial = problem
            .residuals(&candidate)
            .ok()
            .filter(|r| r.iter().all(|v| v.is_finite()));
        // |r|^2 - |r_new|^2 as a product of sums avoids cancellation near the optimum.
        let reduction = trial.as_ref().map(|r_new| (&r - r_new).dot(&(&r + r_new)));
        match (trial, reduction) {
            (Some(r_new), Some(actual)) if actual > 0.0 => {
                let decrease = actual / cost;
                x = candidate;
                r = r_new;
                cost = (cost - actual).max(0.0);
                trace.push(cost);
                lambda /= settings.damping_down;
                if cost == 0.0 || decrease < settings.cost_tolerance {
                    break Termination::CostTol;
                }
                (jtj, grad, scale) = normal(&x, &r)?;
            }
            _ => lambda *= settings.damping_up,
        }
    };

    Ok(SolveReport {
        params: x.as_slice().to_vec(),
        initial_cost,
        final_cost: cost,
        iterations,
        termination,
        cost_trace: trace,
        behind_camera: 0,
    })
}

/// Forward-difference Jacobian with a per-parameter step; columns are
/// evaluated in parallel and assembled in index order.
pub fn forward_difference_jacobian<F>(f: F, x: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    assert_eq!(steps.len(), x.len());
    let base = f(x)?;
    let columns: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut xp = x.clone();
            xp[j] += steps[j];
            let h = xp[j] - x[j];
            f(&xp).map(|r| (r - &base) / h)
        })
        .collect::<Result<_>>()?;
    let mut jac = DMatrix::zeros(base.len(), x.len());
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

/// Central-difference Jacobian with a per-parameter half-width; columns are
/// evaluated in parallel and assembled in index order.
pub fn central_difference_jacobian<F>(f: F, x: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    assert_eq!(steps.len(), x.len());
    let columns: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += steps[j];
            xm[j] -= steps[j];
            let h = xp[j] - xm[j];
            Ok((f(&xp)? - f(&xm)?) / h)
        })
        .collect::<Result<_>>()?;
    let rows = columns.first().map_or_else(|| f(x).map(|r| r.len()), |c| Ok(c.len()))?;
    let mut jac = DMatrix::zeros(rows, x.len());
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

/// Optimizes in the scaled variables `z = x / scale`.
pub struct Scaled<'a, P: ?Sized> {
    pub inner: &'a P,
    pub scale: DVector<f64>,
}

impl<P: LeastSquaresProblem + ?Sized> LeastSquaresProblem for Scaled<'_, P> {
    fn residuals(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.residuals(&z.component_mul(&self.scale))
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = self.inner.jacobian(&z.component_mul(&self.scale))?;
        for (c, s) in self.scale.iter().enumerate() {
            j.column_mut(c).scale_mut(*s);
        }
        Ok(j)
    }
}

/// [`solve`] with optional diagonal parameter scaling; `None` is the identity.
pub fn solve_scaled<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    settings: &SolverSettings,
    scale: Option<&[f64]>,
) -> Result<SolveReport> {
    let Some(scale) = scale else {
        return solve(problem, x0, settings);
    };
    if scale.len() != x0.len() || scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::Config(
            "parameter scale must be positive, one per parameter".into(),
        ));
    }
    let scaled = Scaled {
        inner: problem,
        scale: DVector::from_column_slice(scale),
    };
    let z0: Vec<f64> = x0.iter().zip(scale).map(|(x, s)| x / s).collect();
    let mut report = solve(&scaled, &z0, settings)?;
    for (p, s) in report.params.iter_mut().zip(scale) {
        *p *= s;
    }
    Ok(report)
}
