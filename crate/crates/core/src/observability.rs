//! Singular-value analysis of the identification Jacobian.
//!
//! `O1 = (s_1 ... s_m)^(1/m) / sqrt(n)` and `O4 = s_m^2 / s_1`, where `m` is
//! the number of free parameters and `n` the number of poses. Singular values
//! missing because the Jacobian has fewer rows than columns count as zero.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::PoseSample;
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::params::ParameterMask;
use crate::residuals::{jacobian, ChainCombo, MuPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    /// Descending, padded with zeros to `free_parameters`.
    pub singular_values: Vec<f64>,
    pub free_parameters: usize,
    pub poses: usize,
    pub residual_dim: usize,
    pub rank: usize,
    pub rank_tolerance: f64,
    pub o1: f64,
    pub o4: f64,
}

impl ObservabilityReport {
    /// Report for a raw Jacobian of `poses` stacked configurations.
    pub fn from_jacobian(jac: &DMatrix<f64>, poses: usize) -> Result<Self> {
        if poses == 0 {
            return Err(Error::InsufficientSamples {
                requested: 1,
                available: 0,
            });
        }
        let m = jac.ncols();
        let mut sv = singular_values(jac);
        sv.resize(m, 0.0);
        let rank_tolerance = rank_tolerance(&sv, jac.nrows(), m);
        let rank = sv.iter().filter(|&&s| s > rank_tolerance).count();
        // Values at or below the rank tolerance are numerically zero.
        let (o1, o4) = if rank < m {
            (0.0, 0.0)
        } else {
            (o1_index(&sv, poses), o4_index(&sv))
        };
        Ok(Self {
            rank,
            o1,
            o4,
            singular_values: sv,
            free_parameters: m,
            poses,
            residual_dim: jac.nrows(),
            rank_tolerance,
        })
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < self.free_parameters
    }

    /// Human-readable note when the problem cannot be fully identified.
    pub fn warning(&self) -> Option<String> {
        if self.residual_dim < self.free_parameters {
            Some(format!(
                "rank deficient: {} residuals for {} free parameters (rank {})",
                self.residual_dim, self.free_parameters, self.rank
            ))
        } else if self.rank_deficient() {
            Some(format!(
                "rank deficient: rank {} < {} free parameters",
                self.rank, self.free_parameters
            ))
        } else {
            None
        }
    }
}

impl fmt::Display for ObservabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "poses {}  residuals {}  free parameters {}  rank {} (tol {:.3e})",
            self.poses, self.residual_dim, self.free_parameters, self.rank, self.rank_tolerance
        )?;
        writeln!(f, "{:>5}  {:>14}", "i", "sigma_i")?;
        for (i, s) in self.singular_values.iter().enumerate() {
            writeln!(f, "{:>5}  {:>14.6e}", i + 1, s)?;
        }
        writeln!(f, "O1 = {:.6e}", self.o1)?;
        write!(f, "O4 = {:.6e}", self.o4)?;
        if let Some(w) = self.warning() {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

/// Singular values in descending order (length `min(rows, cols)`).
pub fn singular_values(jac: &DMatrix<f64>) -> Vec<f64> {
    if jac.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = jac.singular_values().iter().map(|s| s.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `s_1 * max(rows, cols) * eps`.
pub fn rank_tolerance(sv: &[f64], rows: usize, cols: usize) -> f64 {
    sv.first().copied().unwrap_or(0.0) * rows.max(cols) as f64 * f64::EPSILON
}

pub fn rank_of(sv: &[f64], rows: usize, cols: usize) -> usize {
    let tol = rank_tolerance(sv, rows, cols);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Geometric mean of `sv` over `sqrt(n)`, via logarithms.
pub fn o1_index(sv: &[f64], poses: usize) -> f64 {
    if sv.is_empty() || sv.iter().any(|&s| s <= 0.0) {
        return 0.0;
    }
    let mean_log = sv.iter().map(|s| s.ln()).sum::<f64>() / sv.len() as f64;
    mean_log.exp() / (poses as f64).sqrt()
}

/// Smallest squared over largest singular value; 0 for an all-zero spectrum.
pub fn o4_index(sv: &[f64]) -> f64 {
    match (sv.first(), sv.last()) {
        (Some(&s1), Some(&sm)) if s1 > 0.0 => sm * sm / s1,
        _ => 0.0,
    }
}

/// Jacobian of `combo` with respect to the free parameters of `mask`,
/// evaluated at `model`, summarized.
pub fn analyze(
    model: &RobotModel,
    mask: &ParameterMask,
    samples: &[PoseSample],
    combo: &ChainCombo,
) -> Result<ObservabilityReport> {
    if mask.free_count() == 0 {
        return Err(Error::EmptyMask);
    }
    if samples.is_empty() {
        return Err(Error::InsufficientSamples {
            requested: 1,
            available: 0,
        });
    }
    let jac = jacobian(model, mask, samples, combo, &MuPolicy::Current)?;
    ObservabilityReport::from_jacobian(&jac, samples.len())
}
