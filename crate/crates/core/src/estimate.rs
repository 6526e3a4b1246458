//! Ridge-regularised least-squares identification of `θ = (A, B)` from the
//! episode statistics `U`, `V`.

use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, ModelTheta};
use crate::sde::SuffStats;

/// How the ridge term enters the normal equations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeScaling {
    /// `θ̂ᵀ = (U + I/m)⁻¹ V` with episode-averaged `U`, `V`.
    #[default]
    Averaged,
    /// Identity added to the episode-summed Gram matrix:
    /// `θ̂ᵀ = (Σ U_i + I)⁻¹ Σ V_i = (U + I/m²)⁻¹ V`.
    Summed,
}

impl RidgeScaling {
    pub fn shift(self, m: usize) -> f64 {
        let m = m as f64;
        match self {
            RidgeScaling::Averaged => 1.0 / m,
            RidgeScaling::Summed => 1.0 / (m * m),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub theta: ModelTheta,
    /// Spectral condition number of the ridge-shifted `U`.
    pub condition_number: f64,
    /// Smallest eigenvalue of `U` itself (identifiability diagnostic).
    pub lambda_min: f64,
    pub m: usize,
}

/// `θ̂ᵀ = (U + I/m)⁻¹ V`.
pub fn lse(stats: &SuffStats) -> Result<Estimate> {
    lse_with(stats, RidgeScaling::Averaged)
}

pub fn lse_with(stats: &SuffStats, scaling: RidgeScaling) -> Result<Estimate> {
    if stats.m == 0 {
        return Err(Error::InvalidArgument("statistics from zero episodes".into()));
    }
    let d = stats.u.nrows();
    let n = stats.v.ncols();
    if stats.u.ncols() != d || stats.v.nrows() != d || n == 0 || n >= d {
        return Err(Error::Dimension(format!(
            "U is {:?} and V is {:?}",
            stats.u.shape(),
            stats.v.shape()
        )));
    }
    let lambda = scaling.shift(stats.m);
    let shifted = &stats.u + Matrix::identity(d, d) * lambda;
    let eig = SymmetricEigen::new(shifted.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let chol = Cholesky::new(shifted)
        .ok_or_else(|| Error::Solve("ridge-shifted U is not positive definite".into()))?;
    let theta_t = chol.solve(&stats.v);
    if theta_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("non-finite parameter estimate".into()));
    }
    let theta = ModelTheta::from_stacked(&theta_t.transpose(), n)?;
    Ok(Estimate {
        theta,
        condition_number: (hi / lo).max(1.0),
        lambda_min: SymmetricEigen::new(stats.u.clone()).eigenvalues.min(),
        m: stats.m,
    })
}

/// Relative Frobenius errors of `Â`, `B̂` and `[Â B̂]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationError {
    pub rel_a: f64,
    pub rel_b: f64,
    pub rel_theta: f64,
    /// Set when some reference norm is zero and the absolute error was
    /// reported in its place.
    pub absolute: bool,
}

pub fn estimation_error(estimate: &ModelTheta, truth: &ModelTheta) -> Result<EstimationError> {
    if estimate.a.shape() != truth.a.shape() || estimate.b.shape() != truth.b.shape() {
        return Err(Error::Dimension("estimate and truth differ in shape".into()));
    }
    let mut absolute = false;
    let mut rel = |diff: f64, reference: f64| {
        if reference == 0.0 {
            absolute = true;
            diff
        } else {
            diff / reference
        }
    };
    let rel_a = rel((&estimate.a - &truth.a).norm(), truth.a.norm());
    let rel_b = rel((&estimate.b - &truth.b).norm(), truth.b.norm());
    let rel_theta = rel(
        (estimate.stacked() - truth.stacked()).norm(),
        truth.stacked().norm(),
    );
    Ok(EstimationError {
        rel_a,
        rel_b,
        rel_theta,
        absolute,
    })
}

/// One line of the estimate ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub update: usize,
    /// `[Â B̂]` flattened row-major.
    pub theta_hat: Vec<f64>,
    pub errors: EstimationError,
    pub condition_number: f64,
    pub m: usize,
}

impl LedgerEntry {
    pub fn new(update: usize, estimate: &Estimate, errors: EstimationError) -> Self {
        let s = estimate.theta.stacked();
        LedgerEntry {
            update,
            theta_hat: s.transpose().iter().copied().collect(),
            errors,
            condition_number: estimate.condition_number,
            m: estimate.m,
        }
    }
}
