//! Subspace distances, intrinsic dimension, assumption checks and the
//! error-rate formulas evaluated as diagnostics.
//!
//! Logarithms are natural. The rate functions return the bare expression;
//! the hidden constants are applied by callers.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SubspaceEstimate};

fn check_pair(u: &SubspaceEstimate, v: &SubspaceEstimate) -> Result<()> {
    if u.dim_ambient() != v.dim_ambient() || u.dim_subspace() != v.dim_subspace() {
        return Err(Error::DimensionMismatch(format!(
            "subspaces {}x{} and {}x{}",
            u.dim_ambient(),
            u.dim_subspace(),
            v.dim_ambient(),
            v.dim_subspace()
        )));
    }
    Ok(())
}

/// `‖UUᵀ − VVᵀ‖₂`, computed as `σ_max((I − UUᵀ)·V)`.
pub fn subspace_dist2(u: &SubspaceEstimate, v: &SubspaceEstimate) -> Result<f64> {
    check_pair(u, v)?;
    let ub = u.basis();
    let resid = v.basis() - ub * (ub.transpose() * v.basis());
    Ok(linalg::spectral_norm(&resid).min(1.0))
}

/// `‖UUᵀ − VVᵀ‖_F`.
pub fn subspace_dist_f(u: &SubspaceEstimate, v: &SubspaceEstimate) -> Result<f64> {
    check_pair(u, v)?;
    // ‖UUᵀ − VVᵀ‖_F² = 2·‖(I − UUᵀ)V‖_F² for equal-rank orthonormal bases.
    let ub = u.basis();
    let resid = v.basis() - ub * (ub.transpose() * v.basis());
    Ok((2.0 * resid.norm_squared()).sqrt())
}

/// `trace(A) / ‖A‖₂` of a PSD matrix.
pub fn intdim(a: &Matrix) -> Result<f64> {
    let vals = linalg::symmetric_eigenvalues(a)?;
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let min = vals.last().copied().unwrap_or(0.0);
    if min < -1e-10 * top.max(1.0) {
        return Err(Error::NotPsd(min));
    }
    Ok(a.trace() / top)
}

/// Parameters of the high-probability rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub delta: f64,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub r_star: f64,
    /// Failure probability.
    pub p: f64,
    /// Almost-sure bound `‖x‖₂ ≤ √b`.
    pub b: Option<f64>,
    /// `‖X‖₂`, one under the unit-leading-eigenvalue normalization.
    pub norm_x: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        if self.m < 1 || self.n < 1 || self.d < 1 {
            return Err(Error::InvalidArgument("m, n, d must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidArgument("p must lie in (0, 1)".into()));
        }
        if !(self.r_star >= 1.0) {
            return Err(Error::InvalidArgument("r_star must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rate for almost-surely bounded samples:
/// `√(b²·log(2d/p) / (δ²mn)) + b²·log(2dm/p) / (δ²n)`.
pub fn bound_bounded_case(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let b = inputs.b.ok_or(Error::MissingBound)?;
    let (m, n, d) = (inputs.m as f64, inputs.n as f64, inputs.d as f64);
    let delta2 = inputs.delta * inputs.delta;
    let b2 = b * b;
    let first = (b2 * (2.0 * d / inputs.p).ln() / (delta2 * m * n)).sqrt();
    let second = b2 * (2.0 * d * m / inputs.p).ln() / (delta2 * n);
    Ok(first + second)
}

/// Value of the subgaussian rate plus whether its sample-size precondition
/// `n ≥ (r★ + log(m/p)) / δ²` holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgaussianBound {
    pub value: f64,
    pub precondition_met: bool,
}

/// Subgaussian rate in terms of the intrinsic dimension:
/// `(r★ + log(m/p))/n·(‖X‖₂/δ)² + √((r★ + log(c₁n))/(mn))·‖X‖₂/δ`.
pub fn bound_subgaussian(inputs: &BoundInputs, c1: f64) -> Result<SubgaussianBound> {
    inputs.validate()?;
    if !(c1 > 0.0) {
        return Err(Error::InvalidArgument("c1 must be positive".into()));
    }
    let (m, n) = (inputs.m as f64, inputs.n as f64);
    let kappa = inputs.norm_x / inputs.delta;
    let local = (inputs.r_star + (m / inputs.p).ln()) / n * kappa * kappa;
    let central = ((inputs.r_star + (c1 * n).ln()) / (m * n)).sqrt() * kappa;
    let needed = (inputs.r_star + (m / inputs.p).ln()) / (inputs.delta * inputs.delta);
    Ok(SubgaussianBound {
        value: local + central,
        precondition_met: n >= needed,
    })
}

/// Simplified rate `f = (r★ + log m)/(δ²n) + √((r★ + 2·log n)/(δ²mn))`.
pub fn bound_simplified(r_star: f64, n: f64, m: f64, delta: f64) -> f64 {
    let delta2 = delta * delta;
    (r_star + m.ln()) / (delta2 * n) + ((r_star + 2.0 * n.ln()) / (delta2 * m * n)).sqrt()
}

/// Outcome of checking the deterministic assumptions on a set of local matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    /// `λ_r(X) − λ_{r+1}(X)`.
    pub delta: f64,
    pub eigengap_ok: bool,
    /// `maxᵢ ‖X̂ⁱ − X‖₂`.
    pub max_local_error: f64,
    /// `max_local_error < δ/8`.
    pub local_error_ok: bool,
    /// `‖(1/m)ΣX̂ⁱ − X‖₂`.
    pub mean_error: f64,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.eigengap_ok && self.local_error_ok
    }
}

fn mean_matrix(mats: &[Matrix]) -> Result<Matrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one matrix".into()))?;
    let mut acc = Matrix::zeros(first.nrows(), first.ncols());
    for m in mats {
        if m.shape() != first.shape() {
            return Err(Error::DimensionMismatch("local matrices differ in shape".into()));
        }
        acc += m;
    }
    Ok(acc / mats.len() as f64)
}

fn error_norms(x: &Matrix, x_hats: &[Matrix]) -> Result<(f64, f64)> {
    let mut max_err = 0.0f64;
    for xh in x_hats {
        if xh.shape() != x.shape() {
            return Err(Error::DimensionMismatch(format!(
                "local matrix {:?} vs ground truth {:?}",
                xh.shape(),
                x.shape()
            )));
        }
        max_err = max_err.max(linalg::spectral_norm_symmetric(&(xh - x))?);
    }
    let mean = mean_matrix(x_hats)?;
    let mean_err = linalg::spectral_norm_symmetric(&(mean - x))?;
    Ok((max_err, mean_err))
}

/// Checks the eigengap of `X` at rank `r` and the `‖X̂ⁱ − X‖₂ < δ/8` condition.
pub fn check_assumptions(x: &Matrix, x_hats: &[Matrix], r: usize) -> Result<AssumptionReport> {
    let vals = linalg::symmetric_eigenvalues(x)?;
    if r == 0 || r >= vals.len() {
        return Err(Error::DimensionMismatch(format!(
            "rank {r} for a {}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    let delta = vals[r - 1] - vals[r];
    let (max_local_error, mean_error) = error_norms(x, x_hats)?;
    Ok(AssumptionReport {
        delta,
        eigengap_ok: delta > 0.0,
        max_local_error,
        local_error_ok: delta > 0.0 && max_local_error < delta / 8.0,
        mean_error,
    })
}

/// `δ⁻²·maxᵢ‖X̂ⁱ − X‖₂² + δ⁻¹·‖(1/m)ΣX̂ⁱ − X‖₂`.
pub fn deterministic_bound_rhs(x: &Matrix, x_hats: &[Matrix], delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let (max_err, mean_err) = error_norms(x, x_hats)?;
    Ok(max_err * max_err / (delta * delta) + mean_err / delta)
}
