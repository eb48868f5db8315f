//! Sampling procedures, optimal-probability solvers, and estimator
//! diagnostics for budgeted client selection.
//!
//! Two procedures realize a probability vector `p` with budget
//! `K = sum(p)`:
//!
//! * **ISP** (independent sampling procedure): every client is included by
//!   an independent coin flip with its own probability, so the realized set
//!   size is random with expectation `K`.
//! * **RSP** (random sampling procedure): a fixed-size set of exactly `K`
//!   clients is drawn without replacement, consistent with the same
//!   first-order inclusion probabilities.
//!
//! The solvers minimize the estimator-variance surrogate
//! `sum_i a_i^2 / p_i` subject to `sum p_i = K` and `0 < p_i <= 1`
//! (optionally with a floor `p_min <= p_i`), producing the banded
//! water-filling solution: a floor band, a band proportional to `a_i`, and
//! a band capped at 1.

mod draw;
mod enumerate;
mod estimate;
mod solver;

pub use draw::{draw_isp, draw_isp_nonempty, draw_rsp};
pub use enumerate::{
    enumerate_isp, enumerate_rsp_systematic, IspEnumeration, IspOutcome, RspEnumeration,
    RspOutcome,
};
pub use estimate::{
    aggregate_unbiased, isp_variance_closed_form, mc_estimator_error, rsp_variance_upper_bound,
    Aggregate,
};
pub use solver::{
    cap_probabilities, objective_value, solve_optimal_isp, solve_optimal_isp_with_bands,
    solve_optimal_rsp, solve_restricted_isp, solve_restricted_isp_with_bands, Bands, RspSolution,
};
pub(crate) use solver::{waterfill_restricted_sorted, waterfill_sorted};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before any division.
pub const PROB_FLOOR: f64 = 1e-12;

/// Absolute tolerance on the budget constraint `sum p_i = K`.
pub const BUDGET_TOL: f64 = 1e-8;

/// Which sampling procedure produced (or should produce) a client set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Procedure {
    Isp,
    Rsp,
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Procedure::Isp => write!(f, "ISP"),
            Procedure::Rsp => write!(f, "RSP"),
        }
    }
}

/// Per-client objective weights: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClientWeights {
    lambda: Vec<f64>,
}

impl ClientWeights {
    /// Tolerance on `sum(lambda) == 1`.
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::invalid("client weights must be non-empty"));
        }
        if lambda.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("client weights must be finite and >= 0"));
        }
        let sum: f64 = lambda.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::invalid(format!(
                "client weights must sum to 1 (got {sum})"
            )));
        }
        Ok(Self { lambda })
    }

    /// Weights proportional to per-client dataset sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(Error::invalid("total dataset size is zero"));
        }
        let lambda = sizes.iter().map(|&n| n as f64 / total as f64).collect();
        Self::new(lambda)
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            lambda: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

/// Non-negative solver input, one entry per client (typically
/// `a_i = lambda_i * norm(g_i)`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackVector {
    a: Vec<f64>,
}

impl FeedbackVector {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::invalid("feedback vector must be non-empty"));
        }
        if a.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("feedback entries must be finite and >= 0"));
        }
        Ok(Self { a })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.a.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.a.iter().cloned().fold(0.0, f64::max)
    }

    /// True when at least one entry is strictly positive.
    pub fn any_positive(&self) -> bool {
        self.a.iter().any(|&v| v > 0.0)
    }
}

/// A per-client inclusion-probability vector with its budget `K`.
///
/// Invariants: `0 < p_i <= 1` for all `i` and `sum(p) = K` within
/// [`BUDGET_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionProbabilities {
    p: Vec<f64>,
    budget: f64,
}

impl InclusionProbabilities {
    pub fn new(p: Vec<f64>, budget: f64) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("probability vector must be non-empty"));
        }
        if !(budget >= 1.0 - 1e-12 && budget <= p.len() as f64 + 1e-12) {
            return Err(Error::invalid(format!(
                "budget K={budget} outside [1, {}]",
                p.len()
            )));
        }
        if p.iter().any(|&v| !v.is_finite() || v <= 0.0 || v > 1.0 + 1e-12) {
            return Err(Error::invalid("probabilities must lie in (0, 1]"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - budget).abs() > BUDGET_TOL {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected budget {budget}"
            )));
        }
        Ok(Self { p, budget })
    }

    /// The uniform design `p_i = K/N`.
    pub fn uniform(n: usize, budget: f64) -> Result<Self> {
        Self::new(vec![budget / n as f64; n], budget)
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }
}

/// The realized client subset of one draw, plus the probabilities used.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    /// Distinct client indices, ascending.
    pub members: Vec<usize>,
    /// The inclusion probabilities the draw was made from.
    pub probs: Vec<f64>,
    pub procedure: Procedure,
    /// How many empty draws were rejected before this outcome
    /// (always 0 for the raw one-pass ISP draw and for RSP).
    pub empty_redraws: u32,
}

impl SampleOutcome {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Per-client update vectors of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl UpdateMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            data: vec![0.0; rows * dim],
            rows,
            dim,
        }
    }

    /// Build from per-client vectors; all rows must share one dimension.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("update matrix must have at least one row"));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(
                "update vectors differ in dimension".into(),
            ));
        }
        let n = rows.len();
        let mut data = Vec::with_capacity(n * dim);
        for r in rows {
            data.extend_from_slice(&r);
        }
        Ok(Self { data, rows: n, dim })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Mutable row views for all rows at once (for parallel fills).
    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        self.data.chunks_mut(self.dim)
    }

    /// The full-participation aggregate `sum_i w_i * g_i`.
    pub fn weighted_sum(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.dim];
        for (i, &w) in weights.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_weights_validate() {
        assert!(ClientWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(ClientWeights::new(vec![0.5, 0.6]).is_err());
        assert!(ClientWeights::new(vec![-0.1, 1.1]).is_err());
        let w = ClientWeights::from_sizes(&[30, 10]).unwrap();
        assert_eq!(w.as_slice(), &[0.75, 0.25]);
    }

    #[test]
    fn inclusion_probabilities_validate() {
        assert!(InclusionProbabilities::new(vec![0.25, 0.75, 1.0], 2.0).is_ok());
        // budget violated
        assert!(InclusionProbabilities::new(vec![0.25, 0.75, 1.0], 2.5).is_err());
        // zero probability
        assert!(InclusionProbabilities::new(vec![0.0, 1.0], 1.0).is_err());
        // over one
        assert!(InclusionProbabilities::new(vec![1.2, 0.8], 2.0).is_err());
    }

    #[test]
    fn update_matrix_shape_checks() {
        assert!(UpdateMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        let m = UpdateMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.weighted_sum(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
    }
}
