//! Unbiased aggregation and estimator-variance diagnostics.

use rand::Rng;

use super::draw::{draw_isp_into, draw_rsp_into, validate_rsp_design};
use super::{FeedbackVector, Procedure, SampleOutcome, UpdateMatrix, PROB_FLOOR};
use crate::error::{Error, Result};

/// An importance-weighted aggregate `sum_{i in S} w_i g_i / p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimate: Vec<f64>,
    /// Set when the sampled set was empty (estimate is the zero vector).
    pub empty: bool,
}

/// The unbiased full-sum estimate built from one sampled set.
pub fn aggregate_unbiased(
    outcome: &SampleOutcome,
    weights: &[f64],
    updates: &UpdateMatrix,
) -> Result<Aggregate> {
    if weights.len() != updates.rows() || outcome.probs.len() != updates.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights, {} probabilities, {} update rows",
            weights.len(),
            outcome.probs.len(),
            updates.rows()
        )));
    }
    let mut estimate = vec![0.0; updates.dim()];
    for &i in &outcome.members {
        if i >= updates.rows() {
            return Err(Error::invalid(format!("member index {i} out of range")));
        }
        let scale = weights[i] / outcome.probs[i].clamp(PROB_FLOOR, 1.0);
        for (e, &v) in estimate.iter_mut().zip(updates.row(i)) {
            *e += scale * v;
        }
    }
    Ok(Aggregate {
        estimate,
        empty: outcome.members.is_empty(),
    })
}

/// Exact estimator variance of the independent procedure:
/// `sum_i (1 - p_i) a_i^2 / p_i` with `a_i = lambda_i * norm(g_i)`.
pub fn isp_variance_closed_form(a: &FeedbackVector, p: &[f64]) -> Result<f64> {
    if a.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feedback entries vs {} probabilities",
            a.len(),
            p.len()
        )));
    }
    Ok(a.as_slice()
        .iter()
        .zip(p)
        .map(|(&ai, &pi)| {
            let pi = pi.clamp(PROB_FLOOR, 1.0);
            (1.0 - pi) * ai * ai / pi
        })
        .sum())
}

/// Variance upper bound of the without-replacement procedure:
/// `(N - K)/(N - 1) * sum_i a_i^2 / p_i`.
pub fn rsp_variance_upper_bound(a: &FeedbackVector, p: &[f64], k: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("RSP bound needs N >= 2"));
    }
    if a.len() != p.len() || a.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} feedback entries, {} probabilities, N={n}",
            a.len(),
            p.len()
        )));
    }
    let factor = (n as f64 - k) / (n as f64 - 1.0);
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(p)
        .map(|(&ai, &pi)| ai * ai / pi.clamp(PROB_FLOOR, 1.0))
        .sum();
    Ok(factor * sum)
}

/// Per-trial squared estimator errors `norm(d - sum_i w_i g_i)^2` under
/// repeated draws of the given procedure. The empirical mean estimates the
/// exact estimator variance; draws are unconditioned (an empty independent
/// draw contributes the full-sum error).
pub fn mc_estimator_error<R: Rng + ?Sized>(
    updates: &UpdateMatrix,
    weights: &[f64],
    p: &[f64],
    procedure: Procedure,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if weights.len() != updates.rows() || p.len() != updates.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights, {} probabilities, {} update rows",
            weights.len(),
            p.len(),
            updates.rows()
        )));
    }
    let k = p.iter().sum::<f64>().round() as usize;
    if procedure == Procedure::Rsp {
        validate_rsp_design(p, k)?;
    }
    let full = updates.weighted_sum(weights)?;
    let dim = updates.dim();
    let mut errors = Vec::with_capacity(trials);
    let mut members = Vec::with_capacity(updates.rows());
    let mut perm = Vec::with_capacity(updates.rows());
    let mut estimate = vec![0.0; dim];
    for _ in 0..trials {
        match procedure {
            Procedure::Isp => draw_isp_into(p, rng, &mut members),
            Procedure::Rsp => draw_rsp_into(p, rng, &mut perm, &mut members),
        }
        estimate.iter_mut().for_each(|v| *v = 0.0);
        for &i in &members {
            let scale = weights[i] / p[i].clamp(PROB_FLOOR, 1.0);
            for (e, &v) in estimate.iter_mut().zip(updates.row(i)) {
                *e += scale * v;
            }
        }
        let err: f64 = estimate
            .iter()
            .zip(&full)
            .map(|(&e, &f)| (e - f) * (e - f))
            .sum();
        errors.push(err);
    }
    Ok(errors)
}
