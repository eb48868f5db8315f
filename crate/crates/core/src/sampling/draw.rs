//! Realizing inclusion probabilities as client sets.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{InclusionProbabilities, Procedure, SampleOutcome};
use crate::error::{Error, Result};

/// One independent coin flip per client. The realized size is random with
/// expectation `K`; the empty outcome is possible and left to the caller
/// (the training loop uses [`draw_isp_nonempty`], Monte-Carlo estimator
/// studies must use this unconditioned draw).
pub fn draw_isp<R: Rng + ?Sized>(p: &InclusionProbabilities, rng: &mut R) -> SampleOutcome {
    let mut members = Vec::new();
    draw_isp_into(p.probs(), rng, &mut members);
    SampleOutcome {
        members,
        probs: p.probs().to_vec(),
        procedure: Procedure::Isp,
        empty_redraws: 0,
    }
}

/// Independent draw, redrawing (up to `max_attempts`) while the outcome is
/// empty so an aggregation round always has participants. The number of
/// rejected empty draws is recorded in `empty_redraws`; if every attempt
/// came up empty the final empty outcome is returned.
pub fn draw_isp_nonempty<R: Rng + ?Sized>(
    p: &InclusionProbabilities,
    rng: &mut R,
    max_attempts: u32,
) -> SampleOutcome {
    let mut members = Vec::new();
    let mut redraws = 0;
    for _ in 0..max_attempts.max(1) {
        draw_isp_into(p.probs(), rng, &mut members);
        if !members.is_empty() {
            break;
        }
        redraws += 1;
    }
    SampleOutcome {
        members,
        probs: p.probs().to_vec(),
        procedure: Procedure::Isp,
        empty_redraws: redraws,
    }
}

pub(crate) fn draw_isp_into<R: Rng + ?Sized>(p: &[f64], rng: &mut R, members: &mut Vec<usize>) {
    members.clear();
    for (i, &pi) in p.iter().enumerate() {
        if rng.random::<f64>() < pi {
            members.push(i);
        }
    }
}

/// Fixed-size draw of exactly `k` distinct clients whose first-order
/// inclusion frequencies equal `p`, via systematic proportional-to-size
/// sampling: the client order is randomly permuted, a uniform start
/// `u ~ U(0,1)` is drawn, and the grid `u, u+1, ..., u+k-1` is intersected
/// with the cumulative-sum intervals.
///
/// Requires an integer budget (`sum p = k`) and `0 < p_i <= 1`.
pub fn draw_rsp<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> Result<SampleOutcome> {
    validate_rsp_design(p, k)?;
    let mut perm: Vec<usize> = (0..p.len()).collect();
    let mut members = Vec::with_capacity(k);
    draw_rsp_into(p, rng, &mut perm, &mut members);
    debug_assert_eq!(members.len(), k);
    Ok(SampleOutcome {
        members,
        probs: p.to_vec(),
        procedure: Procedure::Rsp,
        empty_redraws: 0,
    })
}

pub(crate) fn validate_rsp_design(p: &[f64], k: usize) -> Result<()> {
    if p.is_empty() || k == 0 {
        return Err(Error::invalid("RSP needs a non-empty design and k >= 1"));
    }
    if p.iter().any(|&v| !(v > 0.0) || v > 1.0 + 1e-9) {
        return Err(Error::invalid(
            "RSP probabilities must lie in (0, 1]; cap over-one entries first",
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - k as f64).abs() > 1e-6 * (k as f64).max(1.0) {
        return Err(Error::invalid(format!(
            "RSP requires an integer budget: sum(p)={sum} vs k={k}"
        )));
    }
    Ok(())
}

pub(crate) fn draw_rsp_into<R: Rng + ?Sized>(
    p: &[f64],
    rng: &mut R,
    perm: &mut Vec<usize>,
    members: &mut Vec<usize>,
) {
    members.clear();
    perm.clear();
    perm.extend(0..p.len());
    perm.shuffle(rng);
    let u: f64 = rng.random();
    // Client at permuted position j covers [cum, cum + p_j); it is selected
    // iff that interval contains a grid point u + m. Since p_j <= 1 the
    // interval holds at most one grid point.
    let mut cum = 0.0;
    for &idx in perm.iter() {
        let hits = (cum + p[idx] - u).floor() - (cum - u).floor();
        if hits >= 1.0 {
            members.push(idx);
        }
        cum += p[idx];
    }
    members.sort_unstable();
}
