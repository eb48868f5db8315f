//! Closed-form inclusion-probability solvers.
//!
//! All solvers minimize `sum_i a_i^2 / p_i` over the budgeted box
//! `{ sum p_i = K, lo <= p_i <= 1 }`. The KKT conditions give a banded
//! ("water-filling") solution: entries with large `a_i` sit at the cap 1,
//! entries with small `a_i` sit at the floor, and the middle band is
//! proportional to `a_i`. Band boundaries are located by scanning the
//! feedback sorted ascending; outputs are un-permuted back to client order.

use super::{FeedbackVector, InclusionProbabilities, BUDGET_TOL, PROB_FLOOR};
use crate::error::{Error, Result};

/// Band sizes of a solver output: `floor + proportional + capped == N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bands {
    /// Entries held at the floor (`p_min`, or the numerical floor for
    /// zero-feedback entries when `p_min == 0`).
    pub floor: usize,
    /// Entries proportional to their feedback.
    pub proportional: usize,
    /// Entries capped at probability 1.
    pub capped: usize,
}

/// Uncapped proportional solution for the random sampling procedure:
/// `p_i = K * a_i / sum(a)`. Entries may exceed 1; `over_one` is set when
/// any do (cap with [`cap_probabilities`] before drawing).
#[derive(Debug, Clone, PartialEq)]
pub struct RspSolution {
    pub p: Vec<f64>,
    pub over_one: bool,
}

fn validate_inputs(a: &FeedbackVector, k: f64) -> Result<()> {
    let n = a.len() as f64;
    if !(1.0 - 1e-12..=n + 1e-12).contains(&k) {
        return Err(Error::invalid(format!(
            "budget K={k} outside [1, {n}]"
        )));
    }
    if !a.any_positive() {
        return Err(Error::invalid("feedback vector is all-zero"));
    }
    Ok(())
}

/// Ascending stable argsort by `(a_i, i)`.
fn sort_order(a: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap().then(i.cmp(&j)));
    order
}

/// Water-fill strictly positive values sorted ascending with budget
/// `k in (0, n]`. Returns probabilities in the sorted order and the size
/// `l` of the proportional band (entries above `l` sit at the cap).
pub(crate) fn waterfill_sorted(sorted: &[f64], k: f64) -> (Vec<f64>, usize) {
    let n = sorted.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    // Largest l with 0 < K + l - N <= prefix(l) / a_l. Guaranteed to exist:
    // at l = floor(N - K) + 1 the left side lies in (0, 1].
    let mut l = n;
    loop {
        let z = k + l as f64 - n as f64;
        if z > 0.0 && z * sorted[l - 1] <= prefix[l] {
            break;
        }
        l -= 1;
        debug_assert!(l >= 1, "no proportional band found");
    }
    let z = k + l as f64 - n as f64;
    let c = prefix[l];
    let mut p = vec![1.0; n];
    for i in 0..l {
        p[i] = (z * sorted[i] / c).clamp(PROB_FLOOR, 1.0);
    }
    (p, l)
}

/// Water-fill with an active floor `p_min > 0`; values sorted ascending,
/// zeros allowed. Returns probabilities in sorted order plus the band
/// boundaries `(l1, l2)`: entries `< l1` at the floor, `[l1, l2)`
/// proportional, `>= l2` capped at 1.
pub(crate) fn waterfill_restricted_sorted(
    sorted: &[f64],
    k: f64,
    p_min: f64,
) -> Result<(Vec<f64>, usize, usize)> {
    let n = sorted.len();
    let nf = n as f64;
    // Degenerate all-floor design (p_min == K/N).
    if (nf * p_min - k).abs() <= BUDGET_TOL {
        return Ok((vec![p_min; n], n, n));
    }
    let mut prefix = vec![0.0; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let tol = 1e-9 * p_min.max(1.0);
    for l1 in 0..n {
        let b = k - l1 as f64 * p_min; // mass left for the suffix
        let m = n - l1; // suffix length
        if b > m as f64 + 1e-12 {
            // suffix cannot absorb the remaining mass; smaller floors only
            break;
        }
        // Cap scan on the suffix (same rule as the unrestricted solver).
        let mut l = m;
        let mut found = false;
        while l >= 1 {
            let z = b + l as f64 - m as f64;
            let c = prefix[l1 + l] - prefix[l1];
            if z > 0.0 && c > 0.0 && z * sorted[l1 + l - 1] <= c {
                found = true;
                break;
            }
            l -= 1;
        }
        if !found {
            continue;
        }
        let z = b + l as f64 - m as f64;
        let c = prefix[l1 + l] - prefix[l1];
        // Lowest proportional entry must clear the floor...
        if z * sorted[l1] / c < p_min - tol {
            continue;
        }
        // ...and the largest floored entry must not want more than the floor.
        if l1 > 0 && z * sorted[l1 - 1] / c > p_min + tol {
            continue;
        }
        let l2 = l1 + l;
        let mut p = vec![1.0; n];
        for v in p.iter_mut().take(l1) {
            *v = p_min;
        }
        for i in l1..l2 {
            p[i] = (z * sorted[i] / c).clamp(p_min, 1.0);
        }
        return Ok((p, l1, l2));
    }
    Err(Error::NumericalAbort(format!(
        "restricted water-filling found no consistent bands (n={n}, K={k}, p_min={p_min})"
    )))
}

/// Solution shared by the optimal and floor-restricted ISP solvers once the
/// feedback has been validated. `p_min == 0` uses the numerical-floor rule
/// for zero-feedback entries; `p_min > 0` runs the three-band solve.
fn solve_isp_inner(a: &[f64], k: f64, p_min: f64) -> Result<(Vec<f64>, Bands)> {
    let n = a.len();
    let order = sort_order(a);
    let sorted: Vec<f64> = order.iter().map(|&i| a[i]).collect();

    let (p_sorted, bands) = if p_min > 0.0 {
        let (p, l1, l2) = waterfill_restricted_sorted(&sorted, k, p_min)?;
        (
            p,
            Bands {
                floor: l1,
                proportional: l2 - l1,
                capped: n - l2,
            },
        )
    } else {
        // Zero-feedback entries get the numerical floor; the positive band
        // is water-filled with the residual mass.
        let n_zero = sorted.iter().take_while(|&&v| v == 0.0).count();
        if n_zero == 0 {
            let (p, l) = waterfill_sorted(&sorted, k);
            (
                p,
                Bands {
                    floor: 0,
                    proportional: l,
                    capped: n - l,
                },
            )
        } else {
            let n_pos = n - n_zero;
            let residual = k - n_zero as f64 * PROB_FLOOR;
            let mut p = vec![PROB_FLOOR; n];
            if residual <= n_pos as f64 {
                let (pp, l) = waterfill_sorted(&sorted[n_zero..], residual);
                p[n_zero..].copy_from_slice(&pp);
                (
                    p,
                    Bands {
                        floor: n_zero,
                        proportional: l,
                        capped: n_pos - l,
                    },
                )
            } else {
                // Positive band saturates at 1; zero-feedback entries share
                // the leftover mass (the objective is indifferent to them).
                let spare = (k - n_pos as f64) / n_zero as f64;
                for v in p.iter_mut().take(n_zero) {
                    *v = spare.clamp(PROB_FLOOR, 1.0);
                }
                for v in p.iter_mut().skip(n_zero) {
                    *v = 1.0;
                }
                (
                    p,
                    Bands {
                        floor: n_zero,
                        proportional: 0,
                        capped: n_pos,
                    },
                )
            }
        }
    };

    let mut p = vec![0.0; n];
    for (pos, &client) in order.iter().enumerate() {
        p[client] = p_sorted[pos];
    }
    Ok((p, bands))
}

/// Minimize `sum a_i^2 / p_i` over `{sum p = K, 0 < p_i <= 1}` for the
/// independent sampling procedure.
pub fn solve_optimal_isp(a: &FeedbackVector, k: f64) -> Result<InclusionProbabilities> {
    solve_optimal_isp_with_bands(a, k).map(|(p, _)| p)
}

/// As [`solve_optimal_isp`], also reporting the band sizes.
pub fn solve_optimal_isp_with_bands(
    a: &FeedbackVector,
    k: f64,
) -> Result<(InclusionProbabilities, Bands)> {
    validate_inputs(a, k)?;
    let (p, bands) = solve_isp_inner(a.as_slice(), k, 0.0)?;
    Ok((InclusionProbabilities::new(p, k)?, bands))
}

/// Minimize the same objective over the floor-restricted space
/// `{sum p = K, p_min <= p_i <= 1}`. `p_min = 0` reduces exactly to
/// [`solve_optimal_isp`].
pub fn solve_restricted_isp(
    a: &FeedbackVector,
    k: f64,
    p_min: f64,
) -> Result<InclusionProbabilities> {
    solve_restricted_isp_with_bands(a, k, p_min).map(|(p, _)| p)
}

/// As [`solve_restricted_isp`], also reporting the band sizes.
pub fn solve_restricted_isp_with_bands(
    a: &FeedbackVector,
    k: f64,
    p_min: f64,
) -> Result<(InclusionProbabilities, Bands)> {
    validate_inputs(a, k)?;
    let n = a.len() as f64;
    if !(0.0..=1.0).contains(&p_min) || p_min * n > k + 1e-12 {
        return Err(Error::invalid(format!(
            "floor p_min={p_min} is infeasible for K={k}, N={n}"
        )));
    }
    let (p, bands) = solve_isp_inner(a.as_slice(), k, p_min)?;
    Ok((InclusionProbabilities::new(p, k)?, bands))
}

/// The proportional solution `p_i = K a_i / sum(a)` for the random sampling
/// procedure, returned verbatim (entries may exceed 1).
pub fn solve_optimal_rsp(a: &FeedbackVector, k: f64) -> Result<RspSolution> {
    validate_inputs(a, k)?;
    let total = a.sum();
    let p: Vec<f64> = a.as_slice().iter().map(|&v| k * v / total).collect();
    let over_one = p.iter().any(|&v| v > 1.0);
    Ok(RspSolution { p, over_one })
}

/// The variance surrogate `sum a_i^2 / p_i` (probabilities clamped to
/// `[PROB_FLOOR, 1]` before division).
pub fn objective_value(a: &FeedbackVector, p: &InclusionProbabilities) -> Result<f64> {
    objective_value_raw(a.as_slice(), p.probs())
}

pub(crate) fn objective_value_raw(a: &[f64], p: &[f64]) -> Result<f64> {
    if a.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feedback entries vs {} probabilities",
            a.len(),
            p.len()
        )));
    }
    Ok(a.iter()
        .zip(p)
        .map(|(&ai, &pi)| ai * ai / pi.clamp(PROB_FLOOR, 1.0))
        .sum())
}

/// Cap entries at 1 and renormalize the remainder so the vector is a valid
/// fixed-size design summing to `budget`. Returns the capped vector and a
/// flag recording whether any entry had to be capped.
pub fn cap_probabilities(p: &[f64], budget: f64) -> Result<(Vec<f64>, bool)> {
    if p.is_empty() {
        return Err(Error::invalid("probability vector must be non-empty"));
    }
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::invalid("probabilities must be finite and >= 0"));
    }
    let n = p.len();
    if !(1.0 - 1e-12..=n as f64 + 1e-12).contains(&budget) {
        return Err(Error::invalid(format!(
            "budget K={budget} outside [1, {n}]"
        )));
    }
    let mut out: Vec<f64> = p.to_vec();
    let mut capped = vec![false; n];
    let mut flagged = false;
    loop {
        let mut newly = false;
        for (i, v) in out.iter_mut().enumerate() {
            if !capped[i] && *v >= 1.0 {
                *v = 1.0;
                capped[i] = true;
                newly = true;
                flagged = true;
            }
        }
        let n_capped = capped.iter().filter(|&&c| c).count();
        let residual = budget - n_capped as f64;
        let free: f64 = out
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|(&v, _)| v)
            .sum();
        if n_capped < n {
            if free <= 0.0 {
                return Err(Error::invalid(
                    "cannot renormalize: uncapped mass is zero",
                ));
            }
            let scale = residual / free;
            for (v, &c) in out.iter_mut().zip(&capped) {
                if !c {
                    *v *= scale;
                }
            }
        }
        if !newly {
            break;
        }
    }
    for v in out.iter_mut() {
        *v = v.clamp(PROB_FLOOR, 1.0);
    }
    Ok((out, flagged))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(a: &[f64]) -> FeedbackVector {
        FeedbackVector::new(a.to_vec()).unwrap()
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (i, (&a, &e)) in actual.iter().zip(expected).enumerate() {
            assert!(
                (a - e).abs() <= tol,
                "entry {i}: got {a}, expected {e}"
            );
        }
    }

    #[test]
    fn isp_three_client_case() {
        let p = solve_optimal_isp(&fv(&[1.0, 3.0, 6.0]), 2.0).unwrap();
        assert_close(p.probs(), &[0.25, 0.75, 1.0], 1e-15);
    }

    #[test]
    fn isp_symmetric_case() {
        let c = 0.37;
        let p = solve_optimal_isp(&fv(&[c, c, c, c]), 2.0).unwrap();
        assert_close(p.probs(), &[0.5; 4], 1e-15);
    }

    #[test]
    fn isp_full_participation() {
        let p = solve_optimal_isp(&fv(&[1.0, 3.0, 6.0]), 3.0).unwrap();
        assert_close(p.probs(), &[1.0; 3], 1e-15);
    }

    #[test]
    fn isp_unpermutes_to_client_order() {
        let p = solve_optimal_isp(&fv(&[6.0, 1.0, 3.0]), 2.0).unwrap();
        assert_close(p.probs(), &[1.0, 0.25, 0.75], 1e-15);
    }

    #[test]
    fn isp_zero_feedback_entries_get_floor() {
        let p = solve_optimal_isp(&fv(&[0.0, 1.0, 3.0, 6.0]), 2.0).unwrap();
        assert!(p.probs()[0] <= PROB_FLOOR * 1.01 && p.probs()[0] > 0.0);
        // remaining mass water-filled over the positive band
        let residual = 2.0 - p.probs()[0];
        let (expect, _) = waterfill_sorted(&[1.0, 3.0, 6.0], residual);
        assert_close(&p.probs()[1..], &expect, 1e-12);
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 2.0).abs() < BUDGET_TOL);
    }

    #[test]
    fn isp_zero_entries_absorb_leftover_when_positives_saturate() {
        let p = solve_optimal_isp(&fv(&[0.0, 0.0, 5.0]), 2.0).unwrap();
        assert_close(p.probs(), &[0.5, 0.5, 1.0], 1e-12);
    }

    #[test]
    fn isp_rejects_bad_inputs() {
        assert!(solve_optimal_isp(&fv(&[1.0, 2.0]), 0.5).is_err());
        assert!(solve_optimal_isp(&fv(&[1.0, 2.0]), 3.0).is_err());
        assert!(solve_optimal_isp(&fv(&[0.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn rsp_three_client_case() {
        let s = solve_optimal_rsp(&fv(&[1.0, 3.0, 6.0]), 2.0).unwrap();
        assert_close(&s.p, &[0.2, 0.6, 1.2], 1e-15);
        assert!(s.over_one);
    }

    #[test]
    fn rsp_uniform_feedback() {
        let s = solve_optimal_rsp(&fv(&[2.0; 5]), 3.0).unwrap();
        assert_close(&s.p, &[0.6; 5], 1e-15);
        assert!(!s.over_one);
    }

    #[test]
    fn rsp_and_isp_coincide_at_unit_budget() {
        let s = solve_optimal_rsp(&fv(&[1.0, 3.0, 6.0]), 1.0).unwrap();
        assert_close(&s.p, &[0.1, 0.3, 0.6], 1e-15);
        let p = solve_optimal_isp(&fv(&[1.0, 3.0, 6.0]), 1.0).unwrap();
        assert_close(p.probs(), &s.p, 1e-15);
    }

    #[test]
    fn restricted_reduces_to_optimal_at_zero_floor() {
        let a = fv(&[0.4, 1.9, 0.4, 7.0, 2.2]);
        let p0 = solve_restricted_isp(&a, 3.0, 0.0).unwrap();
        let p1 = solve_optimal_isp(&a, 3.0).unwrap();
        assert_close(p0.probs(), p1.probs(), 1e-10);
    }

    #[test]
    fn restricted_floor_inactive_under_symmetry() {
        let p = solve_restricted_isp(&fv(&[1.0; 4]), 2.0, 0.3).unwrap();
        assert_close(p.probs(), &[0.5; 4], 1e-15);
    }

    #[test]
    fn restricted_floor_binds_on_small_entry() {
        // Hand-solved KKT system: the floor takes clients 1 and 2 (the
        // second lands exactly at the floor), mass 0.6 goes proportional
        // to the third, the largest is capped.
        let (p, bands) =
            solve_restricted_isp_with_bands(&fv(&[0.01, 1.0, 3.0, 6.0]), 2.0, 0.2).unwrap();
        assert_close(p.probs(), &[0.2, 0.2, 0.6, 1.0], 1e-12);
        assert_eq!(bands.floor + bands.proportional + bands.capped, 4);
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 2.0).abs() < BUDGET_TOL);
    }

    #[test]
    fn restricted_rejects_infeasible_floor() {
        assert!(solve_restricted_isp(&fv(&[1.0, 2.0]), 1.0, 0.6).is_err());
    }

    #[test]
    fn restricted_all_floor_design() {
        let p = solve_restricted_isp(&fv(&[1.0, 2.0, 3.0, 4.0]), 2.0, 0.5).unwrap();
        assert_close(p.probs(), &[0.5; 4], 1e-12);
    }

    #[test]
    fn objective_values() {
        let a = fv(&[1.0, 3.0, 6.0]);
        let p = InclusionProbabilities::new(vec![0.25, 0.75, 1.0], 2.0).unwrap();
        assert_eq!(objective_value(&a, &p).unwrap(), 52.0);

        let a4 = fv(&[1.0; 4]);
        let p4 = InclusionProbabilities::new(vec![0.5; 4], 2.0).unwrap();
        assert_eq!(objective_value(&a4, &p4).unwrap(), 8.0);

        let ones = InclusionProbabilities::new(vec![1.0; 3], 3.0).unwrap();
        assert_eq!(objective_value(&a, &ones).unwrap(), 46.0);

        let bad = InclusionProbabilities::new(vec![1.0; 2], 2.0).unwrap();
        assert!(objective_value(&a, &bad).is_err());
    }

    #[test]
    fn capping_renormalizes_to_budget() {
        let (p, flagged) = cap_probabilities(&[0.2, 0.6, 1.2], 2.0).unwrap();
        assert_close(&p, &[0.25, 0.75, 1.0], 1e-15);
        assert!(flagged);

        let (p, flagged) = cap_probabilities(&[0.5; 4], 2.0).unwrap();
        assert_close(&p, &[0.5; 4], 1e-15);
        assert!(!flagged);

        // cascading caps
        let (p, _) = cap_probabilities(&[0.9, 0.9, 1.4, 0.8], 4.0).unwrap();
        assert_close(&p, &[1.0; 4], 1e-12);
    }
}
