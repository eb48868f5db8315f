//! Exact enumeration of small sampling designs.
//!
//! For desk-scale case studies (and as an independent route against the
//! closed-form variance formulas) the full outcome distribution can be
//! enumerated: all `2^N` subsets for the independent procedure, and all
//! permutation/start-interval cells for systematic fixed-size sampling.

use std::collections::BTreeMap;

use super::{UpdateMatrix, PROB_FLOOR};
use crate::error::{Error, Result};

/// One possible outcome of an enumerated design.
#[derive(Debug, Clone, PartialEq)]
pub struct IspOutcome {
    pub members: Vec<usize>,
    pub probability: f64,
    pub estimate: Vec<f64>,
    pub squared_error: f64,
}

/// The full outcome space of an independent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct IspEnumeration {
    pub outcomes: Vec<IspOutcome>,
    /// Exact estimator variance `sum_S P(S) * norm(d_S - full)^2`.
    pub variance: f64,
    /// `size_probabilities[s]` = probability the realized set has size `s`.
    pub size_probabilities: Vec<f64>,
}

/// Enumerate all `2^N` outcomes of the independent procedure (`N <= 20`).
pub fn enumerate_isp(
    updates: &UpdateMatrix,
    weights: &[f64],
    p: &[f64],
) -> Result<IspEnumeration> {
    let n = p.len();
    if n != updates.rows() || n != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities, {} weights, {} update rows",
            n,
            weights.len(),
            updates.rows()
        )));
    }
    if n > 20 {
        return Err(Error::invalid("ISP enumeration is limited to N <= 20"));
    }
    let full = updates.weighted_sum(weights)?;
    let dim = updates.dim();
    let mut outcomes = Vec::with_capacity(1 << n);
    let mut variance = 0.0;
    let mut size_probabilities = vec![0.0; n + 1];
    for mask in 0u32..(1u32 << n) {
        let mut probability = 1.0;
        let mut estimate = vec![0.0; dim];
        let mut members = Vec::new();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                probability *= p[i];
                members.push(i);
                let scale = weights[i] / p[i].clamp(PROB_FLOOR, 1.0);
                for (e, &v) in estimate.iter_mut().zip(updates.row(i)) {
                    *e += scale * v;
                }
            } else {
                probability *= 1.0 - p[i];
            }
        }
        let squared_error: f64 = estimate
            .iter()
            .zip(&full)
            .map(|(&e, &f)| (e - f) * (e - f))
            .sum();
        variance += probability * squared_error;
        size_probabilities[members.len()] += probability;
        outcomes.push(IspOutcome {
            members,
            probability,
            estimate,
            squared_error,
        });
    }
    Ok(IspEnumeration {
        outcomes,
        variance,
        size_probabilities,
    })
}

/// One fixed-size set with its exact probability under systematic sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RspOutcome {
    pub members: Vec<usize>,
    pub probability: f64,
    pub estimate: Vec<f64>,
    pub squared_error: f64,
}

/// The exact set distribution of systematic proportional-to-size sampling
/// with random permutation order.
#[derive(Debug, Clone, PartialEq)]
pub struct RspEnumeration {
    pub outcomes: Vec<RspOutcome>,
    /// Exact estimator variance under the enumerated design.
    pub variance: f64,
}

/// Enumerate the systematic fixed-size design exactly (`N <= 8`): for each
/// of the `N!` permutations the start `u` is partitioned at the fractional
/// parts of the cumulative sums, and each cell yields one set.
pub fn enumerate_rsp_systematic(
    updates: &UpdateMatrix,
    weights: &[f64],
    p: &[f64],
    k: usize,
) -> Result<RspEnumeration> {
    let n = p.len();
    if n != updates.rows() || n != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities, {} weights, {} update rows",
            n,
            weights.len(),
            updates.rows()
        )));
    }
    if n > 8 {
        return Err(Error::invalid("RSP enumeration is limited to N <= 8"));
    }
    super::draw::validate_rsp_design(p, k)?;

    let mut set_probs: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut perm: Vec<usize> = (0..n).collect();
    let perm_weight = 1.0 / factorial(n) as f64;
    permute(&mut perm, 0, &mut |order| {
        // Breakpoints of u where the selected set changes: the fractional
        // parts of the cumulative sums.
        let mut cuts = vec![0.0, 1.0];
        let mut cum = 0.0;
        for &idx in order.iter() {
            cum += p[idx];
            let frac = cum.fract();
            if frac > 0.0 && frac < 1.0 {
                cuts.push(frac);
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let u = 0.5 * (lo + hi);
            let mut members = Vec::with_capacity(k);
            let mut cum = 0.0;
            for &idx in order.iter() {
                let hits = (cum + p[idx] - u).floor() - (cum - u).floor();
                if hits >= 1.0 {
                    members.push(idx);
                }
                cum += p[idx];
            }
            members.sort_unstable();
            *set_probs.entry(members).or_insert(0.0) += perm_weight * (hi - lo);
        }
    });

    let full = updates.weighted_sum(weights)?;
    let mut outcomes = Vec::with_capacity(set_probs.len());
    let mut variance = 0.0;
    for (members, probability) in set_probs {
        let mut estimate = vec![0.0; updates.dim()];
        for &i in &members {
            let scale = weights[i] / p[i].clamp(PROB_FLOOR, 1.0);
            for (e, &v) in estimate.iter_mut().zip(updates.row(i)) {
                *e += scale * v;
            }
        }
        let squared_error: f64 = estimate
            .iter()
            .zip(&full)
            .map(|(&e, &f)| (e - f) * (e - f))
            .sum();
        variance += probability * squared_error;
        outcomes.push(RspOutcome {
            members,
            probability,
            estimate,
            squared_error,
        });
    }
    Ok(RspEnumeration { outcomes, variance })
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product::<u64>().max(1)
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
