//! Online-optimization and estimator-quality metrics, plus the CSV and
//! JSON record formats consumed by the experiment front-end.
//!
//! Regret and variance are exact only when the host loop runs in oracle
//! instrumentation mode (all N local updates computed each round); without
//! it those columns are emitted as absent markers (`NA`) rather than
//! estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{
    solve_optimal_isp, FeedbackVector, Procedure, PROB_FLOOR,
};

/// The per-round cost of a probability vector: `sum_i pi_t(i)^2 / p_i`.
pub fn online_loss(pi: &[f64], p: &[f64]) -> f64 {
    debug_assert_eq!(pi.len(), p.len());
    pi.iter()
        .zip(p)
        .map(|(&f, &pi_)| f * f / pi_.clamp(PROB_FLOOR, 1.0))
        .sum()
}

/// The per-round minimum `min_p l_t(p)`, attained by the optimal
/// independent design for the observed feedback. Zero feedback costs zero.
pub fn optimal_online_loss(pi: &[f64], k: f64) -> Result<f64> {
    if pi.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let solved = solve_optimal_isp(&FeedbackVector::new(pi.to_vec())?, k)?;
    Ok(online_loss(pi, solved.probs()))
}

/// Per-round dynamic-regret summand `l_t(p_applied) - min_p l_t(p)`,
/// non-negative up to rounding (tiny negatives are snapped to zero).
pub fn instantaneous_regret(pi: &[f64], p_applied: &[f64], k: f64) -> Result<f64> {
    let applied = online_loss(pi, p_applied);
    let optimal = optimal_online_loss(pi, k)?;
    let regret = applied - optimal;
    debug_assert!(regret >= -1e-8 * optimal.max(1.0), "regret {regret}");
    Ok(regret.max(0.0))
}

/// Per-round estimator variance of the applied design. Exact for the
/// independent procedure; for fixed-size samplers the second value is true
/// and the reported number is the variance upper bound, not the exact
/// variance.
pub fn round_variance(pi: &[f64], p_applied: &[f64], procedure: Procedure, k: f64) -> (f64, bool) {
    match procedure {
        Procedure::Isp => {
            let v = pi
                .iter()
                .zip(p_applied)
                .map(|(&f, &p)| {
                    let p = p.clamp(PROB_FLOOR, 1.0);
                    (1.0 - p) * f * f / p
                })
                .sum();
            (v, false)
        }
        Procedure::Rsp => {
            let n = pi.len() as f64;
            let factor = if n > 1.0 { (n - k) / (n - 1.0) } else { 0.0 };
            (factor * online_loss(pi, p_applied), true)
        }
    }
}

/// Everything recorded about one communication round.
///
/// The CSV schema matches the field order here; `applied_probs` is one
/// `;`-joined column and oracle-only fields are `NA` when unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub applied_probs: Vec<f64>,
    pub sample_size: usize,
    pub online_loss: Option<f64>,
    pub optimal_loss: Option<f64>,
    pub regret: Option<f64>,
    pub variance: Option<f64>,
    pub variance_is_bound: Option<bool>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub empty_redraws: u32,
}

/// Stable CSV header, one column per [`RoundRecord`] field.
pub const CSV_HEADER: &str = "t,applied_probs,sample_size,online_loss,optimal_loss,regret,variance,variance_is_bound,train_loss,test_loss,test_accuracy,empty_redraws";

const NA: &str = "NA";

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn opt_bool(v: Option<bool>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

/// Render round records as CSV (byte-stable for identical inputs).
pub fn rounds_to_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * records.len() + CSV_HEADER.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let probs = r
            .applied_probs
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            probs,
            r.sample_size,
            opt_f64(r.online_loss),
            opt_f64(r.optimal_loss),
            opt_f64(r.regret),
            opt_f64(r.variance),
            opt_bool(r.variance_is_bound),
            r.train_loss,
            r.test_loss,
            r.test_accuracy,
            r.empty_redraws,
        ));
    }
    out
}

fn parse_opt_f64(s: &str, line: usize) -> Result<Option<f64>> {
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("bad float \"{s}\"")))
}

/// Parse CSV produced by [`rounds_to_csv`].
pub fn rounds_from_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty CSV"))?;
    if header != CSV_HEADER {
        return Err(Error::parse(1, "unexpected CSV header"));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::parse(
                line_no,
                format!("expected 12 columns, got {}", fields.len()),
            ));
        }
        let applied_probs = if fields[1].is_empty() {
            Vec::new()
        } else {
            fields[1]
                .split(';')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("bad probability \"{s}\"")))
                })
                .collect::<Result<Vec<f64>>>()?
        };
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(line_no, format!("bad integer \"{s}\"")))
        };
        let variance_is_bound = match fields[7] {
            NA => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(Error::parse(line_no, format!("bad bool \"{other}\""))),
        };
        records.push(RoundRecord {
            t: parse_usize(fields[0])?,
            applied_probs,
            sample_size: parse_usize(fields[2])?,
            online_loss: parse_opt_f64(fields[3], line_no)?,
            optimal_loss: parse_opt_f64(fields[4], line_no)?,
            regret: parse_opt_f64(fields[5], line_no)?,
            variance: parse_opt_f64(fields[6], line_no)?,
            variance_is_bound,
            train_loss: parse_opt_f64(fields[8], line_no)?
                .ok_or_else(|| Error::parse(line_no, "train_loss is required"))?,
            test_loss: parse_opt_f64(fields[9], line_no)?
                .ok_or_else(|| Error::parse(line_no, "test_loss is required"))?,
            test_accuracy: parse_opt_f64(fields[10], line_no)?
                .ok_or_else(|| Error::parse(line_no, "test_accuracy is required"))?,
            empty_redraws: parse_usize(fields[11])? as u32,
        });
    }
    Ok(records)
}

/// Run-level aggregate: config echo, cumulative sequences, final values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sampler: String,
    pub k: f64,
    pub seed: u64,
    pub rounds: usize,
    /// Echo of the full configuration for provenance.
    pub config: serde_json::Value,
    /// Partial sums of the per-round regret (oracle mode only).
    pub cumulative_regret: Option<Vec<f64>>,
    /// Partial sums of the per-round variance (oracle mode only).
    pub cumulative_variance: Option<Vec<f64>>,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub total_empty_redraws: u64,
    pub wall_clock_secs: f64,
}

/// Partial-sum sequences of regret and variance across rounds; `None` when
/// any round lacks the oracle-only fields.
pub fn accumulate(records: &[RoundRecord]) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let regret = partial_sums(records.iter().map(|r| r.regret));
    let variance = partial_sums(records.iter().map(|r| r.variance));
    (regret, variance)
}

fn partial_sums(values: impl Iterator<Item = Option<f64>>) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    let mut total = 0.0;
    for v in values {
        total += v?;
        out.push(total);
    }
    Some(out)
}

/// Pretty JSON for a run summary (trailing newline included).
pub fn summary_to_json(summary: &RunSummary) -> Result<String> {
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::invalid(format!("summary serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn summary_from_json(text: &str) -> Result<RunSummary> {
    serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))
}
