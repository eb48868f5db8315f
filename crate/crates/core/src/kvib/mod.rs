//! Adaptive and baseline client samplers behind one interface.
//!
//! The adaptive sampler keeps one cumulative importance-weighted feedback
//! total per client and each round plays the follow-the-regularized-leader
//! probabilities `p_i proportional to sqrt(omega(i) + gamma)` (water-filled
//! with caps at 1), mixed with the uniform design:
//! `p~ = (1 - theta) p + theta K/N`. Sampled clients report
//! `pi = lambda_i * norm(g_i)` and the store absorbs `pi^2 / p~_i`, which is
//! an unbiased estimate of the full-information feedback.
//!
//! Baselines: fixed uniform designs for both procedures, and oracle-optimal
//! samplers that re-solve the optimal probabilities from full per-round
//! feedback (these realize the per-round comparator that defines regret;
//! they require oracle instrumentation).

mod store;

pub use store::FeedbackStore;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{
    cap_probabilities, draw_isp_nonempty, draw_rsp, solve_optimal_isp, solve_optimal_rsp,
    waterfill_restricted_sorted, waterfill_sorted, InclusionProbabilities, Procedure,
    SampleOutcome, PROB_FLOOR,
};

/// Attempts before an adaptive/uniform independent draw may give up on
/// rejecting empty outcomes.
pub const EMPTY_REDRAW_LIMIT: u32 = 100;

/// A hyperparameter that is either fixed or derived from the run setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyper {
    Auto,
    Fixed(f64),
}

impl Hyper {
    pub fn fixed(self) -> Option<f64> {
        match self {
            Hyper::Auto => None,
            Hyper::Fixed(v) => Some(v),
        }
    }
}

impl Serialize for Hyper {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Hyper::Auto => s.serialize_str("auto"),
            Hyper::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Hyper {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Hyper::Fixed(v)),
            Raw::Text(t) if t.eq_ignore_ascii_case("auto") => Ok(Hyper::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

/// Configuration of the adaptive sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct KVibConfig {
    pub n: usize,
    /// Expected sampled clients per round, `1 <= K <= N`.
    pub k: f64,
    /// Planned number of rounds (drives the auto mixing coefficient).
    pub horizon: usize,
    /// Mixing coefficient in `[0, 1]`; auto uses `(N / (T K))^(1/3)`.
    pub theta: Hyper,
    /// FTRL regularizer > 0; auto uses `G^2 N / (theta K)`.
    pub gamma: Hyper,
    /// Largest-feedback scale `G`; auto estimates it from the mean of
    /// first-round feedback.
    pub g_estimate: Hyper,
    /// Optional probability floor handed to the restricted solver.
    pub p_min: f64,
}

impl KVibConfig {
    pub fn new(n: usize, k: f64, horizon: usize) -> Self {
        Self {
            n,
            k,
            horizon,
            theta: Hyper::Auto,
            gamma: Hyper::Auto,
            g_estimate: Hyper::Auto,
            p_min: 0.0,
        }
    }

    /// The mixing coefficient actually used.
    pub fn resolved_theta(&self) -> Result<f64> {
        match self.theta {
            Hyper::Fixed(t) => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::invalid(format!("theta={t} outside [0, 1]")));
                }
                Ok(t)
            }
            Hyper::Auto => {
                let tk = self.horizon as f64 * self.k;
                if tk < self.n as f64 {
                    return Err(Error::invalid(format!(
                        "auto theta requires T*K >= N (got T*K={tk}, N={})",
                        self.n
                    )));
                }
                Ok((self.n as f64 / tk).powf(1.0 / 3.0).min(1.0))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.horizon == 0 {
            return Err(Error::invalid("N and T must be >= 1"));
        }
        if !(1.0 - 1e-12..=self.n as f64 + 1e-12).contains(&self.k) {
            return Err(Error::invalid(format!(
                "budget K={} outside [1, {}]",
                self.k, self.n
            )));
        }
        if let Hyper::Fixed(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::invalid(format!("gamma={g} must be > 0")));
            }
        }
        if let Hyper::Fixed(g) = self.g_estimate {
            if !(g > 0.0) {
                return Err(Error::invalid(format!("G={g} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_min) || self.p_min * self.n as f64 > self.k + 1e-12 {
            return Err(Error::invalid(format!(
                "p_min={} infeasible for K={}, N={}",
                self.p_min, self.k, self.n
            )));
        }
        self.resolved_theta()?;
        Ok(())
    }
}

/// The FTRL probabilities for the current store contents:
/// `solve_optimal_isp` applied to `a_i = sqrt(omega(i) + gamma)` (the
/// restricted solver when a floor is set), exploiting the store's sorted
/// order so no re-sort is needed.
pub fn ftrl_probabilities(
    store: &FeedbackStore,
    gamma: f64,
    k: f64,
    p_min: f64,
) -> Result<InclusionProbabilities> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma={gamma} must be > 0")));
    }
    let n = store.len();
    let mut clients = Vec::with_capacity(n);
    let mut sorted_a = Vec::with_capacity(n);
    for (client, omega) in store.iter_sorted() {
        clients.push(client);
        sorted_a.push((omega + gamma).sqrt());
    }
    let p_sorted = if p_min > 0.0 {
        waterfill_restricted_sorted(&sorted_a, k, p_min)?.0
    } else {
        waterfill_sorted(&sorted_a, k).0
    };
    let mut p = vec![0.0; n];
    for (pos, &client) in clients.iter().enumerate() {
        p[client] = p_sorted[pos];
    }
    InclusionProbabilities::new(p, k)
}

/// Mix a probability vector with the uniform design:
/// `p~_i = (1 - theta) p_i + theta K/N`. Preserves the budget and floors
/// every entry at `theta K/N`.
pub fn mix(p: &InclusionProbabilities, theta: f64, k: f64, n: usize) -> Result<InclusionProbabilities> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta={theta} outside [0, 1]")));
    }
    if p.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for N={n}",
            p.len()
        )));
    }
    let base = theta * k / n as f64;
    let mixed: Vec<f64> = p.probs().iter().map(|&pi| (1.0 - theta) * pi + base).collect();
    InclusionProbabilities::new(mixed, k)
}

/// Mean of the provided feedback values; the naive scale estimate used for
/// the auto regularizer.
pub fn estimate_g(pi: &[f64]) -> Result<f64> {
    if pi.is_empty() {
        return Err(Error::invalid("cannot estimate G from empty feedback"));
    }
    Ok(pi.iter().sum::<f64>() / pi.len() as f64)
}

/// Behavioral contract shared by all client samplers.
///
/// Each round: `propose` returns the sampled set together with the
/// probabilities that were applied (never violating the budget constraint),
/// then `absorb_feedback` delivers `(i, pi_t(i))` for the sampled clients.
/// Samplers with `requires_full_feedback() == true` must additionally
/// receive `observe_full_feedback` with all N values before `propose`.
pub trait ClientSampler: Send {
    fn name(&self) -> &'static str;

    /// Which procedure the sampler draws with.
    fn procedure(&self) -> Procedure;

    fn propose(&mut self, round: usize, rng: &mut ChaCha8Rng) -> Result<SampleOutcome>;

    fn absorb_feedback(&mut self, round: usize, feedback: &[(usize, f64)]) -> Result<()>;

    /// Full per-client feedback for the upcoming round (oracle
    /// instrumentation). Default: ignored.
    fn observe_full_feedback(&mut self, _pi: &[f64]) -> Result<()> {
        Ok(())
    }

    fn requires_full_feedback(&self) -> bool {
        false
    }
}

/// The adaptive sampler: FTRL probabilities over accumulated feedback,
/// mixed toward uniform, drawn with the independent procedure.
pub struct KVibSampler {
    n: usize,
    k: f64,
    theta: f64,
    p_min: f64,
    gamma: Option<f64>,
    g_fixed: Option<f64>,
    store: FeedbackStore,
    last_applied: Vec<f64>,
    pending_full: Option<Vec<f64>>,
}

impl KVibSampler {
    /// Start with zero feedback for every client; the first proposal is the
    /// uniform design `K/N`.
    pub fn new(config: &KVibConfig) -> Result<Self> {
        config.validate()?;
        let theta = config.resolved_theta()?;
        let g_fixed = config.g_estimate.fixed();
        let gamma = match config.gamma {
            Hyper::Fixed(g) => Some(g),
            Hyper::Auto => g_fixed.map(|g| Self::auto_gamma(g, config.n, theta, config.k)),
        };
        Ok(Self {
            n: config.n,
            k: config.k,
            theta,
            p_min: config.p_min,
            gamma,
            g_fixed,
            store: FeedbackStore::new(config.n),
            last_applied: vec![config.k / config.n as f64; config.n],
            pending_full: None,
        })
    }

    fn auto_gamma(g: f64, n: usize, theta: f64, k: f64) -> f64 {
        let gamma = g * g * n as f64 / (theta.max(PROB_FLOOR) * k);
        if gamma > 0.0 {
            gamma
        } else {
            PROB_FLOOR
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The regularizer once resolved (immediately for fixed gamma/G, after
    /// the first round of feedback otherwise).
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn store(&self) -> &FeedbackStore {
        &self.store
    }

    /// The probabilities the next draw would use (post-mix).
    pub fn current_probabilities(&self) -> Result<InclusionProbabilities> {
        let base = match self.gamma {
            Some(gamma) => ftrl_probabilities(&self.store, gamma, self.k, self.p_min)?,
            // All feedback totals are zero before the first absorb, so any
            // regularizer yields the uniform design.
            None => InclusionProbabilities::uniform(self.n, self.k)?,
        };
        mix(&base, self.theta, self.k, self.n)
    }

    fn resolve_gamma(&mut self, sampled: &[(usize, f64)]) {
        if self.gamma.is_some() {
            return;
        }
        let g = match self.g_fixed {
            Some(g) => Some(g),
            None => match &self.pending_full {
                Some(full) => estimate_g(full).ok(),
                None => {
                    let values: Vec<f64> = sampled.iter().map(|&(_, pi)| pi).collect();
                    estimate_g(&values).ok()
                }
            },
        };
        if let Some(g) = g {
            self.gamma = Some(Self::auto_gamma(g, self.n, self.theta, self.k));
        }
    }
}

impl ClientSampler for KVibSampler {
    fn name(&self) -> &'static str {
        "kvib"
    }

    fn procedure(&self) -> Procedure {
        Procedure::Isp
    }

    fn propose(&mut self, _round: usize, rng: &mut ChaCha8Rng) -> Result<SampleOutcome> {
        let mixed = self.current_probabilities()?;
        self.last_applied.copy_from_slice(mixed.probs());
        Ok(draw_isp_nonempty(&mixed, rng, EMPTY_REDRAW_LIMIT))
    }

    fn absorb_feedback(&mut self, _round: usize, feedback: &[(usize, f64)]) -> Result<()> {
        if !feedback.is_empty() {
            self.resolve_gamma(feedback);
        }
        for &(client, pi) in feedback {
            self.store.absorb(client, pi, self.last_applied[client])?;
        }
        self.pending_full = None;
        Ok(())
    }

    fn observe_full_feedback(&mut self, pi: &[f64]) -> Result<()> {
        // Only needed while the auto regularizer is unresolved.
        if self.gamma.is_none() && self.g_fixed.is_none() {
            self.pending_full = Some(pi.to_vec());
        }
        Ok(())
    }
}

/// Fixed uniform design `p_i = K/N`, drawn with either procedure; feedback
/// is ignored.
pub struct UniformSampler {
    probs: InclusionProbabilities,
    k: f64,
    procedure: Procedure,
}

impl UniformSampler {
    pub fn isp(n: usize, k: f64) -> Result<Self> {
        Ok(Self {
            probs: InclusionProbabilities::uniform(n, k)?,
            k,
            procedure: Procedure::Isp,
        })
    }

    pub fn rsp(n: usize, k: f64) -> Result<Self> {
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "the fixed-size procedure needs an integer budget (got K={k})"
            )));
        }
        Ok(Self {
            probs: InclusionProbabilities::uniform(n, k)?,
            k,
            procedure: Procedure::Rsp,
        })
    }
}

impl ClientSampler for UniformSampler {
    fn name(&self) -> &'static str {
        match self.procedure {
            Procedure::Isp => "uniform_isp",
            Procedure::Rsp => "uniform_rsp",
        }
    }

    fn procedure(&self) -> Procedure {
        self.procedure
    }

    fn propose(&mut self, _round: usize, rng: &mut ChaCha8Rng) -> Result<SampleOutcome> {
        match self.procedure {
            Procedure::Isp => Ok(draw_isp_nonempty(&self.probs, rng, EMPTY_REDRAW_LIMIT)),
            Procedure::Rsp => draw_rsp(self.probs.probs(), self.k.round() as usize, rng),
        }
    }

    fn absorb_feedback(&mut self, _round: usize, _feedback: &[(usize, f64)]) -> Result<()> {
        Ok(())
    }
}

/// Re-solves the optimal probabilities from the true per-round feedback
/// before every draw. This sampler realizes the per-round comparator of the
/// dynamic regret (its own regret is identically zero under the independent
/// procedure) and refuses to run without oracle instrumentation.
pub struct OracleOptimalSampler {
    n: usize,
    k: f64,
    procedure: Procedure,
    feedback: Option<Vec<f64>>,
    /// Rounds on which the proportional solution exceeded 1 and was capped.
    pub cap_events: u64,
}

impl OracleOptimalSampler {
    pub fn new(procedure: Procedure, n: usize, k: f64) -> Result<Self> {
        if procedure == Procedure::Rsp && (k - k.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "the fixed-size procedure needs an integer budget (got K={k})"
            )));
        }
        Ok(Self {
            n,
            k,
            procedure,
            feedback: None,
            cap_events: 0,
        })
    }
}

impl ClientSampler for OracleOptimalSampler {
    fn name(&self) -> &'static str {
        match self.procedure {
            Procedure::Isp => "oracle_isp",
            Procedure::Rsp => "oracle_rsp",
        }
    }

    fn procedure(&self) -> Procedure {
        self.procedure
    }

    fn propose(&mut self, _round: usize, rng: &mut ChaCha8Rng) -> Result<SampleOutcome> {
        let pi = self.feedback.take().ok_or(Error::OracleFeedbackRequired)?;
        if pi.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "{} feedback values for N={}",
                pi.len(),
                self.n
            )));
        }
        let all_zero = pi.iter().all(|&v| v == 0.0);
        match self.procedure {
            Procedure::Isp => {
                let probs = if all_zero {
                    // Degenerate round: the cost is zero for any design.
                    InclusionProbabilities::uniform(self.n, self.k)?
                } else {
                    solve_optimal_isp(&crate::sampling::FeedbackVector::new(pi)?, self.k)?
                };
                Ok(draw_isp_nonempty(&probs, rng, EMPTY_REDRAW_LIMIT))
            }
            Procedure::Rsp => {
                let k = self.k.round() as usize;
                let raw = if all_zero {
                    vec![self.k / self.n as f64; self.n]
                } else {
                    let sol = solve_optimal_rsp(&crate::sampling::FeedbackVector::new(pi)?, self.k)?;
                    if sol.over_one {
                        self.cap_events += 1;
                    }
                    sol.p
                };
                let (capped, _) = cap_probabilities(&raw, self.k)?;
                draw_rsp(&capped, k, rng)
            }
        }
    }

    fn absorb_feedback(&mut self, _round: usize, _feedback: &[(usize, f64)]) -> Result<()> {
        Ok(())
    }

    fn observe_full_feedback(&mut self, pi: &[f64]) -> Result<()> {
        self.feedback = Some(pi.to_vec());
        Ok(())
    }

    fn requires_full_feedback(&self) -> bool {
        true
    }
}

/// Sampler selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum SamplerSpec {
    Kvib {
        #[serde(default = "default_auto")]
        theta: Hyper,
        #[serde(default = "default_auto")]
        gamma: Hyper,
        #[serde(default = "default_auto")]
        g_estimate: Hyper,
        #[serde(default)]
        p_min: f64,
    },
    UniformIsp,
    UniformRsp,
    OracleIsp,
    OracleRsp,
}

fn default_auto() -> Hyper {
    Hyper::Auto
}

impl SamplerSpec {
    pub fn kvib_default() -> Self {
        SamplerSpec::Kvib {
            theta: Hyper::Auto,
            gamma: Hyper::Auto,
            g_estimate: Hyper::Auto,
            p_min: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerSpec::Kvib { .. } => "kvib",
            SamplerSpec::UniformIsp => "uniform_isp",
            SamplerSpec::UniformRsp => "uniform_rsp",
            SamplerSpec::OracleIsp => "oracle_isp",
            SamplerSpec::OracleRsp => "oracle_rsp",
        }
    }

    /// Parse the config-level sampler name (hyperparameters default to auto).
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "kvib" => Ok(Self::kvib_default()),
            "uniform_isp" => Ok(SamplerSpec::UniformIsp),
            "uniform_rsp" => Ok(SamplerSpec::UniformRsp),
            "oracle_isp" => Ok(SamplerSpec::OracleIsp),
            "oracle_rsp" => Ok(SamplerSpec::OracleRsp),
            other => Err(Error::invalid(format!(
                "unknown sampler \"{other}\" (expected kvib, uniform_isp, uniform_rsp, oracle_isp, oracle_rsp)"
            ))),
        }
    }

    pub fn build(&self, n: usize, k: f64, horizon: usize) -> Result<Box<dyn ClientSampler>> {
        Ok(match self {
            SamplerSpec::Kvib {
                theta,
                gamma,
                g_estimate,
                p_min,
            } => Box::new(KVibSampler::new(&KVibConfig {
                n,
                k,
                horizon,
                theta: *theta,
                gamma: *gamma,
                g_estimate: *g_estimate,
                p_min: *p_min,
            })?),
            SamplerSpec::UniformIsp => Box::new(UniformSampler::isp(n, k)?),
            SamplerSpec::UniformRsp => Box::new(UniformSampler::rsp(n, k)?),
            SamplerSpec::OracleIsp => Box::new(OracleOptimalSampler::new(Procedure::Isp, n, k)?),
            SamplerSpec::OracleRsp => Box::new(OracleOptimalSampler::new(Procedure::Rsp, n, k)?),
        })
    }
}
