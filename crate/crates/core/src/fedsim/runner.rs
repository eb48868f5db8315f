//! The federated-averaging host loop.
//!
//! Each round: the sampler proposes a client set, sampled clients run local
//! SGD from the broadcast model, the server applies the importance-weighted
//! aggregate `x <- x - eta_g * sum_{i in S} lambda_i g_i / p_i`, and the
//! sampler absorbs the per-client feedback `pi_t(i) = lambda_i * ||g_i||`.
//!
//! With oracle instrumentation enabled the loop computes all N local
//! updates per round (on the same per-(client, round) streams, so the
//! sampled trajectory is unchanged) and records exact online loss, regret,
//! and variance; otherwise those columns are absent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{evaluate, local_update, GlobalModel, LocalSteps, Split};
use super::synthetic::SyntheticTask;
use crate::error::{Error, Result};
use crate::kvib::{ClientSampler, SamplerSpec};
use crate::metrics::{
    accumulate, instantaneous_regret, online_loss, optimal_online_loss, round_variance,
    RoundRecord, RunSummary,
};
use crate::rng::{substream, StreamKind};
use crate::sampling::{aggregate_unbiased, UpdateMatrix};

/// Host-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_steps: LocalSteps,
    pub batch_size: usize,
    pub eta_l: f64,
    pub eta_g: f64,
    /// Compute all N local updates per round for exact metrics.
    pub oracle_metrics: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 500,
            local_steps: LocalSteps::Epochs(1),
            batch_size: 64,
            eta_l: 0.02,
            eta_g: 1.0,
            oracle_metrics: true,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be >= 1"));
        }
        if self.rounds >= u32::MAX as usize {
            return Err(Error::invalid("rounds exceed the stream key space"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.eta_l > 0.0) || !(self.eta_g > 0.0) {
            return Err(Error::invalid("eta_l and eta_g must be > 0"));
        }
        match self.local_steps {
            LocalSteps::Epochs(0) | LocalSteps::Fixed(0) => {
                Err(Error::invalid("local steps must be >= 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Live state of one experiment run.
pub struct ExperimentState<'a> {
    pub task: &'a SyntheticTask,
    pub config: TrainConfig,
    pub k: f64,
    pub model: GlobalModel,
    sampler: Box<dyn ClientSampler>,
    updates: UpdateMatrix,
    norms: Vec<f64>,
    pi: Vec<f64>,
}

impl<'a> ExperimentState<'a> {
    pub fn new(
        task: &'a SyntheticTask,
        config: TrainConfig,
        spec: &SamplerSpec,
        k: f64,
    ) -> Result<Self> {
        config.validate()?;
        let n = task.n_clients();
        let sampler = spec.build(n, k, config.rounds)?;
        if sampler.requires_full_feedback() && !config.oracle_metrics {
            return Err(Error::OracleFeedbackRequired);
        }
        let model = GlobalModel::zeros(task.dimension(), task.classes());
        let dim = model.param_count();
        Ok(Self {
            task,
            config,
            k,
            model,
            sampler,
            updates: UpdateMatrix::zeros(n, dim),
            norms: vec![0.0; n],
            pi: vec![0.0; n],
        })
    }

    pub fn sampler_name(&self) -> &'static str {
        self.sampler.name()
    }

    fn compute_updates(&mut self, clients: &[usize], round: u32) -> Result<()> {
        let cfg = &self.config;
        let task = self.task;
        let model = &self.model;
        // Each client owns a (client, round) substream, so results do not
        // depend on which other clients run this round.
        let results: Vec<(usize, super::model::LocalUpdate)> = clients
            .par_iter()
            .map(|&i| {
                let mut rng = substream(cfg.seed, StreamKind::LocalUpdate, i as u32, round);
                local_update(
                    model,
                    &task.clients[i],
                    cfg.local_steps,
                    cfg.eta_l,
                    cfg.batch_size,
                    &mut rng,
                )
                .map(|u| (i, u))
            })
            .collect::<Result<_>>()?;
        for (i, up) in results {
            self.updates.row_mut(i).copy_from_slice(&up.delta);
            self.norms[i] = up.norm;
            self.pi[i] = self.task.lambda.as_slice()[i] * up.norm;
        }
        Ok(())
    }

    /// Run one communication round and return its record.
    pub fn run_round(&mut self, t: usize) -> Result<RoundRecord> {
        let round = t as u32;
        let oracle = self.config.oracle_metrics;
        if oracle {
            let all: Vec<usize> = (0..self.task.n_clients()).collect();
            self.compute_updates(&all, round)?;
            self.sampler.observe_full_feedback(&self.pi)?;
        }

        let mut sampling_rng = substream(self.config.seed, StreamKind::Sampling, 0, round);
        let outcome = self.sampler.propose(t, &mut sampling_rng)?;

        if !oracle {
            self.compute_updates(&outcome.members, round)?;
        }

        let aggregate = aggregate_unbiased(&outcome, self.task.lambda.as_slice(), &self.updates)?;
        for (p, &d) in self.model.params.iter_mut().zip(&aggregate.estimate) {
            *p -= self.config.eta_g * d;
        }
        if !self.model.is_finite() {
            return Err(Error::NumericalAbort(format!(
                "non-finite global model after round {t}"
            )));
        }

        let feedback: Vec<(usize, f64)> =
            outcome.members.iter().map(|&i| (i, self.pi[i])).collect();
        self.sampler.absorb_feedback(t, &feedback)?;

        let (online, optimal, regret, variance, variance_is_bound) = if oracle {
            let online = online_loss(&self.pi, &outcome.probs);
            let optimal = optimal_online_loss(&self.pi, self.k)?;
            let regret = instantaneous_regret(&self.pi, &outcome.probs, self.k)?;
            let (variance, is_bound) =
                round_variance(&self.pi, &outcome.probs, outcome.procedure, self.k);
            (
                Some(online),
                Some(optimal),
                Some(regret),
                Some(variance),
                Some(is_bound),
            )
        } else {
            (None, None, None, None, None)
        };

        let (train_loss, _) = evaluate(&self.model, self.task, Split::Train);
        let (test_loss, test_accuracy) = evaluate(&self.model, self.task, Split::Test);

        Ok(RoundRecord {
            t,
            applied_probs: outcome.probs,
            sample_size: outcome.members.len(),
            online_loss: online,
            optimal_loss: optimal,
            regret,
            variance,
            variance_is_bound,
            train_loss,
            test_loss,
            test_accuracy,
            empty_redraws: outcome.empty_redraws,
        })
    }
}

/// Result of one full run: per-round records plus the run summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Run a full experiment: `config.rounds` rounds of the host loop with the
/// given sampler at budget `k`.
pub fn run_experiment(
    task: &SyntheticTask,
    config: &TrainConfig,
    spec: &SamplerSpec,
    k: f64,
) -> Result<RunResult> {
    let started = std::time::Instant::now();
    let mut state = ExperimentState::new(task, config.clone(), spec, k)?;
    let mut records = Vec::with_capacity(config.rounds);
    for t in 1..=config.rounds {
        records.push(state.run_round(t)?);
    }
    let (cumulative_regret, cumulative_variance) = accumulate(&records);
    let last = records.last().expect("rounds >= 1");
    let summary = RunSummary {
        sampler: spec.name().to_string(),
        k,
        seed: config.seed,
        rounds: config.rounds,
        config: serde_json::json!({
            "task": task.config,
            "train": config,
            "sampler": spec,
            "k": k,
        }),
        cumulative_regret,
        cumulative_variance,
        final_train_loss: last.train_loss,
        final_test_loss: last.test_loss,
        final_test_accuracy: last.test_accuracy,
        total_empty_redraws: records.iter().map(|r| r.empty_redraws as u64).sum(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunResult { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::synthetic::{generate_synthetic, SyntheticConfig};
    use crate::kvib::Hyper;
    use crate::metrics::rounds_to_csv;

    fn small_task() -> SyntheticTask {
        generate_synthetic(&SyntheticConfig {
            n_clients: 10,
            dimension: 6,
            classes: 3,
            total_size: 400,
            min_size: 12,
            seed: 21,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn small_train(seed: u64, oracle: bool) -> TrainConfig {
        TrainConfig {
            rounds: 12,
            batch_size: 16,
            eta_l: 0.05,
            oracle_metrics: oracle,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn full_participation_matches_deterministic_fedavg() {
        let task = small_task();
        let k = task.n_clients() as f64;
        let result = run_experiment(
            &task,
            &small_train(3, true),
            &SamplerSpec::UniformIsp,
            k,
        )
        .unwrap();
        // Replay by hand: with p = 1 the aggregate is the exact weighted sum.
        let cfg = small_train(3, true);
        let mut model = GlobalModel::zeros(task.dimension(), task.classes());
        for t in 1..=cfg.rounds {
            let mut step = vec![0.0; model.param_count()];
            for i in 0..task.n_clients() {
                let mut rng = substream(cfg.seed, StreamKind::LocalUpdate, i as u32, t as u32);
                let up = local_update(
                    &model,
                    &task.clients[i],
                    cfg.local_steps,
                    cfg.eta_l,
                    cfg.batch_size,
                    &mut rng,
                )
                .unwrap();
                let w = task.lambda.as_slice()[i];
                for (s, &d) in step.iter_mut().zip(&up.delta) {
                    *s += w * d;
                }
            }
            for (p, &d) in model.params.iter_mut().zip(&step) {
                *p -= cfg.eta_g * d;
            }
        }
        let (train_loss, _) = evaluate(&model, &task, Split::Train);
        let last = result.records.last().unwrap();
        assert!((last.train_loss - train_loss).abs() < 1e-9);
        // Full participation also means zero variance and zero regret.
        assert_eq!(last.variance, Some(0.0));
        assert_eq!(last.regret, Some(0.0));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let task = small_task();
        let spec = SamplerSpec::kvib_default();
        let a = run_experiment(&task, &small_train(5, true), &spec, 3.0).unwrap();
        let b = run_experiment(&task, &small_train(5, true), &spec, 3.0).unwrap();
        assert_eq!(rounds_to_csv(&a.records), rounds_to_csv(&b.records));
        let c = run_experiment(&task, &small_train(6, true), &spec, 3.0).unwrap();
        assert_ne!(rounds_to_csv(&a.records), rounds_to_csv(&c.records));
    }

    #[test]
    fn oracle_mode_does_not_perturb_sampling() {
        // Fixed hyperparameters: the auto regularizer legitimately differs
        // between modes (it sees different first-round feedback).
        let task = small_task();
        let spec = SamplerSpec::Kvib {
            theta: Hyper::Fixed(0.3),
            gamma: Hyper::Fixed(0.05),
            g_estimate: Hyper::Auto,
            p_min: 0.0,
        };
        let with = run_experiment(&task, &small_train(7, true), &spec, 3.0).unwrap();
        let without = run_experiment(&task, &small_train(7, false), &spec, 3.0).unwrap();
        for (a, b) in with.records.iter().zip(&without.records) {
            assert_eq!(a.sample_size, b.sample_size);
            assert_eq!(a.applied_probs, b.applied_probs);
            assert_eq!(a.train_loss, b.train_loss);
        }
        assert!(without.records[0].regret.is_none());
        assert!(with.records[0].regret.is_some());

        for spec in [SamplerSpec::UniformIsp, SamplerSpec::UniformRsp] {
            let with = run_experiment(&task, &small_train(8, true), &spec, 3.0).unwrap();
            let without = run_experiment(&task, &small_train(8, false), &spec, 3.0).unwrap();
            for (a, b) in with.records.iter().zip(&without.records) {
                assert_eq!(a.applied_probs, b.applied_probs);
                assert_eq!(a.train_loss, b.train_loss);
            }
        }
    }

    #[test]
    fn oracle_sampler_requires_oracle_mode() {
        let task = small_task();
        let err = run_experiment(&task, &small_train(9, false), &SamplerSpec::OracleIsp, 3.0);
        assert!(matches!(err, Err(Error::OracleFeedbackRequired)));
    }

    #[test]
    fn oracle_isp_sampler_has_zero_regret() {
        let task = small_task();
        let result =
            run_experiment(&task, &small_train(10, true), &SamplerSpec::OracleIsp, 3.0).unwrap();
        for r in &result.records {
            assert_eq!(r.regret, Some(0.0));
        }
        assert_eq!(
            result.summary.cumulative_regret.as_ref().unwrap().last(),
            Some(&0.0)
        );
    }

    #[test]
    fn first_round_estimate_is_unbiased() {
        // Fixed model at t=1: the mean aggregate over repeated draws matches
        // the full-participation update within 4 standard errors.
        let task = small_task();
        let cfg = small_train(11, true);
        let model = GlobalModel::zeros(task.dimension(), task.classes());
        let n = task.n_clients();
        let mut updates = UpdateMatrix::zeros(n, model.param_count());
        for i in 0..n {
            let mut rng = substream(cfg.seed, StreamKind::LocalUpdate, i as u32, 1);
            let up = local_update(
                &model,
                &task.clients[i],
                cfg.local_steps,
                cfg.eta_l,
                cfg.batch_size,
                &mut rng,
            )
            .unwrap();
            updates.row_mut(i).copy_from_slice(&up.delta);
        }
        let weights = task.lambda.as_slice();
        let full = updates.weighted_sum(weights).unwrap();
        let probs =
            crate::sampling::InclusionProbabilities::uniform(n, 4.0).unwrap();
        let trials = 4000;
        let dim = model.param_count();
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut rng = substream(99, StreamKind::Estimator, 0, 0);
        for _ in 0..trials {
            let outcome = crate::sampling::draw_isp(&probs, &mut rng);
            let agg = aggregate_unbiased(&outcome, weights, &updates).unwrap();
            for j in 0..dim {
                sum[j] += agg.estimate[j];
                sum_sq[j] += agg.estimate[j] * agg.estimate[j];
            }
        }
        for j in 0..dim {
            let mean = sum[j] / trials as f64;
            let var = (sum_sq[j] / trials as f64 - mean * mean).max(0.0);
            let se = (var / trials as f64).sqrt().max(1e-12);
            assert!(
                (mean - full[j]).abs() <= 4.0 * se,
                "coordinate {j}: mean {mean} vs {} (se {se})",
                full[j]
            );
        }
    }

    #[test]
    fn training_loss_decreases() {
        let task = small_task();
        let mut cfg = small_train(12, true);
        cfg.rounds = 40;
        let result = run_experiment(&task, &cfg, &SamplerSpec::UniformIsp, 4.0).unwrap();
        let first = result.records.first().unwrap().train_loss;
        let last = result.records.last().unwrap().train_loss;
        assert!(last < first, "train loss {first} -> {last}");
    }
}
