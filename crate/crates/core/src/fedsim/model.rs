//! Multinomial logistic regression with mini-batch SGD, hand-rolled on
//! flat parameter vectors so local updates stay allocation-free.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::synthetic::{ClientData, SyntheticTask};
use crate::error::{Error, Result};

/// Flattened classifier parameters: weight matrix `W` (dimension x classes,
/// row-major) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: Vec<f64>,
    pub dimension: usize,
    pub classes: usize,
}

impl GlobalModel {
    pub fn zeros(dimension: usize, classes: usize) -> Self {
        Self {
            params: vec![0.0; dimension * classes + classes],
            dimension,
            classes,
        }
    }

    pub fn param_count(&self) -> usize {
        self.dimension * self.classes + self.classes
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// How many SGD steps a client runs per round.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSteps {
    /// `epochs * ceil(train_size / batch)` steps (client-dependent).
    Epochs(usize),
    /// The same fixed step count for every client.
    Fixed(usize),
}

impl LocalSteps {
    pub fn resolve(&self, train_size: usize, batch: usize) -> usize {
        match *self {
            LocalSteps::Epochs(e) => e * train_size.div_ceil(batch),
            LocalSteps::Fixed(r) => r,
        }
    }
}

/// One client's uploaded displacement and its Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub delta: Vec<f64>,
    pub norm: f64,
    pub steps: usize,
}

#[inline]
fn class_scores(params: &[f64], x: &[f64], classes: usize, scores: &mut [f64]) {
    let d = x.len();
    scores.copy_from_slice(&params[d * classes..d * classes + classes]);
    for (j, &xj) in x.iter().enumerate() {
        let row = &params[j * classes..(j + 1) * classes];
        for (s, &w) in scores.iter_mut().zip(row) {
            *s += w * xj;
        }
    }
}

/// log(sum(exp(scores))) with max subtraction; scores are replaced by their
/// softmax probabilities.
#[inline]
fn softmax_in_place(scores: &mut [f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
    max + sum.ln()
}

/// Mean cross-entropy over the index set, accumulating the mean gradient
/// into `grad` (which is zeroed first).
pub fn batch_loss_and_grad(
    params: &[f64],
    dimension: usize,
    classes: usize,
    data: &ClientData,
    batch: &[usize],
    grad: &mut [f64],
    scores: &mut [f64],
) -> f64 {
    debug_assert_eq!(grad.len(), params.len());
    grad.iter_mut().for_each(|g| *g = 0.0);
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &s in batch {
        let (x, y) = data.sample(s);
        class_scores(params, x, classes, scores);
        let lse = softmax_in_place(scores);
        // loss contribution: lse - score_y, with scores now softmaxed we
        // recover -log p_y directly.
        let p_y = scores[y as usize].max(f64::MIN_POSITIVE);
        loss += -p_y.ln();
        let _ = lse;
        // d loss / d score_c = softmax_c - 1{c == y}
        scores[y as usize] -= 1.0;
        for (j, &xj) in x.iter().enumerate() {
            let row = &mut grad[j * classes..(j + 1) * classes];
            for (g, &ds) in row.iter_mut().zip(scores.iter()) {
                *g += inv * xj * ds;
            }
        }
        let bias = &mut grad[dimension * classes..dimension * classes + classes];
        for (g, &ds) in bias.iter_mut().zip(scores.iter()) {
            *g += inv * ds;
        }
    }
    loss * inv
}

/// Mean cross-entropy and top-1 accuracy over a sample index range.
fn loss_and_accuracy(
    params: &[f64],
    classes: usize,
    data: &ClientData,
    range: std::ops::Range<usize>,
) -> (f64, f64) {
    let count = range.len();
    if count == 0 {
        return (0.0, 0.0);
    }
    let mut scores = vec![0.0; classes];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in range {
        let (x, y) = data.sample(s);
        class_scores(params, x, classes, &mut scores);
        softmax_in_place(&mut scores);
        loss += -scores[y as usize].max(f64::MIN_POSITIVE).ln();
        let pred = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == y as usize {
            correct += 1;
        }
    }
    (loss / count as f64, correct as f64 / count as f64)
}

/// Run local mini-batch SGD from the broadcast model and return the
/// displacement (initial minus final parameters) and its norm.
///
/// Batches are drawn by shuffling the client's training samples once per
/// epoch with the provided stream; a fixed step count cycles epochs as
/// needed. Non-finite losses abort with diagnostics.
pub fn local_update(
    model: &GlobalModel,
    data: &ClientData,
    steps: LocalSteps,
    eta_l: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LocalUpdate> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if !(eta_l >= 0.0) || !eta_l.is_finite() {
        return Err(Error::invalid(format!("eta_l={eta_l} must be finite and >= 0")));
    }
    let train = data.train_count;
    if train == 0 {
        return Err(Error::invalid("client has no training samples"));
    }
    let total_steps = steps.resolve(train, batch_size).max(1);

    let mut params = model.params.clone();
    let mut grad = vec![0.0; params.len()];
    let mut scores = vec![0.0; model.classes];
    let mut order: Vec<usize> = (0..train).collect();
    let mut done = 0usize;
    'outer: loop {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let loss = batch_loss_and_grad(
                &params,
                model.dimension,
                model.classes,
                data,
                chunk,
                &mut grad,
                &mut scores,
            );
            if !loss.is_finite() {
                return Err(Error::NumericalAbort(format!(
                    "non-finite local loss at step {done} (train={train}, batch={batch_size})"
                )));
            }
            for (p, &g) in params.iter_mut().zip(grad.iter()) {
                *p -= eta_l * g;
            }
            done += 1;
            if done >= total_steps {
                break 'outer;
            }
        }
    }

    let mut delta = Vec::with_capacity(params.len());
    let mut norm_sq = 0.0;
    for (initial, fin) in model.params.iter().zip(&params) {
        let d = initial - fin;
        norm_sq += d * d;
        delta.push(d);
    }
    if !norm_sq.is_finite() {
        return Err(Error::NumericalAbort("non-finite local update".into()));
    }
    Ok(LocalUpdate {
        delta,
        norm: norm_sq.sqrt(),
        steps: total_steps,
    })
}

/// Which slice of each client's data to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Weight-averaged cross-entropy and top-1 accuracy over all clients.
pub fn evaluate(model: &GlobalModel, task: &SyntheticTask, split: Split) -> (f64, f64) {
    let per_client: Vec<(f64, f64)> = task
        .clients
        .par_iter()
        .map(|client| {
            let range = match split {
                Split::Train => 0..client.train_count,
                Split::Test => client.train_count..client.len(),
            };
            loss_and_accuracy(&model.params, model.classes, client, range)
        })
        .collect();
    let mut loss = 0.0;
    let mut acc = 0.0;
    for ((l, a), &w) in per_client.iter().zip(task.lambda.as_slice()) {
        loss += w * l;
        acc += w * a;
    }
    (loss, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::synthetic::{generate_synthetic, SyntheticConfig};
    use crate::rng::{substream, StreamKind};

    fn task() -> crate::fedsim::SyntheticTask {
        generate_synthetic(&SyntheticConfig {
            n_clients: 6,
            dimension: 5,
            classes: 4,
            total_size: 360,
            min_size: 20,
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    /// Central finite differences of the mean batch loss.
    fn fd_gradient(
        params: &[f64],
        dimension: usize,
        classes: usize,
        data: &ClientData,
        batch: &[usize],
    ) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        let mut scratch = vec![0.0; params.len()];
        let mut scores = vec![0.0; classes];
        let h = 1e-6;
        let mut p = params.to_vec();
        for j in 0..params.len() {
            p[j] = params[j] + h;
            let hi = batch_loss_and_grad(&p, dimension, classes, data, batch, &mut scratch, &mut scores);
            p[j] = params[j] - h;
            let lo = batch_loss_and_grad(&p, dimension, classes, data, batch, &mut scratch, &mut scores);
            p[j] = params[j];
            grad[j] = (hi - lo) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let task = task();
        let mut rng = substream(31, StreamKind::Estimator, 0, 0);
        for case in 0..20 {
            let client = &task.clients[case % task.clients.len()];
            let mut model = GlobalModel::zeros(task.dimension(), task.classes());
            for p in model.params.iter_mut() {
                *p = rand::Rng::random::<f64>(&mut rng) - 0.5;
            }
            let batch: Vec<usize> = (0..client.train_count.min(16)).collect();
            let mut grad = vec![0.0; model.params.len()];
            let mut scores = vec![0.0; model.classes];
            batch_loss_and_grad(
                &model.params,
                model.dimension,
                model.classes,
                client,
                &batch,
                &mut grad,
                &mut scores,
            );
            let fd = fd_gradient(&model.params, model.dimension, model.classes, client, &batch);
            let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let diff: f64 = grad
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                diff <= 1e-5 * (1.0 + norm),
                "case {case}: ||grad - fd|| = {diff} vs ||grad|| = {norm}"
            );
        }
    }

    #[test]
    fn zero_step_size_gives_zero_update() {
        let task = task();
        let model = GlobalModel::zeros(task.dimension(), task.classes());
        let mut rng = substream(32, StreamKind::LocalUpdate, 0, 1);
        let up = local_update(&model, &task.clients[0], LocalSteps::Epochs(1), 0.0, 16, &mut rng)
            .unwrap();
        assert_eq!(up.norm, 0.0);
        assert!(up.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_full_batch_step_is_one_gradient() {
        let task = task();
        let client = &task.clients[1];
        let mut model = GlobalModel::zeros(task.dimension(), task.classes());
        model.params[3] = 0.25;
        let eta = 0.05;
        let mut rng = substream(33, StreamKind::LocalUpdate, 1, 1);
        let up = local_update(
            &model,
            client,
            LocalSteps::Fixed(1),
            eta,
            client.train_count,
            &mut rng,
        )
        .unwrap();
        let batch: Vec<usize> = (0..client.train_count).collect();
        let mut grad = vec![0.0; model.params.len()];
        let mut scores = vec![0.0; model.classes];
        batch_loss_and_grad(
            &model.params,
            model.dimension,
            model.classes,
            client,
            &batch,
            &mut grad,
            &mut scores,
        );
        for (d, &g) in up.delta.iter().zip(&grad) {
            assert!((d - eta * g).abs() < 1e-12, "{d} vs {}", eta * g);
        }
    }

    #[test]
    fn local_update_is_deterministic() {
        let task = task();
        let model = GlobalModel::zeros(task.dimension(), task.classes());
        let run = || {
            let mut rng = substream(34, StreamKind::LocalUpdate, 2, 7);
            local_update(&model, &task.clients[2], LocalSteps::Epochs(2), 0.1, 8, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epoch_step_counts() {
        assert_eq!(LocalSteps::Epochs(1).resolve(100, 64), 2);
        assert_eq!(LocalSteps::Epochs(2).resolve(64, 64), 2);
        assert_eq!(LocalSteps::Fixed(5).resolve(1000, 64), 5);
    }

    #[test]
    fn zero_model_loss_is_log_classes() {
        let task = task();
        let model = GlobalModel::zeros(task.dimension(), task.classes());
        let (loss, acc) = evaluate(&model, &task, Split::Test);
        assert!((loss - (task.classes() as f64).ln()).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn trained_client_beats_chance_on_its_own_data() {
        // A model fit on one client's training data should comfortably beat
        // 1/C accuracy on that client's held-out data.
        let task = task();
        let client = &task.clients[0];
        let mut model = GlobalModel::zeros(task.dimension(), task.classes());
        let mut rng = substream(35, StreamKind::LocalUpdate, 0, 2);
        for _ in 0..60 {
            let up = local_update(&model, client, LocalSteps::Epochs(1), 0.3, 16, &mut rng).unwrap();
            for (p, d) in model.params.iter_mut().zip(&up.delta) {
                *p -= d;
            }
        }
        let (_, acc) = loss_and_accuracy(
            &model.params,
            model.classes,
            client,
            client.train_count..client.len(),
        );
        assert!(
            acc > 1.0 / task.classes() as f64,
            "accuracy {acc} not above chance"
        );
    }
}
