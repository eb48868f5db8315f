//! Heterogeneous synthetic classification tasks.
//!
//! Each client draws its own logistic model and feature distribution from
//! client-level Gaussian hyperparameters, so `alpha` controls model
//! heterogeneity and `beta` feature heterogeneity (both are standard
//! deviations; zero gives the homogeneous limit where all clients share one
//! generating law). Dataset sizes follow a power law over client rank.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, StreamKind};
use crate::sampling::ClientWeights;

/// Generation parameters for a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_clients: usize,
    pub dimension: usize,
    pub classes: usize,
    /// Std dev of the per-client model mean shift.
    pub alpha: f64,
    /// Std dev of the per-client feature mean shift.
    pub beta: f64,
    /// Power-law exponent of dataset sizes over client rank.
    pub size_exponent: f64,
    pub min_size: usize,
    pub total_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_clients: 100,
            dimension: 60,
            classes: 10,
            alpha: 2.0,
            beta: 2.0,
            size_exponent: 1.1,
            min_size: 10,
            total_size: 20_000,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::invalid("n_clients must be >= 1"));
        }
        if self.n_clients >= (1 << 24) {
            return Err(Error::invalid("n_clients exceeds the stream key space"));
        }
        if self.dimension == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(2..=256).contains(&self.classes) {
            return Err(Error::invalid("classes must lie in [2, 256]"));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be >= 0"));
        }
        if !(self.size_exponent > 0.0) {
            return Err(Error::invalid("size_exponent must be > 0"));
        }
        if self.min_size < 2 {
            return Err(Error::invalid("min_size must be >= 2 (train/test split)"));
        }
        if self.total_size < self.n_clients * self.min_size {
            return Err(Error::invalid(format!(
                "total_size {} cannot cover {} clients at min_size {}",
                self.total_size, self.n_clients, self.min_size
            )));
        }
        Ok(())
    }
}

/// One client's local dataset (row-major features, training prefix).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    features: Vec<f64>,
    labels: Vec<u8>,
    dimension: usize,
    /// Samples `[0, train_count)` train; the rest are held out.
    pub train_count: usize,
}

impl ClientData {
    pub(crate) fn new(
        features: Vec<f64>,
        labels: Vec<u8>,
        dimension: usize,
        train_count: usize,
    ) -> Self {
        debug_assert_eq!(features.len(), labels.len() * dimension);
        Self {
            features,
            labels,
            dimension,
            train_count,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn test_count(&self) -> usize {
        self.len() - self.train_count
    }

    pub fn sample(&self, i: usize) -> (&[f64], u8) {
        (
            &self.features[i * self.dimension..(i + 1) * self.dimension],
            self.labels[i],
        )
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// A generated task: per-client data, size-proportional weights, and the
/// client-level hyperparameters that were drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub clients: Vec<ClientData>,
    pub lambda: ClientWeights,
    pub sizes: Vec<usize>,
    /// Per-client model mean shift `u_i ~ N(0, alpha)`.
    pub model_means: Vec<f64>,
    /// Per-client feature mean shift `B_i ~ N(0, beta)`.
    pub feature_means: Vec<f64>,
    pub config: SyntheticConfig,
}

impl SyntheticTask {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }
}

/// Deterministic power-law sizes: proportional to `rank^(-exponent)`,
/// floored at `min_size`, adjusted so the total matches exactly.
pub fn power_law_sizes(
    n: usize,
    exponent: f64,
    min_size: usize,
    total_size: usize,
) -> Vec<usize> {
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((total_size as f64 * w / wsum).round() as usize).max(min_size))
        .collect();
    // Rounding and the floor drift the total; settle the difference on the
    // largest clients, never dipping below the floor.
    let mut current: isize = sizes.iter().sum::<usize>() as isize;
    let target = total_size as isize;
    let mut idx = 0usize;
    while current != target {
        if current < target {
            sizes[idx % n] += 1;
            current += 1;
        } else if sizes[idx % n] > min_size {
            sizes[idx % n] -= 1;
            current -= 1;
        }
        idx += 1;
        if idx > 4 * n * (1 + sizes.len()) {
            break; // floor-bound; leave the small drift in place
        }
    }
    sizes
}

/// Generate a synthetic task. Deterministic under `config.seed`; every
/// client consumes its own substream.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticTask> {
    config.validate()?;
    let n = config.n_clients;
    let d = config.dimension;
    let c = config.classes;
    let sizes = power_law_sizes(n, config.size_exponent, config.min_size, config.total_size);
    let lambda = ClientWeights::from_sizes(&sizes)?;

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let model_shift = Normal::new(0.0, config.alpha).map_err(|e| {
        Error::invalid(format!("alpha: {e}"))
    })?;
    let feature_shift = Normal::new(0.0, config.beta).map_err(|e| {
        Error::invalid(format!("beta: {e}"))
    })?;
    // Diagonal feature covariance decays with coordinate index.
    let feature_std: Vec<f64> = (1..=d).map(|j| (j as f64).powf(-1.2).sqrt()).collect();

    let mut clients = Vec::with_capacity(n);
    let mut model_means = Vec::with_capacity(n);
    let mut feature_means = Vec::with_capacity(n);
    for (i, &size) in sizes.iter().enumerate() {
        let mut rng = substream(config.seed, StreamKind::DataGen, i as u32, 0);
        let u_i: f64 = model_shift.sample(&mut rng);
        let b_i: f64 = feature_shift.sample(&mut rng);
        model_means.push(u_i);
        feature_means.push(b_i);

        // True per-client model: entries ~ N(u_i, 1).
        let w: Vec<f64> = (0..d * c).map(|_| u_i + unit.sample(&mut rng)).collect();
        let bias: Vec<f64> = (0..c).map(|_| u_i + unit.sample(&mut rng)).collect();
        // Feature mean: entries ~ N(B_i, 1).
        let v: Vec<f64> = (0..d).map(|_| b_i + unit.sample(&mut rng)).collect();

        let mut features = Vec::with_capacity(size * d);
        let mut labels = Vec::with_capacity(size);
        let mut scores = vec![0.0f64; c];
        for _ in 0..size {
            let start = features.len();
            for j in 0..d {
                features.push(v[j] + feature_std[j] * unit.sample(&mut rng));
            }
            let x = &features[start..start + d];
            for (cls, s) in scores.iter_mut().enumerate() {
                let mut acc = bias[cls];
                for (j, &xj) in x.iter().enumerate() {
                    acc += w[j * c + cls] * xj;
                }
                *s = acc;
            }
            let label = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(idx, _)| idx)
                .unwrap();
            labels.push(label as u8);
        }
        let test = ((size as f64 * 0.2).round() as usize).clamp(1, size - 1);
        clients.push(ClientData::new(features, labels, d, size - test));
    }

    Ok(SyntheticTask {
        clients,
        lambda,
        sizes,
        model_means,
        feature_means,
        config: config.clone(),
    })
}
