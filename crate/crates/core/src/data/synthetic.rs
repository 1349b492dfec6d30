//! Stochastic block model graphs with planted, feature-correlated labels.

use serde::{Deserialize, Serialize};

use super::{Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Must be at least `blocks`: the first `blocks` columns carry the signal.
    pub feature_dim: usize,
    pub feature_signal: f64,
    pub seed: u64,
}

/// The built-in `sbm-smoke` configuration.
pub fn sbm_smoke() -> SbmConfig {
    SbmConfig {
        n: 100,
        blocks: 2,
        p_in: 0.5,
        p_out: 0.05,
        feature_dim: 16,
        feature_signal: 1.0,
        seed: 0,
    }
}

impl SbmConfig {
    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.n < self.blocks {
            return Err(Error::config(format!(
                "need 1 <= blocks <= n, got blocks = {}, n = {}",
                self.blocks, self.n
            )));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim < self.blocks {
            return Err(Error::config(format!(
                "feature_dim {} is smaller than blocks {}",
                self.feature_dim, self.blocks
            )));
        }
        if !self.feature_signal.is_finite() || self.feature_signal < 0.0 {
            return Err(Error::config("feature_signal must be finite and non-negative"));
        }
        Ok(())
    }

    /// Block of node `i`: contiguous, balanced assignment.
    pub fn block_of(&self, i: usize) -> usize {
        i * self.blocks / self.n
    }
}

/// Samples a graph, features and a stratified 10/20/70 split.
pub fn generate_sbm(config: &SbmConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n;
    let mut rng = Rng::new(config.seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if config.block_of(i) == config.block_of(j) {
                config.p_in
            } else {
                config.p_out
            };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }

    let mut features = DenseMatrix::zeros(n, config.feature_dim);
    let mut labels = DenseMatrix::zeros(n, config.blocks);
    for i in 0..n {
        let b = config.block_of(i);
        labels.set(i, b, 1.0);
        for j in 0..config.feature_dim {
            let signal = if j == b { config.feature_signal } else { 0.0 };
            features.set(i, j, signal + rng.normal());
        }
    }

    let mut split = Split::default();
    for b in 0..config.blocks {
        let mut members: Vec<usize> = (0..n).filter(|&i| config.block_of(i) == b).collect();
        rng.shuffle(&mut members);
        let m = members.len();
        let n_train = ((m as f64 * 0.1).round() as usize).max(1);
        let n_val = ((m as f64 * 0.2).round() as usize).min(m - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();

    let name = format!("sbm-n{}-b{}-s{}", n, config.blocks, config.seed);
    Dataset::new(name, Task::SingleLabel, edges, features, labels, split)
}
