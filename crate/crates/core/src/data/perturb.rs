//! Seeded perturbations of a dataset. Inputs are never modified.

use super::{Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Zeroes, independently for every node, `round(fraction * nnz)` of that
/// node's nonzero feature entries, chosen uniformly.
pub fn remove_features(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("removal fraction {fraction} outside [0, 1]")));
    }
    let mut features = (**dataset.features()).clone();
    let mut rng = Rng::new(seed);
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let nonzero: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
        let drop = (fraction * nonzero.len() as f64).round() as usize;
        for pick in rng.sample_indices(nonzero.len(), drop) {
            row[nonzero[pick]] = 0.0;
        }
    }
    dataset.with_features(features)
}

/// Draws exactly `per_class` training nodes per class from the labeled nodes
/// outside the validation and test sets. Validation and test are kept.
pub fn subsample_train_labels(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    if dataset.task() != Task::SingleLabel {
        return Err(Error::config("label subsampling needs a single-label dataset"));
    }
    if per_class == 0 {
        return Err(Error::config("per_class must be at least 1"));
    }
    let n = dataset.n();
    let split = dataset.split();
    let mut held_out = vec![false; n];
    for &i in split.val.iter().chain(&split.test) {
        held_out[i] = true;
    }
    let mut pools = vec![Vec::new(); dataset.num_classes()];
    for i in (0..n).filter(|&i| !held_out[i]) {
        if let Some(c) = dataset.class_of(i) {
            pools[c].push(i);
        }
    }

    let mut rng = Rng::new(seed);
    let mut train = Vec::with_capacity(per_class * pools.len());
    for (c, pool) in pools.iter().enumerate() {
        if pool.len() < per_class {
            return Err(Error::data(
                format!("{}/labels", dataset.name()),
                None,
                format!("class {c} has {} labeled nodes outside val/test, {per_class} requested", pool.len()),
            ));
        }
        train.extend(rng.sample_indices(pool.len(), per_class).into_iter().map(|k| pool[k]));
    }
    train.sort_unstable();
    dataset.with_split(Split {
        train,
        val: split.val.clone(),
        test: split.test.clone(),
    })
}
