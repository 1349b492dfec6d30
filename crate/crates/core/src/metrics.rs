//! Classification metrics over a subset of nodes.

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

fn check(logits: &DenseMatrix, labels: &DenseMatrix, nodes: &[usize], what: &str) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::config(format!("{what}: empty node set")));
    }
    if logits.shape() != labels.shape() {
        return Err(Error::config(format!(
            "{what}: logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    if let Some(&bad) = nodes.iter().find(|&&i| i >= logits.rows()) {
        return Err(Error::config(format!("{what}: node {bad} out of range")));
    }
    Ok(())
}

/// Fraction of `nodes` whose argmax logit hits a positive label.
pub fn accuracy(logits: &DenseMatrix, labels: &DenseMatrix, nodes: &[usize]) -> Result<f64> {
    check(logits, labels, nodes, "accuracy")?;
    let hits = nodes
        .iter()
        .filter(|&&i| labels.get(i, logits.argmax_row(i)) == 1.0)
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Pooled true/false positive and false negative counts at logit > 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(logits: &DenseMatrix, labels: &DenseMatrix, nodes: &[usize]) -> Result<Confusion> {
    check(logits, labels, nodes, "confusion")?;
    let mut c = Confusion::default();
    for &i in nodes {
        for (&x, &y) in logits.row(i).iter().zip(labels.row(i)) {
            match (x > 0.0, y == 1.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(c)
}

/// Micro-averaged F1 at threshold 0 on logits (probability 0.5). Zero true
/// positives gives 0.
pub fn micro_f1(logits: &DenseMatrix, labels: &DenseMatrix, nodes: &[usize]) -> Result<f64> {
    let c = confusion(logits, labels, nodes)?;
    if c.tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_accuracy() {
        let labels = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(accuracy(&labels, &labels, &[0, 1]).unwrap(), 1.0);
        assert!(accuracy(&labels, &labels, &[]).is_err());
    }

    #[test]
    fn shift_invariance() {
        let logits = DenseMatrix::from_rows(&[[0.2, 0.9, -1.0], [3.0, 0.1, 0.0], [0.0, 0.0, 0.5]]);
        let labels = DenseMatrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let shifted = logits.map(|v| v + 7.5);
        let a = accuracy(&logits, &labels, &[0, 1, 2]).unwrap();
        assert_eq!(a, accuracy(&shifted, &labels, &[0, 1, 2]).unwrap());
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn micro_f1_degenerate_is_zero() {
        let logits = DenseMatrix::filled(2, 3, -1.0);
        let labels = DenseMatrix::zeros(2, 3);
        assert_eq!(micro_f1(&logits, &labels, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn micro_f1_hand_counted() {
        let logits = DenseMatrix::from_rows(&[[1.0, -1.0, 2.0], [-0.5, 0.5, 0.0]]);
        let labels = DenseMatrix::from_rows(&[[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]);
        // tp: (0,0), (1,1); fp: (0,2); fn: (0,1), (1,2). Logit 0 is negative.
        let c = confusion(&logits, &labels, &[0, 1]).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, fn_: 2 });
        assert!((micro_f1(&logits, &labels, &[0, 1]).unwrap() - 4.0 / 7.0).abs() < 1e-15);
    }
}
