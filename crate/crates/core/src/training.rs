//! Loss assembly, Adam and the peak-validation training loop.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, SplitKind, Task};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, micro_f1};
use crate::models::{network_forward, ModelInputs, ModelParams, ModelSpec, Mode, NetworkOutput, ParamVars};
use crate::rng::Rng;
use crate::tensor::DenseMatrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy against one-hot rows.
    Softmax,
    /// Per-label sigmoid cross-entropy against multi-hot rows.
    Sigmoid,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::SingleLabel => LossKind::Softmax,
            Task::MultiLabel => LossKind::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub lr: f64,
    pub steps: usize,
    pub dropout: f64,
    pub l2_coeff: f64,
    pub seed: u64,
    /// Independent repetitions; run `i` uses seed `seed + i`.
    pub runs: usize,
    /// `None` picks the loss from the dataset's task.
    pub loss_kind: Option<LossKind>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            lr: 0.01,
            steps: 600,
            dropout: 0.5,
            l2_coeff: 1e-5,
            seed: 0,
            runs: 20,
            loss_kind: None,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return Err(Error::config(format!("l2 coefficient must be non-negative, got {}", self.l2_coeff)));
        }
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

/// Loss node together with the forward pass that produced it.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: Var,
    pub network: NetworkOutput,
}

/// Masked loss on the combined output, plus `l2_coeff · Σ‖W‖²` over the
/// regularized weights, plus (when the spec asks for it) a softmax
/// cross-entropy term on every module's own output.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParamVars,
    inputs: &ModelInputs,
    train_mask: &[bool],
    loss_kind: LossKind,
    l2_coeff: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<LossOutput> {
    if loss_kind == LossKind::Sigmoid && (spec.per_module_softmax || spec.intermediate_supervision) {
        return Err(Error::config(
            "per-module softmax and intermediate supervision need a softmax loss",
        ));
    }
    let network = network_forward(tape, spec, params, inputs, mode, rng)?;
    let labels = tape.constant_shared(inputs.labels.clone());
    let ce = |tape: &mut Tape, logits: Var| match loss_kind {
        LossKind::Softmax => tape.masked_softmax_ce(logits, labels, train_mask),
        LossKind::Sigmoid => tape.masked_sigmoid_ce(logits, labels, train_mask),
    };
    let mut loss = ce(tape, network.logits)?;
    if spec.intermediate_supervision {
        for &out in &network.module_outputs {
            let term = ce(tape, out)?;
            loss = tape.add(loss, term)?;
        }
    }
    if l2_coeff > 0.0 {
        for w in params.regularized() {
            let sq = tape.sum_squares(w);
            let term = tape.scale(sq, l2_coeff);
            loss = tape.add(loss, term)?;
        }
    }
    Ok(LossOutput { loss, network })
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: usize,
}

impl AdamState {
    pub fn new(params: &[&DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut DenseMatrix], grads: &[DenseMatrix], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::config(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        for (((pv, &gv), mv), vv) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub seed: u64,
    pub best_params: ModelParams,
    pub best_val_metric: f64,
    /// Test metric of `best_params`.
    pub test_metric: f64,
    /// 1-based step after which `best_params` were captured.
    pub step_of_best: usize,
    pub metric_history: Vec<StepRecord>,
    /// `softmax(m̃)` after every step, for attention networks.
    pub attention_trace: Vec<Vec<f64>>,
    pub attention_at_best: Option<Vec<f64>>,
}

/// Accuracy for single-label tasks, micro-F1 for multi-label ones.
pub fn metric(task: Task, logits: &DenseMatrix, labels: &DenseMatrix, nodes: &[usize]) -> Result<f64> {
    match task {
        Task::SingleLabel => accuracy(logits, labels, nodes),
        Task::MultiLabel => micro_f1(logits, labels, nodes),
    }
}

/// Inference-mode logits.
pub fn predict(spec: &ModelSpec, params: &ModelParams, inputs: &ModelInputs) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    // Nothing is drawn in inference mode.
    let mut rng = Rng::new(0);
    let out = network_forward(&mut tape, spec, &vars, inputs, Mode::Eval, &mut rng)?;
    Ok(tape.value(out.logits).clone())
}

/// Metric of `params` on one part of the dataset's split.
pub fn evaluate(params: &ModelParams, spec: &ModelSpec, dataset: &Dataset, split: SplitKind) -> Result<f64> {
    let nodes = dataset.split().nodes(split);
    if nodes.is_empty() {
        return Err(Error::config(format!("{split:?} split is empty")));
    }
    let inputs = ModelInputs::prepare(dataset, spec.normalization)?;
    let logits = predict(spec, params, &inputs)?;
    metric(dataset.task(), &logits, &inputs.labels, nodes)
}

/// One training run with `train_spec.seed`.
pub fn train(model_spec: &ModelSpec, train_spec: &TrainSpec, dataset: &Dataset) -> Result<TrainResult> {
    let inputs = ModelInputs::prepare(dataset, model_spec.normalization)?;
    train_prepared(model_spec, train_spec, dataset, &inputs, train_spec.seed)
}

/// One run on already prepared inputs, seeded with `seed`.
///
/// Initialization, then every dropout mask, is drawn from a single stream
/// seeded with `seed`. The validation metric is computed after every step;
/// parameters are snapshotted whenever it strictly improves.
pub fn train_prepared(
    model_spec: &ModelSpec,
    train_spec: &TrainSpec,
    dataset: &Dataset,
    inputs: &ModelInputs,
    seed: u64,
) -> Result<TrainResult> {
    train_spec.validate()?;
    let split = dataset.split();
    for kind in [SplitKind::Val, SplitKind::Test] {
        if split.nodes(kind).is_empty() {
            return Err(Error::config(format!("{kind:?} split is empty")));
        }
    }
    let loss_kind = train_spec.loss_kind.unwrap_or_else(|| LossKind::for_task(dataset.task()));
    let train_mask = split.mask(SplitKind::Train, dataset.n());
    let mode = Mode::Train {
        dropout: train_spec.dropout,
    };

    let mut rng = Rng::new(seed);
    let mut params = ModelParams::init(model_spec, inputs.num_features(), inputs.num_classes(), &mut rng)?;
    let mut adam = AdamState::new(&params.tensors());

    let mut history = Vec::with_capacity(train_spec.steps);
    let mut attention_trace = Vec::new();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    for step in 1..=train_spec.steps {
        let mut tape = Tape::new();
        let vars = params.to_tape(&mut tape);
        let out = total_loss(
            &mut tape,
            model_spec,
            &vars,
            inputs,
            &train_mask,
            loss_kind,
            train_spec.l2_coeff,
            mode,
            &mut rng,
        )?;
        let loss = tape.scalar(out.loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let mut grads = tape.backward(out.loss)?;
        let grads: Vec<DenseMatrix> = vars.vars().into_iter().map(|v| grads.take(v)).collect();
        drop(tape);
        adam_step(&mut params.tensors_mut(), &grads, &mut adam, train_spec.lr)?;

        let logits = predict(model_spec, &params, inputs)?;
        if !logits.is_finite() {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        let val = metric(dataset.task(), &logits, &inputs.labels, &split.val)?;
        history.push(StepRecord {
            step,
            loss,
            val_metric: val,
        });
        if let Some(m) = params.attention_weights() {
            attention_trace.push(m);
        }
        if best.as_ref().is_none_or(|(b, ..)| val > *b) {
            let test = metric(dataset.task(), &logits, &inputs.labels, &split.test)?;
            best = Some((val, test, step, params.clone()));
        }
    }
    let (best_val_metric, test_metric, step_of_best, best_params) = best.expect("at least one step");
    let attention_at_best = best_params.attention_weights();
    Ok(TrainResult {
        seed,
        best_params,
        best_val_metric,
        test_metric,
        step_of_best,
        metric_history: history,
        attention_trace,
        attention_at_best,
    })
}

/// Index of the run with the highest validation metric; the earliest wins
/// ties.
pub fn select_best(results: &[TrainResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if best.is_none_or(|b| r.best_val_metric > results[b].best_val_metric) {
            best = Some(i);
        }
    }
    best
}
