mod common;

use std::time::Instant;

use common::six_node_dataset;
use ngcn::autodiff::Tape;
use ngcn::data::{generate_sbm, sbm_smoke, Split, SplitKind, Task};
use ngcn::models::{CombinerParams, ModelInputs, Mode};
use ngcn::training::{evaluate, select_best, total_loss, train_prepared, LossKind};
use ngcn::{train, Combiner, Dataset, DenseMatrix, Error, ModelParams, ModelSpec, Rng, TrainSpec};

fn quick(steps: usize) -> TrainSpec {
    TrainSpec {
        steps,
        runs: 1,
        ..TrainSpec::default()
    }
}

#[test]
fn gcn_recovers_planted_partition() {
    let start = Instant::now();
    let dataset = generate_sbm(&sbm_smoke()).unwrap();
    let result = train(&ModelSpec::gcn(), &quick(200), &dataset).unwrap();
    assert!(result.test_metric > 0.9, "test accuracy {}", result.test_metric);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn training_is_bit_reproducible() {
    let dataset = generate_sbm(&sbm_smoke()).unwrap();
    let spec = ModelSpec::ngcn(3, 2, Combiner::Attention);
    let a = train(&spec, &quick(30), &dataset).unwrap();
    let b = train(&spec, &quick(30), &dataset).unwrap();
    assert_eq!(a, b);
    let c = train(&spec, &TrainSpec { seed: 1, ..quick(30) }, &dataset).unwrap();
    assert_ne!(a.best_params, c.best_params);
}

#[test]
fn single_step_snapshots_step_one() {
    let dataset = six_node_dataset();
    let result = train(&ModelSpec::gcn(), &quick(1), &dataset).unwrap();
    assert_eq!(result.step_of_best, 1);
    assert_eq!(result.metric_history.len(), 1);
    assert!(train(&ModelSpec::gcn(), &quick(0), &dataset).is_err());
}

#[test]
fn snapshot_is_the_validation_peak() {
    let dataset = generate_sbm(&sbm_smoke()).unwrap();
    let spec = ModelSpec::ngcn(2, 1, Combiner::Fc);
    let result = train(&spec, &quick(60), &dataset).unwrap();
    let peak = result
        .metric_history
        .iter()
        .map(|r| r.val_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_val_metric, peak);
    let first_peak = result.metric_history.iter().find(|r| r.val_metric == peak).unwrap();
    assert_eq!(first_peak.step, result.step_of_best);
    let test = evaluate(&result.best_params, &spec, &dataset, SplitKind::Test).unwrap();
    assert_eq!(test, result.test_metric);
    let val = evaluate(&result.best_params, &spec, &dataset, SplitKind::Val).unwrap();
    assert_eq!(val, result.best_val_metric);
}

#[test]
fn attention_trace_is_recorded() {
    let dataset = generate_sbm(&sbm_smoke()).unwrap();
    let result = train(&ModelSpec::ngcn(3, 1, Combiner::Attention), &quick(5), &dataset).unwrap();
    assert_eq!(result.attention_trace.len(), 5);
    for m in &result.attention_trace {
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(
        result.attention_at_best.as_ref(),
        Some(&result.attention_trace[result.step_of_best - 1])
    );
}

#[test]
fn loss_settles_on_separable_instance() {
    let dataset = generate_sbm(&sbm_smoke()).unwrap();
    let spec = ModelSpec::gcn();
    let ts = TrainSpec {
        dropout: 0.0,
        l2_coeff: 0.0,
        ..quick(80)
    };
    let result = train(&spec, &ts, &dataset).unwrap();
    let losses: Vec<f64> = result.metric_history.iter().map(|r| r.loss).collect();
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "loss rose from {} to {}", w[0], w[1]);
    }
}

fn uniform_params(spec: &ModelSpec, dataset: &Dataset) -> ModelParams {
    let mut params = ModelParams::init(spec, dataset.num_features(), dataset.num_classes(), &mut Rng::new(0)).unwrap();
    // Zero final layers make every module output all-zero logits.
    for ws in &mut params.modules {
        let last = ws.last_mut().unwrap();
        *last = DenseMatrix::zeros(last.rows(), last.cols());
    }
    params
}

fn four_class_dataset() -> Dataset {
    let features = DenseMatrix::from_fn(8, 3, |i, j| ((i + j) % 3) as f64);
    let labels = DenseMatrix::from_fn(8, 4, |i, c| if i % 4 == c { 1.0 } else { 0.0 });
    let split = Split {
        train: vec![0, 1, 2, 3],
        val: vec![4, 5],
        test: vec![6, 7],
    };
    let edges = (0..7).map(|i| (i, i + 1)).collect();
    Dataset::new("four", Task::SingleLabel, edges, features, labels, split).unwrap()
}

#[test]
fn intermediate_supervision_on_uniform_modules() {
    let dataset = four_class_dataset();
    let spec = ModelSpec {
        intermediate_supervision: true,
        ..ModelSpec::ngcn(3, 2, Combiner::Attention)
    };
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = uniform_params(&spec, &dataset);
    let mask = dataset.split().mask(SplitKind::Train, 8);
    let l2 = 1e-3;
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = total_loss(
        &mut tape,
        &spec,
        &vars,
        &inputs,
        &mask,
        LossKind::Softmax,
        l2,
        Mode::Eval,
        &mut Rng::new(0),
    )
    .unwrap();
    let expected = (1.0 + 6.0) * 4f64.ln() + l2 * params.weight_sum_squares();
    assert!((tape.scalar(out.loss) - expected).abs() < 1e-12);
}

#[test]
fn l2_term_sums_weights_but_not_attention_logits() {
    let dataset = four_class_dataset();
    for spec in [ModelSpec::ngcn(2, 2, Combiner::Attention), ModelSpec::ngcn(2, 2, Combiner::Fc)] {
        let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
        let mut params = ModelParams::init(&spec, 3, 4, &mut Rng::new(5)).unwrap();
        if let CombinerParams::Attention(m) = &mut params.combiner {
            *m = DenseMatrix::from_rows(&[[3.0, -1.0, 2.0, 0.5]]);
        }
        let mask = dataset.split().mask(SplitKind::Train, 8);
        let loss_at = |l2: f64| {
            let mut tape = Tape::new();
            let vars = params.to_tape(&mut tape);
            let out = total_loss(&mut tape, &spec, &vars, &inputs, &mask, LossKind::Softmax, l2, Mode::Eval, &mut Rng::new(0))
                .unwrap();
            tape.scalar(out.loss)
        };
        let mut direct = 0.0;
        for w in params.modules.iter().flatten() {
            direct += w.as_slice().iter().map(|v| v * v).sum::<f64>();
        }
        if let CombinerParams::Fc(w) = &params.combiner {
            direct += w.as_slice().iter().map(|v| v * v).sum::<f64>();
        }
        let diff = loss_at(0.5) - loss_at(0.0);
        assert!((diff - 0.5 * direct).abs() < 1e-9, "{diff} vs {}", 0.5 * direct);
    }
}

#[test]
fn perfect_predictions_have_near_zero_loss() {
    let base = four_class_dataset();
    // Features equal to the labels and a scaled identity weight on power 0
    // give logits 1000 * Y.
    let dataset = Dataset::new(
        "perfect",
        Task::SingleLabel,
        base.edges().to_vec(),
        base.labels().as_ref().clone(),
        base.labels().as_ref().clone(),
        base.split().clone(),
    )
    .unwrap();
    let spec = ModelSpec {
        layers: 1,
        first_power: 0,
        ..ModelSpec::gcn()
    };
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams {
        modules: vec![vec![DenseMatrix::identity(4).scale(1000.0)]],
        combiner: CombinerParams::Identity,
    };
    let mask = dataset.split().mask(SplitKind::Train, 8);
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = total_loss(&mut tape, &spec, &vars, &inputs, &mask, LossKind::Softmax, 0.0, Mode::Eval, &mut Rng::new(0))
        .unwrap();
    assert!(tape.scalar(out.loss) < 1e-12);
}

#[test]
fn empty_training_mask_is_rejected() {
    let dataset = four_class_dataset();
    let spec = ModelSpec::gcn();
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 3, 4, &mut Rng::new(7)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let err = total_loss(&mut tape, &spec, &vars, &inputs, &[false; 8], LossKind::Softmax, 0.0, Mode::Eval, &mut Rng::new(0))
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn divergence_reports_the_step() {
    let features = DenseMatrix::from_fn(6, 4, |i, j| if (i + j) % 2 == 0 { 1e308 } else { 0.0 });
    let base = six_node_dataset();
    let dataset = base.with_features(features).unwrap();
    let err = train(&ModelSpec::gcn(), &quick(5), &dataset).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err}");
}

#[test]
fn multi_label_training_uses_micro_f1() {
    let n = 40;
    let mut rng = Rng::new(8);
    let features = DenseMatrix::from_fn(n, 6, |_, _| rng.normal());
    let labels = DenseMatrix::from_fn(n, 3, |i, c| if features.get(i, c) > 0.0 { 1.0 } else { 0.0 });
    let split = Split {
        train: (0..20).collect(),
        val: (20..30).collect(),
        test: (30..40).collect(),
    };
    let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
    let dataset = Dataset::new("multi", Task::MultiLabel, edges, features, labels, split).unwrap();
    let spec = ModelSpec::nsage(2, 1, Combiner::Fc);
    let result = train(&spec, &quick(50), &dataset).unwrap();
    assert!((0.0..=1.0).contains(&result.test_metric));
    let attention = ModelSpec::ngcn(2, 1, Combiner::Attention);
    assert!(train(&attention, &quick(2), &dataset).is_err());
}

#[test]
fn best_run_selection_prefers_earliest_tie() {
    let dataset = generate_sbm(&sbm_smoke()).unwrap();
    let spec = ModelSpec::gcn();
    let ts = quick(10);
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let runs: Vec<_> = (0..3)
        .map(|r| train_prepared(&spec, &ts, &dataset, &inputs, ts.run_seed(r)).unwrap())
        .collect();
    let best = select_best(&runs).unwrap();
    assert!(runs.iter().all(|r| r.best_val_metric <= runs[best].best_val_metric));
    assert!(runs[..best].iter().all(|r| r.best_val_metric < runs[best].best_val_metric));
    assert_eq!(select_best(&[]), None);
}
