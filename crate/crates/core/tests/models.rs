mod common;

use std::sync::Arc;

use common::{random_edges, random_matrix, six_node_dataset};
use ngcn::autodiff::Tape;
use ngcn::data::{Split, Task};
use ngcn::graph::dense_power_oracle;
use ngcn::models::{
    dcnn_forward, gcn_module_forward, network_forward, sage_module_forward, CombinerParams, ModelInputs,
    ModuleInput, Mode,
};
use ngcn::tensor::SparseRows;
use ngcn::{Combiner, Dataset, DenseMatrix, ModelParams, ModelSpec, Normalization, Rng};

fn relu(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| v.max(0.0))
}

fn normalize_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Network logits next to a direct call of the single module, both in
/// training mode with the same seed.
fn recovery_pair(spec: &ModelSpec) -> (DenseMatrix, DenseMatrix) {
    let dataset = six_node_dataset();
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(spec, 4, 3, &mut Rng::new(11)).unwrap();
    let mode = Mode::Train { dropout: 0.5 };

    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = network_forward(&mut tape, spec, &vars, &inputs, mode, &mut Rng::new(12)).unwrap();
    let network = tape.value(out.logits).clone();

    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let walk = inputs.walk(1);
    let forward = match spec.base_model {
        ngcn::BaseModel::Gcn => gcn_module_forward,
        ngcn::BaseModel::Sage => sage_module_forward,
    };
    let module = forward(
        &mut tape,
        &walk,
        ModuleInput::Features(&inputs.features),
        &vars.modules[0],
        mode,
        &mut Rng::new(12),
        false,
    )
    .unwrap();
    (network, tape.value(module).clone())
}

#[test]
fn network_of_one_gcn_is_the_gcn() {
    let spec = ModelSpec {
        first_power: 1,
        ..ModelSpec::ngcn(1, 1, Combiner::Identity)
    };
    assert_eq!(spec, ModelSpec::gcn());
    let (network, module) = recovery_pair(&spec);
    assert_eq!(network, module);
}

#[test]
fn network_of_one_sage_is_the_sage() {
    let spec = ModelSpec {
        first_power: 1,
        ..ModelSpec::nsage(1, 1, Combiner::Identity)
    };
    assert_eq!(spec, ModelSpec::sage());
    let (network, module) = recovery_pair(&spec);
    assert_eq!(network, module);
}

#[test]
fn gcn_matches_hand_composed_dense_pipeline() {
    let dataset = six_node_dataset();
    let spec = ModelSpec::gcn();
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 4, 3, &mut Rng::new(13)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();

    let a = inputs.operator.to_dense();
    let x = dataset.features().as_ref();
    let (w0, w1) = (&params.modules[0][0], &params.modules[0][1]);
    let hidden = relu(&a.matmul(x).unwrap().matmul(w0).unwrap());
    let expected = a.matmul(&hidden).unwrap().matmul(w1).unwrap();
    assert!(tape.value(out.logits).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn sage_matches_hand_composed_dense_pipeline() {
    let dataset = six_node_dataset();
    let spec = ModelSpec::sage();
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 4, 3, &mut Rng::new(14)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();

    let t = inputs.operator.to_dense();
    let x = dataset.features().as_ref().clone();
    let layer = |z: &DenseMatrix, w: &DenseMatrix, act: bool| {
        let agg = t.matmul(z).unwrap();
        let h = DenseMatrix::concat_cols(&[z, &agg]).unwrap().matmul(w).unwrap();
        normalize_rows(&if act { relu(&h) } else { h })
    };
    let z1 = layer(&x, &params.modules[0][0], true);
    let expected = layer(&z1, &params.modules[0][1], false);
    assert!(tape.value(out.logits).max_abs_diff(&expected) < 1e-10);
}

#[test]
fn identity_first_layer_gives_squared_adjacency() {
    let dataset = six_node_dataset();
    let inputs = ModelInputs::prepare(&dataset, Normalization::Symmetric).unwrap();
    let w1 = random_matrix(4, 3, 15);
    let mut tape = Tape::new();
    let v0 = tape.param(DenseMatrix::identity(4));
    let v1 = tape.param(w1.clone());
    let out = gcn_module_forward(
        &mut tape,
        &inputs.walk(1),
        ModuleInput::Features(&inputs.features),
        &[v0, v1],
        Mode::Eval,
        &mut Rng::new(0),
        false,
    )
    .unwrap();
    let a2 = dense_power_oracle(&inputs.operator, 2).unwrap();
    let expected = a2.matmul(dataset.features()).unwrap().matmul(&w1).unwrap();
    assert!(tape.value(out).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn dcnn_matches_hand_composed_pipeline() {
    let dataset = six_node_dataset();
    let spec = ModelSpec::dcnn(3);
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 4, 3, &mut Rng::new(16)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let logits = dcnn_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();

    let transition = inputs.operator.to_dense();
    let x = dataset.features().as_ref();
    let channels: Vec<DenseMatrix> = (0..3)
        .map(|k| {
            let tk = ngcn::graph::dense_power_oracle(&inputs.operator, k).unwrap();
            assert!(k != 1 || tk.max_abs_diff(&transition) == 0.0);
            relu(&tk.matmul(x).unwrap().matmul(&params.modules[k][0]).unwrap())
        })
        .collect();
    let refs: Vec<&DenseMatrix> = channels.iter().collect();
    let CombinerParams::Fc(w_fc) = &params.combiner else {
        panic!("DCNN uses an fc combiner");
    };
    assert_eq!(w_fc.shape(), (48, 3));
    let expected = DenseMatrix::concat_cols(&refs).unwrap().matmul(w_fc).unwrap();
    assert!(tape.value(logits).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn dcnn_with_one_channel_is_a_single_layer_on_features() {
    let dataset = six_node_dataset();
    let spec = ModelSpec::dcnn(1);
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 4, 3, &mut Rng::new(17)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let logits = dcnn_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();
    let CombinerParams::Fc(w_fc) = &params.combiner else {
        panic!("DCNN uses an fc combiner");
    };
    let expected = relu(&dataset.features().matmul(&params.modules[0][0]).unwrap())
        .matmul(w_fc)
        .unwrap();
    assert!(tape.value(logits).max_abs_diff(&expected) < 1e-12);
    assert!(dcnn_forward(&mut tape, &ModelSpec::gcn(), &vars, &inputs, Mode::Eval, &mut Rng::new(0)).is_err());
}

#[test]
fn twenty_four_instances_feed_the_fc_layer() {
    let dataset = six_node_dataset();
    let spec = ModelSpec::ngcn(6, 4, Combiner::Fc);
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 4, 3, &mut Rng::new(18)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();
    assert_eq!(out.module_outputs.len(), 24);
    let CombinerParams::Fc(w_fc) = &params.combiner else {
        panic!("fc spec");
    };
    assert_eq!(w_fc.rows(), 24 * 3);
    assert_eq!(tape.value(out.logits).shape(), (6, 3));
}

#[test]
fn one_hot_attention_selects_first_module() {
    let dataset = six_node_dataset();
    for per_module_softmax in [false, true] {
        let spec = ModelSpec {
            per_module_softmax,
            ..ModelSpec::ngcn(3, 1, Combiner::Attention)
        };
        let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
        let mut params = ModelParams::init(&spec, 4, 3, &mut Rng::new(19)).unwrap();
        params.combiner = CombinerParams::Attention(DenseMatrix::from_rows(&[[1000.0, 0.0, 0.0]]));
        assert_eq!(params.attention_weights().unwrap(), vec![1.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let vars = params.to_tape(&mut tape);
        let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();
        let first = tape.value(out.module_outputs[0]).clone();
        let logits = tape.value(out.logits).clone();
        if per_module_softmax {
            let a = tape.constant(logits);
            let b = tape.constant(first);
            let (pa, pb) = (tape.softmax_rows(a), tape.softmax_rows(b));
            assert!(tape.value(pa).max_abs_diff(tape.value(pb)) < 1e-12);
        } else {
            assert_eq!(logits, first);
        }
    }
}

#[test]
fn cora_sized_output_shape() {
    let (n, f, c) = (2708, 1433, 7);
    let mut rng = Rng::new(20);
    let edges = random_edges(n, 1.5 / n as f64, &mut rng);
    let features = DenseMatrix::from_fn(n, f, |_, _| if rng.bernoulli(0.0127) { 1.0 } else { 0.0 });
    let labels = DenseMatrix::from_fn(n, c, |i, j| if i % c == j { 1.0 } else { 0.0 });
    let split = Split {
        train: (0..140).collect(),
        ..Split::default()
    };
    let dataset = Dataset::new("cora-shaped", Task::SingleLabel, edges, features, labels, split).unwrap();
    let spec = ModelSpec::gcn();
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, f, c, &mut Rng::new(21)).unwrap();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Train { dropout: 0.5 }, &mut rng).unwrap();
    assert_eq!(tape.value(out.logits).shape(), (2708, 7));
}

#[test]
fn sparse_dropout_equals_dense_dropout_then_product() {
    let x = random_matrix(7, 9, 22).map(|v| if v > 0.2 { v } else { 0.0 });
    let w = random_matrix(9, 4, 23);
    let sparse = Arc::new(SparseRows::from_dense(&x).dropout(0.5, &mut Rng::new(24)).unwrap());
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let dropped = tape.dropout(xv, 0.5, &mut Rng::new(24), true).unwrap();
    let wv = tape.param(w);
    let dense = tape.matmul(dropped, wv).unwrap();
    let via_sparse = tape.sparse_matmul(&sparse, wv).unwrap();
    assert_eq!(tape.value(dense), tape.value(via_sparse));
}
