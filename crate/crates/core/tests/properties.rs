mod common;

use std::sync::Arc;

use common::{diag, random_edges, random_matrix, with_self_loops};
use ngcn::autodiff::Tape;
use ngcn::data::{Split, Task};
use ngcn::graph::{build_graph, dense_power_oracle, WalkOperator};
use ngcn::models::{network_forward, ModelInputs, Mode};
use ngcn::{Combiner, Dataset, DenseMatrix, ModelParams, ModelSpec, Rng};
use proptest::prelude::*;

fn graph_case() -> impl Strategy<Value = (usize, f64, u64)> {
    (2usize..=50, 0.02f64..0.5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(DenseMatrix::new(3, 4, values).unwrap());
        let y = tape.softmax_rows(x);
        for i in 0..3 {
            let row = tape.value(y).row(i);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn walk_matches_dense_power((n, p, seed) in graph_case(), k in 0usize..=6) {
        let mut rng = Rng::new(seed);
        let edges = random_edges(n, p, &mut rng);
        let s = Arc::new(with_self_loops(&edges, n).sym_normalize().unwrap());
        let h = DenseMatrix::random_uniform(n, 3, -1.0, 1.0, &mut rng);
        let walked = WalkOperator::new(Arc::clone(&s), k).apply(&h).unwrap();
        let dense = dense_power_oracle(&s, k).unwrap().matmul(&h).unwrap();
        prop_assert!(walked.max_abs_diff(&dense) < 1e-10);
    }

    #[test]
    fn power_expands_through_transition_matrix((n, p, seed) in graph_case(), k in 1usize..=6) {
        let edges = random_edges(n, p, &mut Rng::new(seed));
        let a = with_self_loops(&edges, n);
        let d = a.row_sums();
        let lhs = dense_power_oracle(&a.sym_normalize().unwrap(), k).unwrap();
        let t = dense_power_oracle(&a.rw_normalize().unwrap(), k - 1).unwrap();
        let d_inv_sqrt = diag(&d.iter().map(|v| 1.0 / v.sqrt()).collect::<Vec<_>>());
        let rhs = d_inv_sqrt
            .matmul(&a.to_dense()).unwrap()
            .matmul(&t).unwrap()
            .matmul(&d_inv_sqrt).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn symmetric_powers_stay_symmetric_and_bounded((n, p, seed) in graph_case(), k in 1usize..=6) {
        let edges = random_edges(n, p, &mut Rng::new(seed));
        let s = with_self_loops(&edges, n).sym_normalize().unwrap();
        prop_assert!(s.is_symmetric());
        let power = dense_power_oracle(&s, k).unwrap();
        prop_assert!(power.max_abs_diff(&power.transpose()) < 1e-12);
        prop_assert!(power.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn transition_powers_are_row_stochastic((n, p, seed) in graph_case(), k in 0usize..=6) {
        let edges = random_edges(n, p, &mut Rng::new(seed));
        let t = with_self_loops(&edges, n).rw_normalize().unwrap();
        let power = dense_power_oracle(&t, k).unwrap();
        for i in 0..n {
            prop_assert!((power.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_weights_are_convex(logits in proptest::collection::vec(-30.0f64..30.0, 1..24)) {
        let mut tape = Tape::new();
        let m_tilde = tape.constant(DenseMatrix::new(1, logits.len(), logits).unwrap());
        let m = tape.softmax_rows(m_tilde);
        let w = tape.value(m).as_slice();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn small_dataset(n: usize, edges: Vec<(usize, usize)>, seed: u64) -> Dataset {
    let features = random_matrix(n, 5, seed).map(|v| v.max(0.0));
    let labels = DenseMatrix::from_fn(n, 3, |i, c| if i % 3 == c { 1.0 } else { 0.0 });
    let split = Split {
        train: (0..n).collect(),
        ..Split::default()
    };
    Dataset::new("perm", Task::SingleLabel, edges, features, labels, split).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn permuting_nodes_permutes_logits(n in 3usize..=10, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let edges = random_edges(n, 0.4, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let original = small_dataset(n, edges.clone(), seed);
        // Node i of the original becomes node perm[i].
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let permuted = Dataset::new(
            "perm",
            Task::SingleLabel,
            edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
            original.features().select_rows(&inverse),
            original.labels().select_rows(&inverse),
            Split { train: (0..n).collect(), ..Split::default() },
        ).unwrap();

        for spec in [ModelSpec::ngcn(3, 2, Combiner::Fc), ModelSpec::nsage(2, 1, Combiner::Attention)] {
            let params = ModelParams::init(&spec, 5, 3, &mut Rng::new(1)).unwrap();
            let logits = |d: &Dataset| {
                let inputs = ModelInputs::prepare(d, spec.normalization).unwrap();
                let mut tape = Tape::new();
                let vars = params.to_tape(&mut tape);
                let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();
                tape.value(out.logits).clone()
            };
            let a = logits(&original);
            let b = logits(&permuted).select_rows(&perm);
            prop_assert!(a.max_abs_diff(&b) < 1e-10);
        }
    }
}

#[test]
fn module_outputs_depend_only_on_their_own_weights() {
    let mut rng = Rng::new(3);
    let edges = random_edges(8, 0.4, &mut rng);
    let dataset = small_dataset(8, edges, 3);
    let spec = ModelSpec::ngcn(3, 2, Combiner::Fc);
    let inputs = ModelInputs::prepare(&dataset, spec.normalization).unwrap();
    let params = ModelParams::init(&spec, 5, 3, &mut Rng::new(4)).unwrap();
    let mut changed = params.clone();
    for w in &mut changed.modules[2] {
        *w = w.scale(-3.0);
    }
    let outputs = |p: &ModelParams| {
        let mut tape = Tape::new();
        let vars = p.to_tape(&mut tape);
        let out = network_forward(&mut tape, &spec, &vars, &inputs, Mode::Eval, &mut Rng::new(0)).unwrap();
        out.module_outputs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
    };
    let (a, b) = (outputs(&params), outputs(&changed));
    for j in 0..6 {
        if j == 2 {
            assert_ne!(a[j], b[j]);
        } else {
            assert_eq!(a[j], b[j]);
        }
    }
}

#[test]
fn build_graph_is_symmetric_after_symmetrization() {
    let edges = random_edges(30, 0.2, &mut Rng::new(9));
    let directed: Vec<_> = edges.iter().map(|&(a, b)| (b, a)).collect();
    let g = build_graph(&directed, 30, true, false).unwrap();
    assert!(g.is_symmetric());
}
