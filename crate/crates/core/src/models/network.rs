//! The network of modules and its combiners.

use super::modules::{gcn_module_forward, sage_module_forward, ModuleInput};
use super::{BaseModel, Combiner, CombinerVars, ModelInputs, ModelSpec, Mode, Normalization, ParamVars};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct NetworkOutput {
    /// Combined `N x C` logits, fed to the loss.
    pub logits: Var,
    /// Output of every module instance, group-major.
    pub module_outputs: Vec<Var>,
    /// `softmax(m̃)` as a `1 x (K * r)` node, for attention networks.
    pub attention: Option<Var>,
}

/// `concat(outputs) · w_fc`.
pub fn fc_combine(tape: &mut Tape, outputs: &[Var], w_fc: Var) -> Result<Var> {
    let joined = tape.concat_cols(outputs)?;
    let width = tape.value(joined).cols();
    let rows = tape.value(w_fc).rows();
    if width != rows {
        return Err(Error::config(format!(
            "fc combiner: {width} concatenated columns for a {rows}-row weight"
        )));
    }
    tape.matmul(joined, w_fc)
}

/// `Σ_j m_j · outputs_j` with `m = softmax(m̃)`.
///
/// With `per_module_softmax`, each output is turned into a class distribution
/// first and the result is `ln Σ_j m_j softmax(outputs_j)`: a row softmax of
/// that returns the mixture itself, so the usual softmax cross-entropy scores
/// the mixture probabilities. Returns the combined node and the `m` node.
pub fn attention_combine(
    tape: &mut Tape,
    outputs: &[Var],
    m_tilde: Var,
    per_module_softmax: bool,
) -> Result<(Var, Var)> {
    let m = tape.softmax_rows(m_tilde);
    if per_module_softmax {
        let probs: Vec<Var> = outputs.iter().map(|&o| tape.softmax_rows(o)).collect();
        let mixture = tape.weighted_sum(m, &probs)?;
        Ok((tape.ln(mixture), m))
    } else {
        Ok((tape.weighted_sum(m, outputs)?, m))
    }
}

/// Runs every module instance in order, then the combiner.
pub fn network_forward(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParamVars,
    inputs: &ModelInputs,
    mode: Mode,
    rng: &mut Rng,
) -> Result<NetworkOutput> {
    spec.validate(inputs.num_classes())?;
    if params.modules.len() != spec.num_modules() {
        return Err(Error::config(format!(
            "{} module weight stacks for {} instances",
            params.modules.len(),
            spec.num_modules()
        )));
    }
    let forward = match spec.base_model {
        BaseModel::Gcn => gcn_module_forward,
        BaseModel::Sage => sage_module_forward,
    };
    let mut module_outputs = Vec::with_capacity(spec.num_modules());
    for (index, weights) in params.modules.iter().enumerate() {
        if weights.len() != spec.layers {
            return Err(Error::config(format!(
                "module {index} has {} layers, spec says {}",
                weights.len(),
                spec.layers
            )));
        }
        let walk = inputs.walk(spec.power_of(index));
        let out = forward(
            tape,
            &walk,
            ModuleInput::Features(&inputs.features),
            weights,
            mode,
            rng,
            spec.module_activation,
        )?;
        module_outputs.push(out);
    }

    let (logits, attention) = match (spec.combiner, params.combiner) {
        (Combiner::Identity, CombinerVars::Identity) => (module_outputs[0], None),
        (Combiner::Fc, CombinerVars::Fc(w)) => (fc_combine(tape, &module_outputs, w)?, None),
        (Combiner::Attention, CombinerVars::Attention(m_tilde)) => {
            let (logits, m) = attention_combine(tape, &module_outputs, m_tilde, spec.per_module_softmax)?;
            (logits, Some(m))
        }
        (c, _) => return Err(Error::config(format!("parameters do not match the {c:?} combiner"))),
    };
    Ok(NetworkOutput {
        logits,
        module_outputs,
        attention,
    })
}

/// [`network_forward`] restricted to diffusion-CNN shaped specs: one layer per
/// channel, transition-matrix normalization, `r = 1`, fc classifier.
pub fn dcnn_forward(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParamVars,
    inputs: &ModelInputs,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    if spec.layers != 1
        || spec.r != 1
        || spec.normalization != Normalization::RandomWalk
        || spec.combiner != Combiner::Fc
        || spec.base_model != BaseModel::Gcn
    {
        return Err(Error::config(
            "DCNN needs a GCN base, one layer, r = 1, random-walk normalization and an fc combiner",
        ));
    }
    Ok(network_forward(tape, spec, params, inputs, mode, rng)?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMatrix;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        DenseMatrix::random_uniform(rows, cols, -1.0, 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn fc_identity_and_selection() {
        let a = random(4, 2, 1);
        let b = random(4, 2, 2);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b));
        let eye = tape.constant(DenseMatrix::identity(2));
        let out = fc_combine(&mut tape, &[va], eye).unwrap();
        assert_eq!(tape.value(out), &a);
        let select = tape.constant(DenseMatrix::from_rows(&[
            [1.0, 0.0],
            [0.0, 1.0],
            [0.0, 0.0],
            [0.0, 0.0],
        ]));
        let out = fc_combine(&mut tape, &[va, vb], select).unwrap();
        assert_eq!(tape.value(out), &a);
        assert!(fc_combine(&mut tape, &[va], select).is_err());
    }

    #[test]
    fn attention_average_and_endpoint() {
        let (a, b, c) = (random(3, 2, 3), random(3, 2, 4), random(3, 2, 5));
        let mut tape = Tape::new();
        let parts = [tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(c)];
        let zeros = tape.constant(DenseMatrix::zeros(1, 2));
        let (avg, _) = attention_combine(&mut tape, &parts[..2], zeros, false).unwrap();
        let expected = a.add(&b).unwrap().scale(0.5);
        assert!(tape.value(avg).max_abs_diff(&expected) < 1e-15);
        let peaked = tape.constant(DenseMatrix::from_rows(&[[1000.0, 0.0, 0.0]]));
        let (first, m) = attention_combine(&mut tape, &parts, peaked, false).unwrap();
        assert_eq!(tape.value(first), &a);
        assert_eq!(tape.value(m).as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn attention_mixture_of_distributions() {
        let (a, b) = (random(3, 4, 6), random(3, 4, 7));
        let mut tape = Tape::new();
        let parts = [tape.constant(a.clone()), tape.constant(b.clone())];
        let m_tilde = tape.constant(DenseMatrix::from_rows(&[[0.3, -0.2]]));
        let (logits, _) = attention_combine(&mut tape, &parts, m_tilde, true).unwrap();
        let w0 = 0.3f64.exp() / (0.3f64.exp() + (-0.2f64).exp());
        for i in 0..3 {
            let soft = |row: &[f64]| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                row.iter().map(|v| v.exp() / z).collect::<Vec<_>>()
            };
            let (pa, pb) = (soft(a.row(i)), soft(b.row(i)));
            for j in 0..4 {
                let p = w0 * pa[j] + (1.0 - w0) * pb[j];
                assert!((tape.value(logits).get(i, j) - p.ln()).abs() < 1e-12);
            }
        }
    }
}
