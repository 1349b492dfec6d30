//! Graph modules, combiners and the network of modules.
//!
//! A network holds `K * r` module instances. Instance `(g, i)`, for walk group
//! `g in 0..K` and replica `i in 0..r`, applies the walk operator of power
//! `first_power + g` at every layer. Instances are stored group-major, so
//! index `g * r + i`.

mod modules;
mod network;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{build_graph, SparseMatrix, WalkOperator};
use crate::rng::Rng;
use crate::tensor::{glorot_init, DenseMatrix, SparseRows};

pub use modules::{gcn_module_forward, sage_module_forward, ModuleInput};
pub use network::{attention_combine, dcnn_forward, fc_combine, network_forward, NetworkOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    Gcn,
    Sage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// Concatenate module outputs, then one dense layer to `C` logits.
    Fc,
    /// Convex combination with weights `softmax(m̃)`, one logit per instance.
    Attention,
    /// Pass the single module's output through. Needs `K * r == 1`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `D^{-1/2} (A + I) D^{-1/2}`
    Symmetric,
    /// `D^{-1} (A + I)`
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub base_model: BaseModel,
    /// Number of walk groups.
    pub k: usize,
    /// Replicas per walk group.
    pub r: usize,
    /// Layers per module.
    pub layers: usize,
    pub hidden_dim: usize,
    /// Width of each module's output; `None` means the number of classes.
    pub module_output_dim: Option<usize>,
    pub combiner: Combiner,
    pub normalization: Normalization,
    /// Walk power of group 0.
    pub first_power: usize,
    /// Attention only: mix per-module class distributions and return their
    /// log, instead of mixing raw module logits.
    pub per_module_softmax: bool,
    /// Attention only: add a cross-entropy term on every module's output.
    pub intermediate_supervision: bool,
    /// Apply ReLU to each module's final layer as well.
    pub module_activation: bool,
}

impl ModelSpec {
    /// Two-layer GCN on the symmetric normalization.
    pub fn gcn() -> Self {
        Self {
            base_model: BaseModel::Gcn,
            k: 1,
            r: 1,
            layers: 2,
            hidden_dim: 16,
            module_output_dim: None,
            combiner: Combiner::Identity,
            normalization: Normalization::Symmetric,
            first_power: 1,
            per_module_softmax: false,
            intermediate_supervision: false,
            module_activation: false,
        }
    }

    /// Two-layer mean-aggregation SAGE on the random-walk normalization.
    pub fn sage() -> Self {
        Self {
            base_model: BaseModel::Sage,
            normalization: Normalization::RandomWalk,
            ..Self::gcn()
        }
    }

    /// Network of two-layer GCNs over powers `0..k`.
    pub fn ngcn(k: usize, r: usize, combiner: Combiner) -> Self {
        Self {
            k,
            r,
            combiner,
            first_power: 0,
            per_module_softmax: combiner == Combiner::Attention,
            ..Self::gcn()
        }
    }

    /// Network of two-layer SAGE modules over powers `0..k`.
    pub fn nsage(k: usize, r: usize, combiner: Combiner) -> Self {
        Self {
            base_model: BaseModel::Sage,
            normalization: Normalization::RandomWalk,
            ..Self::ngcn(k, r, combiner)
        }
    }

    /// One-layer, 16-wide channels over transition-matrix powers `0..k`,
    /// concatenated into a dense classifier.
    pub fn dcnn(k: usize) -> Self {
        Self {
            layers: 1,
            module_output_dim: Some(16),
            normalization: Normalization::RandomWalk,
            module_activation: true,
            ..Self::ngcn(k, 1, Combiner::Fc)
        }
    }

    pub fn num_modules(&self) -> usize {
        self.k * self.r
    }

    /// Walk power consumed by module instance `index`.
    pub fn power_of(&self, index: usize) -> usize {
        self.first_power + index / self.r
    }

    pub fn output_dim(&self, num_classes: usize) -> usize {
        self.module_output_dim.unwrap_or(num_classes)
    }

    /// Input/output widths of each module layer.
    pub fn layer_dims(&self, num_features: usize, num_classes: usize) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let d_in = if l == 0 { num_features } else { self.hidden_dim };
                let d_out = if l + 1 == self.layers {
                    self.output_dim(num_classes)
                } else {
                    self.hidden_dim
                };
                (d_in, d_out)
            })
            .collect()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.k == 0 || self.r == 0 || self.layers == 0 || self.hidden_dim == 0 {
            return Err(Error::config("K, r, layers and hidden_dim must all be at least 1"));
        }
        if self.module_output_dim == Some(0) {
            return Err(Error::config("module output width must be at least 1"));
        }
        let out = self.output_dim(num_classes);
        match self.combiner {
            Combiner::Identity => {
                if self.num_modules() != 1 {
                    return Err(Error::config(format!(
                        "identity combiner needs K = r = 1, got K = {}, r = {}",
                        self.k, self.r
                    )));
                }
                if out != num_classes {
                    return Err(Error::config("identity combiner needs module output width = classes"));
                }
            }
            Combiner::Attention => {
                if out != num_classes {
                    return Err(Error::config(format!(
                        "attention needs module output width = classes ({num_classes}), got {out}"
                    )));
                }
            }
            Combiner::Fc => {}
        }
        if self.combiner != Combiner::Attention && (self.per_module_softmax || self.intermediate_supervision) {
            return Err(Error::config(
                "per-module softmax and intermediate supervision need the attention combiner",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerParams {
    Identity,
    Fc(DenseMatrix),
    /// `1 x (K * r)` attention logits m̃.
    Attention(DenseMatrix),
}

/// Trainable state of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Per instance, the weight of each layer.
    pub modules: Vec<Vec<DenseMatrix>>,
    pub combiner: CombinerParams,
}

impl ModelParams {
    /// Glorot-uniform weights, zero attention logits. Draws module by module,
    /// layer by layer, then the combiner.
    pub fn init(spec: &ModelSpec, num_features: usize, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        spec.validate(num_classes)?;
        let dims = spec.layer_dims(num_features, num_classes);
        let fan = match spec.base_model {
            BaseModel::Gcn => 1,
            BaseModel::Sage => 2,
        };
        let modules = (0..spec.num_modules())
            .map(|_| dims.iter().map(|&(i, o)| glorot_init(fan * i, o, rng)).collect())
            .collect();
        let combiner = match spec.combiner {
            Combiner::Identity => CombinerParams::Identity,
            Combiner::Fc => {
                let width = spec.num_modules() * spec.output_dim(num_classes);
                CombinerParams::Fc(glorot_init(width, num_classes, rng))
            }
            Combiner::Attention => CombinerParams::Attention(DenseMatrix::zeros(1, spec.num_modules())),
        };
        Ok(Self { modules, combiner })
    }

    /// Registers every tensor as a tape parameter.
    pub fn to_tape(&self, tape: &mut Tape) -> ParamVars {
        let modules = self
            .modules
            .iter()
            .map(|ws| ws.iter().map(|w| tape.param(w.clone())).collect())
            .collect();
        let combiner = match &self.combiner {
            CombinerParams::Identity => CombinerVars::Identity,
            CombinerParams::Fc(w) => CombinerVars::Fc(tape.param(w.clone())),
            CombinerParams::Attention(m) => CombinerVars::Attention(tape.param(m.clone())),
        };
        ParamVars { modules, combiner }
    }

    /// All tensors in a fixed order: modules, then the combiner.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out: Vec<&DenseMatrix> = self.modules.iter().flatten().collect();
        match &self.combiner {
            CombinerParams::Identity => {}
            CombinerParams::Fc(w) | CombinerParams::Attention(w) => out.push(w),
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = self.modules.iter_mut().flatten().collect();
        match &mut self.combiner {
            CombinerParams::Identity => {}
            CombinerParams::Fc(w) | CombinerParams::Attention(w) => out.push(w),
        }
        out
    }

    /// `softmax(m̃)` for attention networks.
    pub fn attention_weights(&self) -> Option<Vec<f64>> {
        match &self.combiner {
            CombinerParams::Attention(m) => {
                let mut w = m.as_slice().to_vec();
                crate::tensor::softmax_in_place(&mut w);
                Some(w)
            }
            _ => None,
        }
    }

    /// Sum of squared entries over the weight matrices (module layers and the
    /// fc combiner; attention logits excluded).
    pub fn weight_sum_squares(&self) -> f64 {
        let modules: f64 = self.modules.iter().flatten().map(DenseMatrix::sum_squares).sum();
        match &self.combiner {
            CombinerParams::Fc(w) => modules + w.sum_squares(),
            _ => modules,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CombinerVars {
    Identity,
    Fc(Var),
    Attention(Var),
}

/// Tape handles for a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub modules: Vec<Vec<Var>>,
    pub combiner: CombinerVars,
}

impl ParamVars {
    /// Same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.modules.iter().flatten().copied().collect();
        match self.combiner {
            CombinerVars::Identity => {}
            CombinerVars::Fc(v) | CombinerVars::Attention(v) => out.push(v),
        }
        out
    }

    /// Weight matrices subject to L2 regularization.
    pub fn regularized(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.modules.iter().flatten().copied().collect();
        if let CombinerVars::Fc(w) = self.combiner {
            out.push(w);
        }
        out
    }
}

/// Dataset tensors in the form the forward pass consumes.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub features: Arc<SparseRows>,
    /// Normalized `A + I` of the symmetrized graph.
    pub operator: Arc<SparseMatrix>,
    pub labels: Arc<DenseMatrix>,
}

impl ModelInputs {
    pub fn prepare(dataset: &Dataset, normalization: Normalization) -> Result<Self> {
        let adjacency = build_graph(dataset.edges(), dataset.n(), true, true)?;
        let operator = match normalization {
            Normalization::Symmetric => adjacency.sym_normalize()?,
            Normalization::RandomWalk => adjacency.rw_normalize()?,
        };
        Ok(Self {
            features: Arc::new(SparseRows::from_dense(dataset.features())),
            operator: Arc::new(operator),
            labels: Arc::clone(dataset.labels()),
        })
    }

    pub fn from_parts(features: &DenseMatrix, operator: SparseMatrix, labels: DenseMatrix) -> Result<Self> {
        if features.rows() != operator.n() || labels.rows() != operator.n() {
            return Err(Error::config(format!(
                "inputs disagree on node count: features {}, operator {}, labels {}",
                features.rows(),
                operator.n(),
                labels.rows()
            )));
        }
        Ok(Self {
            features: Arc::new(SparseRows::from_dense(features)),
            operator: Arc::new(operator),
            labels: Arc::new(labels),
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn walk(&self, power: usize) -> WalkOperator {
        WalkOperator::new(Arc::clone(&self.operator), power)
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout: f64 },
    Eval,
}

impl Mode {
    pub fn dropout(self) -> f64 {
        match self {
            Mode::Train { dropout } => dropout,
            Mode::Eval => 0.0,
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}
