//! GCN and SAGE module stacks.

use std::sync::Arc;

use super::Mode;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::WalkOperator;
use crate::rng::Rng;
use crate::tensor::SparseRows;

/// First-layer input of a module.
#[derive(Debug, Clone, Copy)]
pub enum ModuleInput<'a> {
    /// Constant node features; dropout draws only on stored entries.
    Features(&'a Arc<SparseRows>),
    /// Any tape node.
    Node(Var),
}

/// `Z · W` after input dropout; dense inputs go through the tape's dropout,
/// sparse features are resampled outside the tape since they carry no
/// gradient.
enum Dropped {
    Sparse(Arc<SparseRows>),
    Dense(Var),
}

impl Dropped {
    fn new(tape: &mut Tape, input: ModuleInput<'_>, mode: Mode, rng: &mut Rng) -> Result<Self> {
        Ok(match input {
            ModuleInput::Features(x) if mode.is_training() && mode.dropout() > 0.0 => {
                Dropped::Sparse(Arc::new(x.dropout(mode.dropout(), rng)?))
            }
            ModuleInput::Features(x) => Dropped::Sparse(Arc::clone(x)),
            ModuleInput::Node(v) => Dropped::Dense(tape.dropout(v, mode.dropout(), rng, mode.is_training())?),
        })
    }

    fn cols(&self, tape: &Tape) -> usize {
        match self {
            Dropped::Sparse(x) => x.cols(),
            Dropped::Dense(v) => tape.value(*v).cols(),
        }
    }

    fn matmul(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        match self {
            Dropped::Sparse(x) => tape.sparse_matmul(x, w),
            Dropped::Dense(v) => tape.matmul(*v, w),
        }
    }
}

fn check_layers(weights: &[Var]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::config("module has no layers"));
    }
    Ok(())
}

/// Stack of `Z ← σ(Â^k Z W)` layers; the final layer is linear unless
/// `final_activation`.
///
/// Each layer applies dropout to its input. Since `Â^k (Z W) = (Â^k Z) W`, the
/// product is taken first whenever it narrows the matrix (always on the
/// feature layer), which keeps the sparse products at hidden width.
pub fn gcn_module_forward(
    tape: &mut Tape,
    walk: &WalkOperator,
    input: ModuleInput<'_>,
    weights: &[Var],
    mode: Mode,
    rng: &mut Rng,
    final_activation: bool,
) -> Result<Var> {
    check_layers(weights)?;
    let mut current = input;
    let mut out = None;
    for (l, &w) in weights.iter().enumerate() {
        let z = Dropped::new(tape, current, mode, rng)?;
        let (d_in, d_out) = tape.value(w).shape();
        if z.cols(tape) != d_in {
            return Err(Error::config(format!(
                "GCN layer {l}: input width {} vs weight {d_in}x{d_out}",
                z.cols(tape)
            )));
        }
        let h = match &z {
            Dropped::Dense(v) if d_out > d_in => {
                let walked = walk.apply_on(tape, *v)?;
                tape.matmul(walked, w)?
            }
            _ => {
                let projected = z.matmul(tape, w)?;
                walk.apply_on(tape, projected)?
            }
        };
        let last = l + 1 == weights.len();
        let h = if !last || final_activation { tape.relu(h) } else { h };
        current = ModuleInput::Node(h);
        out = Some(h);
    }
    Ok(out.expect("at least one layer"))
}

/// Stack of `Z ← L2NormalizeRows(σ([Z ∥ Â^k Z] W))` layers with mean
/// aggregation; the final layer skips σ unless `final_activation` but is
/// still normalized.
///
/// The concatenated product is computed as `Z W_self + Â^k (Z W_neigh)` where
/// `W_self`, `W_neigh` are the top and bottom halves of `W`.
pub fn sage_module_forward(
    tape: &mut Tape,
    walk: &WalkOperator,
    input: ModuleInput<'_>,
    weights: &[Var],
    mode: Mode,
    rng: &mut Rng,
    final_activation: bool,
) -> Result<Var> {
    check_layers(weights)?;
    let mut current = input;
    let mut out = None;
    for (l, &w) in weights.iter().enumerate() {
        let z = Dropped::new(tape, current, mode, rng)?;
        let d_in = z.cols(tape);
        let (rows, d_out) = tape.value(w).shape();
        if rows != 2 * d_in {
            return Err(Error::config(format!(
                "SAGE layer {l}: input width {d_in} needs a {}-row weight, got {rows}x{d_out}",
                2 * d_in
            )));
        }
        let w_self = tape.slice_rows(w, 0, d_in)?;
        let w_neigh = tape.slice_rows(w, d_in, d_in)?;
        let own = z.matmul(tape, w_self)?;
        let neigh = z.matmul(tape, w_neigh)?;
        let neigh = walk.apply_on(tape, neigh)?;
        let h = tape.add(own, neigh)?;
        let last = l + 1 == weights.len();
        let h = if !last || final_activation { tape.relu(h) } else { h };
        let h = tape.l2_normalize_rows(h);
        current = ModuleInput::Node(h);
        out = Some(h);
    }
    Ok(out.expect("at least one layer"))
}
