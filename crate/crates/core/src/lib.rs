//! Networks of graph convolution modules for semi-supervised node
//! classification.
//!
//! A network instantiates `K * r` graph models (GCN or SAGE), where the
//! modules of group `k` consume the `k`-th power of a normalized adjacency
//! matrix, and merges their outputs with either a fully-connected layer or a
//! softmax attention over modules. Everything is trained end-to-end with a
//! small tape-based reverse-mode differentiator over a fixed op set.
//!
//! Crate layout:
//!
//! - [`tensor`], [`rng`]: dense matrices and the seeded PRNG.
//! - [`autodiff`], [`gradcheck`]: the tape, its ops, and finite-difference checks.
//! - [`graph`]: CSR adjacency, normalizations, and the walk-power operator.
//! - [`models`]: GCN / SAGE modules, combiners, network and DCNN configurations.
//! - [`training`], [`metrics`]: losses, Adam, peak-validation training loop.
//! - [`data`]: dataset directory format, synthetic graphs, perturbations.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use data::{Dataset, DatasetManifest, Split, Task};
pub use error::{Error, Result};
pub use graph::{SparseMatrix, WalkOperator};
pub use models::{BaseModel, Combiner, ModelParams, ModelSpec, Normalization};
pub use rng::Rng;
pub use tensor::DenseMatrix;
pub use training::{train, TrainResult, TrainSpec};
