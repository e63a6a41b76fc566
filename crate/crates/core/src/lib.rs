//! Winner-take-all (WTA) hashing for large output layers.
//!
//! A classification layer `Y = X·Wᵀ` with many output units is evaluated
//! only at the units whose weight rows collide most often, across `Q`
//! independent WTA hashes, with each input row. The remaining units share
//! a single default logit which enters the softmax through a closed-form
//! tail term. A dense reference layer lives alongside the sparse one and
//! serves as the correctness oracle and timing baseline.
//!
//! Module map:
//! - [`wta`]: permutations and hash codes.
//! - [`index`]: multi-table unit index, vote counting, active-set selection.
//! - [`layer`]: dense and sparse forward/backward, softmax cross-entropy, SGD.
//! - [`trainer`]: mini-batch training loop, evaluation and `(A, Q)` sweeps.
//! - [`dataset`]: binary/CSV ingestion and the synthetic cluster generator.

pub mod dataset;
pub mod error;
mod format;
pub mod index;
pub mod layer;
pub mod matrix;
pub mod trainer;
pub mod wta;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use index::{ActiveSet, ActiveUnit, MultiHashIndex, Votes};
pub use layer::{LayerParams, RowSparseGrad, SparseGrad, SparseOutput, SparseRows};
pub use matrix::DenseMatrix;
pub use trainer::{Mode, TrainConfig, TrainReport};
pub use wta::{HashCode, PermutationSet, WtaConfig};
