//! Low rank word embedders.
//!
//! Every model here is trained on a global loss `Σ_ij f_ij(ψ_ij, φ_ij)` where
//! `ψ` is a kernel of the learned vectors and covectors and `φ` is an
//! association statistic of the corpus. The derivative `∂f/∂ψ` factors as a
//! non-negative multiplier times a difference that vanishes at the model's
//! fixed point, so training drives `⟨i|j⟩` toward (shifted or scaled) PMI.
//!
//! Pipeline: [`corpus`] counts windowed cooccurrences, [`association`]
//! computes PMI-family targets, [`objective`] defines the per-pair losses
//! and characteristic gradients, [`model`] holds parameters and kernels,
//! [`trainer`] runs gradient descent, [`svd`] gives the closed form solution
//! and [`eval`] measures how close a model sits to its fixed points.

pub mod association;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod svd;
pub mod synthetic;
pub mod trainer;

pub use association::{AssociationKind, AssociationSpec};
pub use corpus::{CoocStats, Vocabulary, Weighting, WindowConfig};
pub use error::{Error, Result};
pub use model::{EmbeddingModel, KernelSpec};
pub use objective::{CharGrad, Family, ObjectiveSpec};
pub use scalar::Scalar;
pub use trainer::{PairPolicy, TrainConfig, TrainReport};

/// Single precision model.
pub type EmbeddingModel32 = EmbeddingModel<f32>;
/// Double precision model.
pub type EmbeddingModel64 = EmbeddingModel<f64>;
/// Double precision characteristic gradient.
pub type CharGrad64 = CharGrad<f64>;
/// Double precision dense association matrix.
pub type DenseAssocMatrix64 = svd::DenseAssocMatrix<f64>;
