//! Domain-decomposed image classification on a self-contained tensor engine.
//!
//! The crate provides three families of classifiers over tiled images —
//! local-LDA + dense-network aggregation, a coherent CNN-DNN with transfer
//! learning, and a channel-decomposed CNN with transfer learning — together
//! with the numeric kernels they need: a dense tensor type with 64-bit
//! accumulation, a symmetric eigensolver, reverse-mode differentiation, and
//! the experiment pipelines that tie everything together.

pub mod autodiff;
pub mod data;
pub mod decomp;
pub mod error;
pub mod lda;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{matmul, Precision, SymmetricMatrix, Tensor};
