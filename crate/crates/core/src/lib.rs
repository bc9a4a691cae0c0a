//! Score-based generative social denoising for top-K recommendation.
//!
//! Collaborative embeddings come from LightGCN over the user-item graph,
//! social embeddings from a GCN over the trust graph. A conditional
//! score network learns to denoise social embeddings (VE or VP SDE,
//! Predictor-Corrector sampling) under a curriculum of sparsified social
//! graphs, and a contrastive loss transfers the denoised signal into the
//! collaborative domain that drives BPR-trained ranking.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod graphs;
pub mod nn;
pub mod objectives;
pub mod sgm;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use sparse::SparseMatrix;
pub use tensor::{EmbeddingTable, Matrix};
