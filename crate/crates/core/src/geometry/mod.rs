//! Closed forms for Fisher information in two settings, kept dense and
//! test-sized so they can be checked against finite differences.
//!
//! * [`extrinsic`]: the Fisher information of a trained GCN's likelihood with
//!   respect to a spectral perturbation `φ` and with respect to its weights.
//! * [`embedding`]: the observed Fisher information (the Hessian) of the
//!   KL stress of a Gaussian-kernel node embedding.

pub mod embedding;
pub mod extrinsic;

pub use embedding::{
    embedding_gradient, embedding_observed_fim, kl_stress, similarity_of, EmbeddingProblem,
};
pub use extrinsic::{
    adjacency_tangent, extrinsic_fim_phi, extrinsic_fim_weights, per_sample_weight_gradients,
    phi_scores, FimInput,
};
