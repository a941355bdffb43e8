//! Fisher-Bures adversarial graph convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`sparsela`] – CSR storage and the sparse kernels the rest of the crate
//!   relies on (renormalization, Laplacian/density matrix, `spmm`).
//! * [`graphstore`] – the on-disk dataset container, splits and synthetic graphs.
//! * [`proximity`] – high-order random-walk preprocessing of the adjacency.
//! * [`spectral`] – top-k Lanczos eigenpairs, the rank-k Bures projection,
//!   Bures/Hellinger distances and spectral diagnostics.
//! * [`perturb`] – noise draws and the low-rank spectral perturbation of the
//!   propagation operator.
//! * [`gcnnet`] – a two-layer GCN with hand-written backprop, Adam and the
//!   minimax trainer.
//! * [`geometry`] – closed forms for the extrinsic and embedding Fisher
//!   information, used to verify the theory against finite differences.
//! * [`cli`] – command implementations behind the `fbgcn` binary.

pub mod cli;
pub mod error;
pub mod gcnnet;
pub mod geometry;
pub mod graphstore;
pub mod perturb;
pub mod proximity;
pub mod sparsela;
pub mod spectral;

pub use error::{Error, Result};

/// Dense matrices are column-major `f64` throughout.
pub type Dense = nalgebra::DMatrix<f64>;
