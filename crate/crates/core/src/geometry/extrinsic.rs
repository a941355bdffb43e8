//! Extrinsic Fisher information of a two-layer GCN.
//!
//! For node `i` with loss `ℓᵢ = −log p(yᵢ | X, Ã, W)`, the derivative with
//! respect to the propagation matrix is
//!
//! ```text
//! ∂ℓᵢ/∂Ã = Σₗ Eˡ⁺¹ (Hˡ Wˡ)ᵀ,   E² = ∂ℓᵢ/∂Z²,   E¹ = (Ã E² W²ᵀ) ∘ ReLU′(Z¹)
//! ```
//!
//! symmetrized to `(G + Gᵀ)/2` because `Ã` is. A scalar perturbation `φ`
//! along a direction `v` of the top-k spectrum moves `Ã` by
//! `−c Ū diag(J v) Ūᵀ` with `J = diag(λ̄) − λ̄λ̄ᵀ`, the Jacobian of the
//! softmax at `φ = 0`, and `c` the basis' correction scale. The Fisher
//! information is the mean of the squared per-node scores.
//!
//! Everything here has its own dense forward pass so it can serve as an
//! independent check on the sparse training code.

use crate::gcnnet::GcnModel;
use crate::spectral::SpectralBasis;
use crate::{Dense, Error, Result};

/// A dense problem instance: propagation matrix, features, and the labelled
/// nodes that act as samples.
#[derive(Clone, Copy, Debug)]
pub struct FimInput<'a> {
    pub a_tilde: &'a Dense,
    pub features: &'a Dense,
    /// One label per node.
    pub labels: &'a [usize],
    pub nodes: &'a [usize],
}

impl FimInput<'_> {
    fn check(&self, model: &GcnModel) -> Result<()> {
        let n = self.a_tilde.nrows();
        if !self.a_tilde.is_square() || self.features.nrows() != n || self.labels.len() != n {
            return Err(Error::Argument("inconsistent problem dimensions".into()));
        }
        if self.features.ncols() != model.w1.nrows() {
            return Err(Error::Argument("feature width differs from W1".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Argument("no sample nodes".into()));
        }
        let o = model.w2.ncols();
        for &i in self.nodes {
            if i >= n || self.labels[i] >= o {
                return Err(Error::Argument(format!("sample node {i} out of range")));
            }
        }
        Ok(())
    }
}

struct Activations {
    xw1: Dense,
    z1: Dense,
    h1: Dense,
    h1w2: Dense,
    logits: Dense,
}

fn dense_forward(model: &GcnModel, a: &Dense, x: &Dense) -> Activations {
    let xw1 = x * &model.w1;
    let z1 = a * &xw1;
    let h1 = z1.map(|v| v.max(0.0));
    let h1w2 = &h1 * &model.w2;
    let logits = a * &h1w2;
    Activations {
        xw1,
        z1,
        h1,
        h1w2,
        logits,
    }
}

/// Errors `(E², E¹)` of the single-node loss `ℓᵢ`.
fn node_errors(
    model: &GcnModel,
    a: &Dense,
    act: &Activations,
    i: usize,
    y: usize,
) -> (Dense, Dense) {
    let row = act.logits.row(i);
    let max = row.max();
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let mut e2 = Dense::zeros(act.logits.nrows(), act.logits.ncols());
    for c in 0..row.len() {
        e2[(i, c)] = (row[c] - max).exp() / z - if c == y { 1.0 } else { 0.0 };
    }
    let mut e1 = a.tr_mul(&e2) * model.w2.transpose();
    e1.zip_apply(&act.z1, |e, z| {
        if !(z > 0.0) {
            *e = 0.0
        }
    });
    (e2, e1)
}

/// `∂Ã/∂φ` along `direction` at `φ = 0`: `−c Ū diag(J v) Ūᵀ`.
pub fn adjacency_tangent(basis: &SpectralBasis, direction: &[f64]) -> Result<Dense> {
    if direction.len() != basis.k {
        return Err(Error::Argument(format!(
            "direction has length {}, basis rank is {}",
            direction.len(),
            basis.k
        )));
    }
    let p = &basis.lambda_bar;
    let pv: f64 = p.iter().zip(direction).map(|(a, b)| a * b).sum();
    let jv: Vec<f64> = p
        .iter()
        .zip(direction)
        .map(|(pi, vi)| pi * (vi - pv))
        .collect();
    let scaled = Dense::from_fn(basis.n(), basis.k, |r, c| basis.u_bar[(r, c)] * jv[c]);
    Ok(scaled * basis.u_bar.transpose() * (-basis.correction_scale()))
}

/// Per-node scores `∂ log p(yᵢ)/∂φ` along `direction`, one per sample node.
pub fn phi_scores(
    model: &GcnModel,
    input: &FimInput<'_>,
    basis: &SpectralBasis,
    direction: &[f64],
) -> Result<Vec<f64>> {
    input.check(model)?;
    if basis.n() != input.a_tilde.nrows() {
        return Err(Error::Argument("basis size differs from the graph".into()));
    }
    let tangent = adjacency_tangent(basis, direction)?;
    let a = input.a_tilde;
    let act = dense_forward(model, a, input.features);
    Ok(input
        .nodes
        .iter()
        .map(|&i| {
            let (e2, e1) = node_errors(model, a, &act, i, input.labels[i]);
            let g = &e2 * act.h1w2.transpose() + &e1 * act.xw1.transpose();
            let g = (&g + g.transpose()) * 0.5;
            -g.dot(&tangent)
        })
        .collect())
}

/// `G(φ) = (1/N) Σᵢ (∂ log p(yᵢ)/∂φ)²` along `direction`.
pub fn extrinsic_fim_phi(
    model: &GcnModel,
    input: &FimInput<'_>,
    basis: &SpectralBasis,
    direction: &[f64],
) -> Result<f64> {
    let s = phi_scores(model, input, basis, direction)?;
    Ok(s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64)
}

/// `∂ℓᵢ/∂Wˡ` for each sample node; `layer` is 1 or 2.
pub fn per_sample_weight_gradients(
    model: &GcnModel,
    input: &FimInput<'_>,
    layer: usize,
) -> Result<Vec<Dense>> {
    input.check(model)?;
    if layer != 1 && layer != 2 {
        return Err(Error::Argument(format!(
            "layer must be 1 or 2, got {layer}"
        )));
    }
    let a = input.a_tilde;
    let act = dense_forward(model, a, input.features);
    Ok(input
        .nodes
        .iter()
        .map(|&i| {
            let (e2, e1) = node_errors(model, a, &act, i, input.labels[i]);
            if layer == 1 {
                input.features.tr_mul(&a.tr_mul(&e1))
            } else {
                act.h1.tr_mul(&a.tr_mul(&e2))
            }
        })
        .collect())
}

/// `G(Wˡ) = (1/N) Σᵢ vec(∂ℓᵢ/∂Wˡ) vec(∂ℓᵢ/∂Wˡ)ᵀ`, with column-major `vec`.
pub fn extrinsic_fim_weights(
    model: &GcnModel,
    input: &FimInput<'_>,
    layer: usize,
) -> Result<Dense> {
    let grads = per_sample_weight_gradients(model, input, layer)?;
    let dim = grads[0].len();
    let mut g = Dense::zeros(dim, dim);
    for gi in &grads {
        let v = nalgebra::DVector::from_column_slice(gi.as_slice());
        g.ger(1.0, &v, &v, 1.0);
    }
    Ok(g / grads.len() as f64)
}
