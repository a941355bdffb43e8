//! Two-layer graph convolutional network with hand-written backprop.
//!
//! `logits = P(ReLU(P(X W₁)) W₂)` where `P` is the propagation operator,
//! either `Ã·` or its spectrally perturbed version. There are no bias terms.
//! In training mode inverted dropout is applied to the (sparse) input and to
//! the hidden activations.

mod adam;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::perturb::{apply_perturbed_propagation, propagation_delta_grad};
use crate::sparsela::{spmm, CsrMatrix, SparseSym};
use crate::spectral::SpectralBasis;
use crate::{Dense, Error, Result};

pub use adam::Adam;
pub use train::{
    evaluate, train, train_with_operator, EpochMetrics, ModelKind, StopReason, TrainConfig,
    TrainResult,
};

/// Glorot/Xavier uniform initialization on `±√(6/(rows+cols))`.
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> Dense {
    assert!(
        rows >= 1 && cols >= 1,
        "glorot_init needs a non-empty shape"
    );
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Dense::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            w[(i, j)] = rng.random_range(-bound..=bound);
        }
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub w1: Dense,
    pub w2: Dense,
    adam1: Adam,
    adam2: Adam,
}

impl GcnModel {
    pub fn from_weights(w1: Dense, w2: Dense) -> Self {
        assert_eq!(w1.ncols(), w2.nrows(), "hidden sizes of W1 and W2 differ");
        Self {
            adam1: Adam::new(w1.len()),
            adam2: Adam::new(w2.len()),
            w1,
            w2,
        }
    }

    pub fn new(features: usize, hidden: usize, classes: usize, seed_w1: u64, seed_w2: u64) -> Self {
        Self::from_weights(
            glorot_init(features, hidden, seed_w1),
            glorot_init(hidden, classes, seed_w2),
        )
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }
}

/// The propagation operator of both layers.
#[derive(Clone, Copy, Debug)]
pub enum Propagation<'a> {
    Plain(&'a SparseSym),
    /// `Ã − tr(L) Ū diag(δ) Ūᵀ`.
    Perturbed {
        a_tilde: &'a SparseSym,
        basis: &'a SpectralBasis,
        delta: &'a [f64],
    },
}

impl Propagation<'_> {
    pub fn apply(&self, x: &Dense) -> Result<Dense> {
        match *self {
            Propagation::Plain(a) => spmm(a, x),
            Propagation::Perturbed {
                a_tilde,
                basis,
                delta,
            } => apply_perturbed_propagation(a_tilde, basis, delta, x),
        }
    }

    fn delta_grad(&self, x: &Dense, g: &Dense) -> Option<Vec<f64>> {
        match *self {
            Propagation::Plain(_) => None,
            Propagation::Perturbed { basis, .. } => Some(propagation_delta_grad(basis, x, g)),
        }
    }
}

/// Inverted-dropout scale factors: `0` for dropped entries, `1/(1−p)` for
/// kept ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    /// One factor per stored entry of the feature matrix.
    pub input: Vec<f64>,
    /// `n × hidden`.
    pub hidden: Dense,
}

impl DropoutMasks {
    pub fn sample(
        rng: &mut impl Rng,
        input_nnz: usize,
        n: usize,
        hidden: usize,
        rate: f64,
    ) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        };
        let input = (0..input_nnz).map(|_| draw()).collect();
        let mut h = Dense::zeros(n, hidden);
        for i in 0..n {
            for j in 0..hidden {
                h[(i, j)] = draw();
            }
        }
        Self { input, hidden: h }
    }
}

fn apply_input_dropout(x: &CsrMatrix, scale: &[f64]) -> CsrMatrix {
    assert_eq!(
        scale.len(),
        x.nnz(),
        "input mask does not match feature storage"
    );
    let values = x.values().iter().zip(scale).map(|(v, s)| v * s).collect();
    CsrMatrix::from_raw(
        x.nrows(),
        x.ncols(),
        x.row_ptr().to_vec(),
        x.col_idx().to_vec(),
        values,
    )
    .expect("structure copied from a valid matrix")
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input after dropout.
    pub h0: CsrMatrix,
    pub xw1: Dense,
    pub z1: Dense,
    /// Hidden activations after ReLU and dropout.
    pub h1: Dense,
    hidden_mask: Option<Dense>,
    pub h1w2: Dense,
    pub logits: Dense,
}

/// Forward pass. Dropout is applied iff `masks` is given.
pub fn forward(
    model: &GcnModel,
    x: &CsrMatrix,
    prop: Propagation<'_>,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardCache> {
    let h0 = match masks {
        Some(m) => apply_input_dropout(x, &m.input),
        None => x.clone(),
    };
    let xw1 = h0.mul_dense(&model.w1)?;
    let z1 = prop.apply(&xw1)?;
    let mut h1 = z1.map(|v| v.max(0.0));
    if let Some(m) = masks {
        h1.component_mul_assign(&m.hidden);
    }
    let h1w2 = &h1 * &model.w2;
    let logits = prop.apply(&h1w2)?;
    Ok(ForwardCache {
        h0,
        xw1,
        z1,
        h1,
        hidden_mask: masks.map(|m| m.hidden.clone()),
        h1w2,
        logits,
    })
}

fn row_log_softmax(logits: &Dense, i: usize) -> Vec<f64> {
    let row = logits.row(i);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn masked_label(labels: &[Option<usize>], i: usize) -> Result<usize> {
    labels
        .get(i)
        .copied()
        .flatten()
        .ok_or_else(|| Error::Data(format!("node {i} is in a split but has no label")))
}

/// Mean cross-entropy of `logits` over the nodes in `mask`.
pub fn masked_xent(logits: &Dense, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    Ok(xent_and_grad(logits, labels, mask)?.0)
}

/// Loss and `∂loss/∂logits`.
pub fn xent_and_grad(
    logits: &Dense,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<(f64, Dense)> {
    if mask.is_empty() {
        return Err(Error::Argument(
            "cross-entropy over an empty node set".into(),
        ));
    }
    let inv = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    let mut grad = Dense::zeros(logits.nrows(), logits.ncols());
    for &i in mask {
        let y = masked_label(labels, i)?;
        if y >= logits.ncols() {
            return Err(Error::Data(format!("label {y} of node {i} out of range")));
        }
        let lp = row_log_softmax(logits, i);
        loss -= lp[y];
        for (c, l) in lp.iter().enumerate() {
            grad[(i, c)] += inv * (l.exp() - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * inv, grad))
}

/// Fraction of `mask` whose argmax logit equals the label.
pub fn masked_accuracy(logits: &Dense, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Argument("accuracy over an empty node set".into()));
    }
    let mut hits = 0usize;
    for &i in mask {
        let y = masked_label(labels, i)?;
        let row = logits.row(i);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        hits += usize::from(best == y);
    }
    Ok(hits as f64 / mask.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Dense,
    pub w2: Dense,
    /// `∂loss/∂δ`, present for perturbed propagation.
    pub delta: Option<Vec<f64>>,
}

/// Gradients of `masked_xent ∘ forward`; also returns the loss.
pub fn backward(
    model: &GcnModel,
    cache: &ForwardCache,
    prop: Propagation<'_>,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<(f64, Gradients)> {
    let (loss, g2) = xent_and_grad(&cache.logits, labels, mask)?;
    // P is symmetric, so back through P is P again.
    let pg2 = prop.apply(&g2)?;
    let w2 = cache.h1.tr_mul(&pg2);
    let mut g1 = &pg2 * model.w2.transpose();
    if let Some(m) = &cache.hidden_mask {
        g1.component_mul_assign(m);
    }
    g1.zip_apply(&cache.z1, |g, z| {
        if !(z > 0.0) {
            *g = 0.0
        }
    });
    let pg1 = prop.apply(&g1)?;
    let w1 = cache.h0.tr_mul_dense(&pg1)?;
    let delta = match (
        prop.delta_grad(&cache.h1w2, &g2),
        prop.delta_grad(&cache.xw1, &g1),
    ) {
        (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
        _ => None,
    };
    Ok((loss, Gradients { w1, w2, delta }))
}

/// Adam step on both weight matrices; weight decay adds `wd·W₁` to the first
/// layer's gradient only.
pub fn adam_step(
    model: &mut GcnModel,
    grads: &Gradients,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let g1 = &grads.w1 + &model.w1 * weight_decay;
    model.adam1.step(model.w1.as_mut_slice(), g1.as_slice(), lr);
    model
        .adam2
        .step(model.w2.as_mut_slice(), grads.w2.as_slice(), lr);
    if model
        .w1
        .iter()
        .chain(model.w2.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numerical(
            "non-finite weight after optimizer step".into(),
        ));
    }
    Ok(())
}
