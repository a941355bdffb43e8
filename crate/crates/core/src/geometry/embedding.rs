//! KL stress of a Gaussian-kernel embedding and its derivatives.
//!
//! Given row-stochastic similarities `W` (zero diagonal) and an embedding
//! `Y ∈ ℝⁿˣᵈ`, the model similarities are
//! `pᵢⱼ = exp(−‖yᵢ − yⱼ‖²) / Zᵢ` for `j ≠ i`, and the stress is
//! `KL(W : P) = Σ wᵢⱼ log(wᵢⱼ / pᵢⱼ)`. With `L(C) = diag(C_s 1) − C_s`,
//! `C_s = (C + Cᵀ)/2`:
//!
//! ```text
//! ∂KL/∂Y = 4 L(W − P) Y
//! ∂²KL/∂yᵏ∂yᵏᵀ = 4 L(W − P) + 8 L(P ∘ Dᵏ) − 4 BᵏᵀBᵏ
//! ```
//!
//! with `Dᵏᵢⱼ = (yᵢₖ − yⱼₖ)²`, `Bᵏᵢᵢ = Σⱼ pᵢⱼ (yᵢₖ − yⱼₖ)` and
//! `Bᵏᵢⱼ = −pᵢⱼ (yᵢₖ − yⱼₖ)`.

use crate::{Dense, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingProblem {
    /// `n × n`, rows sum to one, zero diagonal.
    pub w: Dense,
    /// `n × d`.
    pub y: Dense,
}

impl EmbeddingProblem {
    pub fn new(w: Dense, y: Dense) -> Result<Self> {
        let n = w.nrows();
        if !w.is_square() || y.nrows() != n || n < 2 {
            return Err(Error::Argument(
                "need an n×n similarity matrix and n ≥ 2 embedding rows".into(),
            ));
        }
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(Error::Argument(format!(
                    "similarity diagonal at {i} is nonzero"
                )));
            }
            let row = w.row(i);
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Argument(format!("negative similarity in row {i}")));
            }
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::Argument(format!(
                    "similarity row {i} sums to {}",
                    row.sum()
                )));
            }
        }
        Ok(Self { w, y })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }
}

fn sq_dist(y: &Dense, i: usize, j: usize) -> f64 {
    (y.row(i) - y.row(j)).norm_squared()
}

/// `log pᵢⱼ`; the diagonal is `−∞`.
fn log_similarity(y: &Dense) -> Dense {
    let n = y.nrows();
    let mut out = Dense::from_element(n, n, f64::NEG_INFINITY);
    for i in 0..n {
        let neg: Vec<f64> = (0..n)
            .map(|j| {
                if j == i {
                    f64::NEG_INFINITY
                } else {
                    -sq_dist(y, i, j)
                }
            })
            .collect();
        let max = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + neg.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..n {
            if j != i {
                out[(i, j)] = neg[j] - lse;
            }
        }
    }
    out
}

/// Model similarities `P(Y)`.
pub fn similarity_of(y: &Dense) -> Dense {
    log_similarity(y).map(f64::exp)
}

pub fn kl_stress(problem: &EmbeddingProblem) -> f64 {
    let lp = log_similarity(&problem.y);
    let mut total = 0.0;
    for (w, l) in problem.w.iter().zip(lp.iter()) {
        if *w > 0.0 {
            total += w * (w.ln() - l);
        }
    }
    total
}

/// `diag(C_s 1) − C_s` with `C_s = (C + Cᵀ)/2`.
fn sym_laplacian(c: &Dense) -> Dense {
    let cs = (c + c.transpose()) * 0.5;
    let mut l = -&cs;
    for i in 0..c.nrows() {
        l[(i, i)] += cs.row(i).sum();
    }
    l
}

pub fn embedding_gradient(problem: &EmbeddingProblem) -> Dense {
    let p = similarity_of(&problem.y);
    sym_laplacian(&(&problem.w - p)) * &problem.y * 4.0
}

/// Hessian block of the stress with respect to embedding column `k`.
pub fn embedding_observed_fim(problem: &EmbeddingProblem, k: usize) -> Dense {
    assert!(
        k < problem.y.ncols(),
        "embedding dimension {k} out of range"
    );
    let n = problem.n();
    let p = similarity_of(&problem.y);
    let yk = problem.y.column(k);
    let diff = Dense::from_fn(n, n, |i, j| yk[i] - yk[j]);
    let pd = p.component_mul(&diff.map(|v| v * v));
    let mut b = -p.component_mul(&diff);
    for i in 0..n {
        b[(i, i)] = -b.row(i).sum();
    }
    sym_laplacian(&(&problem.w - &p)) * 4.0 + sym_laplacian(&pd) * 8.0 - b.tr_mul(&b) * 4.0
}
