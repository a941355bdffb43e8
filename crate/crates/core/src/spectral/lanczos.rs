//! Top-k eigenpairs of a sparse symmetric matrix.
//!
//! Lanczos with full reorthogonalization: every new Krylov vector is
//! orthogonalized (modified Gram-Schmidt, two passes) against the whole
//! basis. Ritz pairs come from an explicit Rayleigh-Ritz step on
//! `Vᵀ M V`, and residuals `‖M y − θ y‖` are computed exactly from the stored
//! products `M V`, so restarts after breakdown need no special casing.
//!
//! A single Krylov sequence cannot see the second copy of a repeated
//! eigenvalue. Once the top-k pairs have converged, the basis is extended
//! from a fresh random vector and the solve repeated; the result is accepted
//! only when the top-k values no longer move.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sparsela::SparseSym;
use crate::{Dense, Error, Result};

/// Iteration cap, in matrix-vector products, as a multiple of `n`.
const ITERATION_FACTOR: usize = 10;
/// Steps taken after a restart before convergence is re-examined.
const PROBE_STEPS: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Krylov<'a> {
    m: &'a SparseSym,
    basis: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    /// `projected[j][i] = v_iᵀ M v_j` for `i <= j`.
    projected: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    matvecs: usize,
}

struct Ritz {
    values: Vec<f64>,
    vectors: Dense,
    residuals: Vec<f64>,
    scale: f64,
}

impl<'a> Krylov<'a> {
    fn n(&self) -> usize {
        self.m.n()
    }

    fn random_vector(&mut self) -> Vec<f64> {
        (0..self.n())
            .map(|_| self.rng.random::<f64>() - 0.5)
            .collect()
    }

    /// Orthogonalize `w` against the basis; returns the remaining norm.
    fn orthogonalize(&self, w: &mut [f64]) -> f64 {
        for _ in 0..2 {
            for v in &self.basis {
                let p = dot(w, v);
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= p * vi;
                }
            }
        }
        norm(w)
    }

    /// Append `w` (after orthogonalization) if it is not numerically in the
    /// span of the basis.
    fn push(&mut self, mut w: Vec<f64>) -> bool {
        let before = norm(&w);
        if before == 0.0 {
            return false;
        }
        let after = self.orthogonalize(&mut w);
        if after <= 1e-10 * before || after == 0.0 {
            return false;
        }
        for x in &mut w {
            *x /= after;
        }
        let mut image = vec![0.0; self.n()];
        self.m.spmv(&w, &mut image);
        self.matvecs += 1;
        let mut column: Vec<f64> = self.basis.iter().map(|v| dot(v, &image)).collect();
        column.push(dot(&w, &image));
        self.projected.push(column);
        self.basis.push(w);
        self.images.push(image);
        true
    }

    /// Extend the basis by one vector: continue the Krylov sequence, or
    /// restart from random vectors on breakdown. Returns false once the basis
    /// spans the whole space.
    fn step(&mut self) -> bool {
        if self.basis.len() >= self.n() {
            return false;
        }
        if let Some(last) = self.images.last() {
            let w = last.clone();
            if self.push(w) {
                return true;
            }
        }
        self.restart()
    }

    fn restart(&mut self) -> bool {
        for _ in 0..8 {
            if self.basis.len() >= self.n() {
                return false;
            }
            let w = self.random_vector();
            if self.push(w) {
                return true;
            }
        }
        false
    }

    fn rayleigh_ritz(&self, k: usize) -> Ritz {
        let m = self.basis.len();
        let n = self.n();
        let h = Dense::from_fn(m, m, |i, j| {
            if i <= j {
                self.projected[j][i]
            } else {
                self.projected[i][j]
            }
        });
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let scale = eig
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let take = k.min(m);
        let mut values = Vec::with_capacity(take);
        let mut vectors = Dense::zeros(n, take);
        let mut residuals = Vec::with_capacity(take);
        for (c, &idx) in order.iter().take(take).enumerate() {
            let theta = eig.eigenvalues[idx];
            let s = eig.eigenvectors.column(idx);
            let mut y = vec![0.0; n];
            let mut my = vec![0.0; n];
            for (j, &sj) in s.iter().enumerate() {
                for i in 0..n {
                    y[i] += sj * self.basis[j][i];
                    my[i] += sj * self.images[j][i];
                }
            }
            let r: f64 = y
                .iter()
                .zip(&my)
                .map(|(yi, mi)| (mi - theta * yi).powi(2))
                .sum::<f64>()
                .sqrt();
            values.push(theta);
            residuals.push(r);
            for i in 0..n {
                vectors[(i, c)] = y[i];
            }
        }
        Ritz {
            values,
            vectors,
            residuals,
            scale,
        }
    }
}

fn converged(ritz: &Ritz, k: usize, tol: f64) -> bool {
    ritz.values.len() == k
        && ritz
            .residuals
            .iter()
            .all(|&r| r <= tol * ritz.scale.max(f64::MIN_POSITIVE))
}

/// Make the largest-magnitude entry of each column positive.
fn fix_signs(vectors: &mut Dense) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        col *= sign;
    }
}

/// The `k` largest eigenvalues of `m` (non-increasing) with orthonormal
/// eigenvectors as the columns of an `n × k` matrix.
///
/// Each returned pair satisfies `‖M v − λ v‖ ≤ tol · ‖M‖`, where `‖M‖` is
/// estimated by the largest Ritz value magnitude.
pub fn topk_eigs(m: &SparseSym, k: usize, tol: f64, seed: u64) -> Result<(Vec<f64>, Dense)> {
    let n = m.n();
    if k == 0 || k >= n {
        return Err(Error::Argument(format!(
            "need 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Argument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let cap = ITERATION_FACTOR * n;
    let mut kr = Krylov {
        m,
        basis: Vec::new(),
        images: Vec::new(),
        projected: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        matvecs: 0,
    };
    kr.restart();

    let mut accepted: Option<Vec<f64>> = None;
    let mut since_check = 0usize;
    let mut since_restart = 0usize;
    let mut best_residual = f64::INFINITY;
    loop {
        let grew = kr.step();
        since_check += 1;
        since_restart += 1;
        let m_len = kr.basis.len();
        let interval = (m_len / 10).max(5);
        let due = m_len >= k && (since_check >= interval || !grew);
        if due && (accepted.is_none() || since_restart >= PROBE_STEPS || !grew) {
            since_check = 0;
            let ritz = kr.rayleigh_ritz(k);
            best_residual = ritz.residuals.iter().cloned().fold(0.0, f64::max);
            if converged(&ritz, k, tol) {
                let stable = accepted.as_ref().is_some_and(|prev| {
                    prev.iter()
                        .zip(&ritz.values)
                        .all(|(a, b)| (a - b).abs() <= tol * ritz.scale.max(f64::MIN_POSITIVE))
                });
                if stable || !grew {
                    let mut vectors = ritz.vectors;
                    fix_signs(&mut vectors);
                    return Ok((ritz.values, vectors));
                }
                accepted = Some(ritz.values);
                since_restart = 0;
                if !kr.restart() {
                    let ritz = kr.rayleigh_ritz(k);
                    let mut vectors = ritz.vectors;
                    fix_signs(&mut vectors);
                    return Ok((ritz.values, vectors));
                }
                continue;
            }
        }
        if !grew || kr.matvecs >= cap {
            return Err(Error::Solver {
                iterations: kr.matvecs,
                best_residual,
            });
        }
    }
}
