//! High-order random-walk proximity preprocessing of an adjacency matrix.
//!
//! With `P = diag⁻¹(A1) A` the walk matrix, the pipeline is
//!
//! 1. `S = P + P² + … + P^T`
//! 2. `A ← (S / T) ∘ (1 − I)`, then keep entries strictly greater than `ν`
//! 3. `A ← A + Aᵀ + 2I`
//! 4. `A ← diag^{-1/2}(A1) A diag^{-1/2}(A1)`
//!
//! The result is already normalized and is used in place of the
//! renormalized adjacency. Rows of `S` are produced one at a time (row `i`
//! of `P^t` is row `i` of `P^{t-1}` times `P`) and thresholded immediately,
//! so the dense-ish accumulator never exists as a whole matrix. Products are
//! exact; no intermediate pruning is applied.
//!
//! Nodes with zero degree keep an all-zero walk row; the `+2I` step still
//! gives them a valid unit diagonal in the output.

use rayon::prelude::*;

use crate::sparsela::{CsrMatrix, SparseSym};
use crate::{Error, Result};

/// Per-thread scratch for sparse row-vector times sparse matrix products.
struct RowWorkspace {
    acc: Vec<f64>,
    acc_stamp: Vec<u32>,
    sum: Vec<f64>,
    sum_stamp: Vec<u32>,
    stamp: u32,
}

impl RowWorkspace {
    fn new(n: usize) -> Self {
        Self {
            acc: vec![0.0; n],
            acc_stamp: vec![0; n],
            sum: vec![0.0; n],
            sum_stamp: vec![0; n],
            stamp: 0,
        }
    }

    fn next_stamp(&mut self) -> u32 {
        if self.stamp == u32::MAX {
            self.acc_stamp.fill(0);
            self.sum_stamp.fill(0);
            self.stamp = 0;
        }
        self.stamp += 1;
        self.stamp
    }

    /// Row `i` of `S = Σ_{t=1..T} P^t`, as unsorted `(col, value)` pairs.
    fn walk_row(&mut self, p: &CsrMatrix, i: usize, order: usize) -> Vec<(usize, f64)> {
        let (cols, vals) = p.row(i);
        if order == 1 {
            return cols.iter().copied().zip(vals.iter().copied()).collect();
        }
        let sum_stamp = self.next_stamp();
        let mut sum_touched: Vec<usize> = Vec::new();
        let mut current: Vec<(usize, f64)> =
            cols.iter().copied().zip(vals.iter().copied()).collect();
        for &(j, v) in &current {
            self.sum_stamp[j] = sum_stamp;
            self.sum[j] = v;
            sum_touched.push(j);
        }
        for _ in 2..=order {
            let acc_stamp = self.next_stamp();
            let mut touched = Vec::new();
            for &(k, bk) in &current {
                let (pc, pv) = p.row(k);
                for (&j, &pkj) in pc.iter().zip(pv) {
                    if self.acc_stamp[j] != acc_stamp {
                        self.acc_stamp[j] = acc_stamp;
                        self.acc[j] = 0.0;
                        touched.push(j);
                    }
                    self.acc[j] += bk * pkj;
                }
            }
            touched.sort_unstable();
            current = touched.iter().map(|&j| (j, self.acc[j])).collect();
            for &(j, v) in &current {
                if self.sum_stamp[j] != sum_stamp {
                    self.sum_stamp[j] = sum_stamp;
                    self.sum[j] = 0.0;
                    sum_touched.push(j);
                }
                self.sum[j] += v;
            }
        }
        sum_touched.iter().map(|&j| (j, self.sum[j])).collect()
    }
}

/// Random-walk proximity matrix of order `order` with threshold `threshold`.
pub fn highorder_preprocess(a: &SparseSym, order: usize, threshold: f64) -> Result<SparseSym> {
    if order < 1 {
        return Err(Error::Argument("order T must be at least 1".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Argument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let n = a.n();
    for i in 0..n {
        let (cols, vals) = a.row(i);
        if cols.binary_search(&i).is_ok() {
            return Err(Error::Argument(format!(
                "adjacency has a self-loop at node {i}"
            )));
        }
        if vals.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Argument(format!("negative weight in row {i}")));
        }
    }

    let walk = a.as_csr().row_normalized();
    let inv_order = 1.0 / order as f64;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || RowWorkspace::new(n),
            |ws, i| {
                let mut kept: Vec<(usize, f64)> = ws
                    .walk_row(&walk, i, order)
                    .into_iter()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, s)| (j, s * inv_order))
                    .filter(|&(_, v)| v > threshold)
                    .collect();
                kept.sort_unstable_by_key(|&(j, _)| j);
                kept
            },
        )
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for row in rows {
        for (j, v) in row {
            col_idx.push(j);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    let thresholded = CsrMatrix::from_raw(n, n, row_ptr, col_idx, values)?;

    let two_identity = CsrMatrix::identity(n).map_values(|_, _, _| 2.0);
    let symmetric = thresholded
        .add(&thresholded.transpose())?
        .add(&two_identity)?;
    let scale: Vec<f64> = symmetric
        .row_sums()
        .iter()
        .map(|r| 1.0 / r.sqrt())
        .collect();
    let normalized = symmetric.map_values(|i, j, v| v * (scale[i] * scale[j]));
    Ok(SparseSym::from_csr_unchecked(normalized))
}
