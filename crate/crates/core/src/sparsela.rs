//! Compressed sparse row storage and the sparse kernels used by the pipeline.
//!
//! [`CsrMatrix`] is a general rectangular CSR matrix (feature matrices, the
//! row-stochastic walk matrix). [`SparseSym`] wraps a square CSR matrix whose
//! pattern and values are symmetric; both triangles are stored so that row
//! access is cheap.
//!
//! Products against dense matrices are parallelised over output columns. Each
//! output entry is accumulated in CSR order, so results are bitwise identical
//! regardless of the number of worker threads.

use rayon::prelude::*;

use crate::{Dense, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from raw CSR arrays, validating the layout.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::Argument(
                "row_ptr must have rows + 1 entries starting at 0".into(),
            ));
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::Argument(
                "row_ptr, col_idx and values disagree".into(),
            ));
        }
        for i in 0..rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::Argument(format!("row_ptr decreases at row {i}")));
            }
            let cols_i = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols_i.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Argument(format!(
                    "column indices of row {i} are not strictly increasing"
                )));
            }
            if cols_i.last().is_some_and(|&c| c >= cols) {
                return Err(Error::Argument(format!(
                    "column index out of range in row {i}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Build from `(row, col, value)` triplets in any order. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = t.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::Argument(format!(
                "entry ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Dense to sparse, keeping entries with `|x| > 0`.
    pub fn from_dense(m: &Dense) -> Self {
        let (rows, cols) = m.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Same pattern, values replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                values.push(f(i, j, v));
            }
        }
        Self {
            values,
            ..self.clone()
        }
    }

    /// Drop entries for which `keep` returns false.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize, f64) -> bool) -> Self {
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j, v) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Rows scaled to unit sum; all-zero rows are left untouched.
    pub fn row_normalized(&self) -> Self {
        let sums = self.row_sums();
        self.map_values(|i, _, v| if sums[i] != 0.0 { v / sums[i] } else { v })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let p = next[j];
                col_idx[p] = i;
                values[p] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Entrywise sum of two matrices of equal shape (sorted merge per row).
    pub fn add(&self, other: &CsrMatrix) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Argument(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.rows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let take_a = q == cb.len() || (p < ca.len() && ca[p] < cb[q]);
                let take_b = p == ca.len() || (q < cb.len() && cb[q] < ca[p]);
                if take_a {
                    col_idx.push(ca[p]);
                    values.push(va[p]);
                    p += 1;
                } else if take_b {
                    col_idx.push(cb[q]);
                    values.push(vb[q]);
                    q += 1;
                } else {
                    col_idx.push(ca[p]);
                    values.push(va[p] + vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// `self * x` for a dense right-hand side.
    pub fn mul_dense(&self, x: &Dense) -> Result<Dense> {
        if x.nrows() != self.cols {
            return Err(Error::Argument(format!(
                "dimension mismatch: {}x{} times {}x{}",
                self.rows,
                self.cols,
                x.nrows(),
                x.ncols()
            )));
        }
        let mut out = Dense::zeros(self.rows, x.ncols());
        if self.rows == 0 {
            return Ok(out);
        }
        let xs = x.as_slice();
        let n_in = self.cols;
        out.as_mut_slice()
            .par_chunks_mut(self.rows)
            .enumerate()
            .for_each(|(c, out_col)| {
                let x_col = &xs[c * n_in..(c + 1) * n_in];
                for (i, o) in out_col.iter_mut().enumerate() {
                    let (cols, vals) = self.row(i);
                    let mut acc = 0.0;
                    for (&j, &v) in cols.iter().zip(vals) {
                        acc += v * x_col[j];
                    }
                    *o = acc;
                }
            });
        Ok(out)
    }

    /// `selfᵀ * x` without materialising the transpose.
    pub fn tr_mul_dense(&self, x: &Dense) -> Result<Dense> {
        if x.nrows() != self.rows {
            return Err(Error::Argument(format!(
                "dimension mismatch: ({}x{})ᵀ times {}x{}",
                self.rows,
                self.cols,
                x.nrows(),
                x.ncols()
            )));
        }
        let mut out = Dense::zeros(self.cols, x.ncols());
        if self.cols == 0 {
            return Ok(out);
        }
        let xs = x.as_slice();
        let n_in = self.rows;
        out.as_mut_slice()
            .par_chunks_mut(self.cols)
            .enumerate()
            .for_each(|(c, out_col)| {
                let x_col = &xs[c * n_in..(c + 1) * n_in];
                for (i, &xi) in x_col.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let (cols, vals) = self.row(i);
                    for (&j, &v) in cols.iter().zip(vals) {
                        out_col[j] += v * xi;
                    }
                }
            });
        Ok(out)
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

/// Square CSR matrix with symmetric pattern and values.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    inner: CsrMatrix,
}

impl SparseSym {
    /// Wrap a CSR matrix after checking that it is square and symmetric
    /// (bitwise equal mirrored values).
    pub fn from_csr(m: CsrMatrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::Argument(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        for i in 0..m.rows {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let (cj, vj) = m.row(j);
                match cj.binary_search(&i) {
                    Ok(p) if vj[p] == v => {}
                    Ok(_) => {
                        return Err(Error::Data(format!(
                            "entries ({i}, {j}) and ({j}, {i}) differ"
                        )))
                    }
                    Err(_) => {
                        return Err(Error::Data(format!(
                            "entry ({i}, {j}) has no mirror ({j}, {i})"
                        )))
                    }
                }
            }
        }
        Ok(Self { inner: m })
    }

    /// Trusted constructor for kernels that build symmetric output by
    /// construction.
    pub(crate) fn from_csr_unchecked(m: CsrMatrix) -> Self {
        debug_assert_eq!(m.rows, m.cols);
        Self { inner: m }
    }

    /// Build from triplets that list both triangles explicitly.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        Self::from_csr(CsrMatrix::from_triplets(n, n, triplets)?)
    }

    pub fn from_dense(m: &Dense) -> Result<Self> {
        Self::from_csr(CsrMatrix::from_dense(m))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: CsrMatrix::identity(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            inner: CsrMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.rows
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn as_csr(&self) -> &CsrMatrix {
        &self.inner
    }

    pub fn into_csr(self) -> CsrMatrix {
        self.inner
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        self.inner.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.inner.row_sums()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            inner: self.inner.map_values(|_, _, v| v * s),
        }
    }

    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n());
        assert_eq!(y.len(), self.n());
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn to_dense(&self) -> Dense {
        self.inner.to_dense()
    }
}

/// Exact sparse-dense product `M X` with a fixed per-entry summation order.
pub fn spmm(m: &SparseSym, x: &Dense) -> Result<Dense> {
    m.inner.mul_dense(x)
}

/// Fraction of stored entries, `nnz / n²`.
pub fn sparsity(m: &SparseSym) -> f64 {
    let n = m.n() as f64;
    if n == 0.0 {
        return 0.0;
    }
    m.nnz() as f64 / (n * n)
}

/// The renormalization trick `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`.
///
/// Every diagonal entry becomes structurally present, so isolated nodes get
/// a unit diagonal. Entries are scaled by `s_i * s_j` in one multiplication so
/// mirrored values stay bitwise equal.
pub fn renormalize_adjacency(a: &SparseSym) -> SparseSym {
    let n = a.n();
    let scale: Vec<f64> = a.degrees().iter().map(|d| 1.0 / (d + 1.0).sqrt()).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let mut diag_done = false;
        for (&j, &v) in cols.iter().zip(vals) {
            if !diag_done && j >= i {
                let self_weight = if j == i { v + 1.0 } else { 1.0 };
                col_idx.push(i);
                values.push(self_weight * (scale[i] * scale[i]));
                diag_done = true;
                if j == i {
                    continue;
                }
            }
            col_idx.push(j);
            values.push(v * (scale[i] * scale[j]));
        }
        if !diag_done {
            col_idx.push(i);
            values.push(scale[i] * scale[i]);
        }
        row_ptr.push(col_idx.len());
    }
    SparseSym::from_csr_unchecked(CsrMatrix {
        rows: n,
        cols: n,
        row_ptr,
        col_idx,
        values,
    })
}

/// `L = I − Ã` together with `tr(L)`.
pub fn laplacian_of(a_tilde: &SparseSym) -> Result<(SparseSym, f64)> {
    let n = a_tilde.n();
    let identity = CsrMatrix::identity(n);
    let neg = a_tilde.inner.map_values(|_, _, v| -v);
    let l = identity.add(&neg)?;
    let trace: f64 = (0..n).map(|i| l.get(i, i)).sum();
    if !(trace > 0.0) {
        return Err(Error::Numerical(format!(
            "Laplacian trace is {trace}; cannot form a density matrix"
        )));
    }
    Ok((SparseSym::from_csr_unchecked(l), trace))
}

/// Density matrix `ρ = L / tr(L)`.
pub fn density_matrix(l: &SparseSym, trace: f64) -> SparseSym {
    l.scaled(1.0 / trace)
}
