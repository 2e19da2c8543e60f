//! CSR sparse matrices, the symmetric-renormalized propagation operator,
//! and sparse-dense products.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Sparse matrix in canonical CSR form: strictly increasing column indices
/// within each row, `row_offsets[0] == 0`, `row_offsets[num_rows] == nnz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrixCsr {
    num_rows: usize,
    num_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrixCsr {
    pub fn from_parts(
        num_rows: usize,
        num_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != num_rows + 1 {
            return Err(Error::structural(format!(
                "row_offsets length {} != num_rows+1 = {}",
                row_offsets.len(),
                num_rows + 1
            )));
        }
        if row_offsets[0] != 0 {
            return Err(Error::structural("row_offsets[0] must be 0"));
        }
        if *row_offsets.last().unwrap() != values.len() {
            return Err(Error::structural("row_offsets end must equal nnz"));
        }
        if col_indices.len() != values.len() {
            return Err(Error::structural("col_indices and values lengths differ"));
        }
        for w in row_offsets.windows(2) {
            if w[0] > w[1] {
                return Err(Error::structural("row_offsets must be nondecreasing"));
            }
        }
        for r in 0..num_rows {
            let cols = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            for pair in cols.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(Error::structural(format!(
                        "columns in row {r} must be strictly increasing"
                    )));
                }
            }
            if let Some(&last) = cols.last() {
                if last >= num_cols {
                    return Err(Error::structural(format!(
                        "column index {last} out of bounds in row {r}"
                    )));
                }
            }
        }
        Ok(SparseMatrixCsr {
            num_rows,
            num_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Build a symmetric unweighted adjacency from a once-listed undirected
    /// edge set. Rejects self-loops and duplicate edges.
    pub fn from_undirected_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u == v {
                return Err(Error::structural(format!("self-loop on node {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::structural(format!(
                    "edge ({u},{v}) out of bounds for {num_nodes} nodes"
                )));
            }
            rows[u].push(v);
            rows[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for (r, mut cols) in rows.into_iter().enumerate() {
            cols.sort_unstable();
            if cols.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::structural(format!("duplicate edge at node {r}")));
            }
            col_indices.extend_from_slice(&cols);
            row_offsets.push(col_indices.len());
        }
        let values = vec![1.0; col_indices.len()];
        Ok(SparseMatrixCsr {
            num_rows: num_nodes,
            num_cols: num_nodes,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrixCsr {
            num_rows: n,
            num_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    /// Undirected stored edges as (u, v) with u < v. Meaningful for
    /// symmetric matrices; the upper triangle is returned.
    pub fn upper_triangle_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz() / 2);
        for u in 0..self.num_rows {
            let (cols, _) = self.row(u);
            for &v in cols {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrixCsr {
        let mut counts = vec![0usize; self.num_cols];
        for &c in &self.col_indices {
            counts[c] += 1;
        }
        let mut row_offsets = vec![0usize; self.num_cols + 1];
        for (i, &c) in counts.iter().enumerate() {
            row_offsets[i + 1] = row_offsets[i] + c;
        }
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let pos = cursor[c];
                col_indices[pos] = r;
                values[pos] = v;
                cursor[c] += 1;
            }
        }
        SparseMatrixCsr {
            num_rows: self.num_cols,
            num_cols: self.num_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.num_rows == self.num_cols && *self == self.transpose()
    }

    pub fn has_diagonal_entry(&self) -> bool {
        (0..self.num_rows).any(|r| self.row(r).0.contains(&r))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.num_rows, self.num_cols);
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }
}

/// Sparse-dense product. Per-row accumulation is independent, so the result
/// does not depend on row evaluation order.
pub fn spmm(sparse: &SparseMatrixCsr, dense: &DenseMatrix) -> Result<DenseMatrix> {
    if sparse.num_cols != dense.rows() {
        return Err(Error::structural(format!(
            "spmm shape mismatch: {}x{} * {}x{}",
            sparse.num_rows,
            sparse.num_cols,
            dense.rows(),
            dense.cols()
        )));
    }
    let cols = dense.cols();
    let mut out = DenseMatrix::zeros(sparse.num_rows, cols);
    for r in 0..sparse.num_rows {
        let (cidx, vals) = sparse.row(r);
        let orow = out.row_mut(r);
        for (&c, &v) in cidx.iter().zip(vals) {
            let drow = dense.row(c);
            for (o, &d) in orow.iter_mut().zip(drow) {
                *o += v * d;
            }
        }
    }
    Ok(out)
}

/// Symmetric renormalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}`
/// where `D` holds the degrees of `A + I`. The input must be square and
/// symmetric with no stored self-loops; isolated nodes end up with a unit
/// self-loop entry, so every row sum is positive.
pub fn normalize_adjacency(adjacency: &SparseMatrixCsr) -> Result<SparseMatrixCsr> {
    if adjacency.num_rows != adjacency.num_cols {
        return Err(Error::structural(format!(
            "adjacency must be square, got {}x{}",
            adjacency.num_rows, adjacency.num_cols
        )));
    }
    if adjacency.has_diagonal_entry() {
        return Err(Error::structural("adjacency must not store self-loops"));
    }
    if !adjacency.is_symmetric() {
        return Err(Error::structural("adjacency must be symmetric"));
    }
    let n = adjacency.num_rows;
    let mut inv_sqrt_deg = vec![0.0; n];
    for r in 0..n {
        let (_, vals) = adjacency.row(r);
        let degree: f64 = 1.0 + vals.iter().sum::<f64>();
        inv_sqrt_deg[r] = 1.0 / degree.sqrt();
    }

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(adjacency.nnz() + n);
    let mut values = Vec::with_capacity(adjacency.nnz() + n);
    row_offsets.push(0);
    for r in 0..n {
        let (cols, vals) = adjacency.row(r);
        let mut placed_diag = false;
        for (&c, &v) in cols.iter().zip(vals) {
            if !placed_diag && c > r {
                col_indices.push(r);
                values.push(inv_sqrt_deg[r] * inv_sqrt_deg[r]);
                placed_diag = true;
            }
            col_indices.push(c);
            // s_r * s_c is computed symmetrically so the output transposes
            // onto itself bit-for-bit.
            values.push(v * (inv_sqrt_deg[r] * inv_sqrt_deg[c]));
        }
        if !placed_diag {
            col_indices.push(r);
            values.push(inv_sqrt_deg[r] * inv_sqrt_deg[r]);
        }
        row_offsets.push(col_indices.len());
    }
    SparseMatrixCsr::from_parts(n, n, row_offsets, col_indices, values)
}
