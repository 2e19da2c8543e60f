//! Dense row-major matrices and the elementwise / softmax primitives the
//! model needs. Everything is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::structural(format!(
                "dense matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Build from a row-of-rows literal; rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::structural("ragged rows in dense matrix literal"));
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`, plain triple loop in ikj order.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::structural(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a * b, "hadamard")
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        f: impl Fn(f64, f64) -> f64,
        op: &str,
    ) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::structural(format!(
                "{op} shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn relu(&self) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    /// Elementwise natural log.
    pub fn ln(&self) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.ln()).collect(),
        }
    }

    /// Numerically stable row-wise softmax; every output row sums to 1.
    pub fn row_softmax(&self) -> DenseMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    /// Per-row argmax and max value; ties resolve to the lowest index.
    pub fn row_argmax(&self) -> Vec<(usize, f64)> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                let mut best_val = row[0];
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best_val {
                        best = j;
                        best_val = v;
                    }
                }
                (best, best_val)
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Max absolute elementwise difference; matrices must share a shape.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_structural() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Structural(_))));
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let m = DenseMatrix::from_rows(&[vec![1.7, 1.7, 1.7, 1.7]]).unwrap();
        let s = m.row_softmax();
        for &v in s.row(0) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_zero_pair() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = m.row_softmax();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_ln2_closed_form() {
        let m = DenseMatrix::from_rows(&[vec![2.0f64.ln(), 0.0]]).unwrap();
        let s = m.row_softmax();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_entries_open_unit() {
        let m = DenseMatrix::from_rows(&[
            vec![3.0, -2.0, 0.5, 11.0],
            vec![-4.0, 4.0, 0.0, 1.0],
        ])
        .unwrap();
        let s = m.row_softmax();
        for i in 0..s.rows() {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for &v in s.row(i) {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 1), 6.0);
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let m = DenseMatrix::from_rows(&[vec![0.4, 0.4, 0.2]]).unwrap();
        assert_eq!(m.row_argmax()[0], (0, 0.4));
    }
}
