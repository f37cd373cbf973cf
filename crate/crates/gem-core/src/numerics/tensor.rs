//! Dense row-major f64 matrices and the small op vocabulary the models use.
//!
//! Accumulation order is part of the contract: every dot product runs over
//! the inner index in ascending order, so differently-scheduled code paths
//! (full forward vs. per-row forward) produce bitwise-identical values.

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(GemError::Structural("ragged row lengths".into()));
        }
        Ok(Tensor2 {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GemError::Structural(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor2 { rows, cols, data })
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

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, ctx: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(GemError::Numeric(format!("non-finite value in {ctx}")))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// `a @ b`, inner index ascending.
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.rows {
        return Err(GemError::Structural(format!(
            "matmul {}x{} @ {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor2::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in arow.iter().enumerate() {
            let brow = b.row(k);
            for j in 0..b.cols {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(out)
}

/// Dot of `a.row(i)` with column-major access into `b`'s rows: used by
/// per-row forward paths; matches `matmul` bit-for-bit.
pub fn matvec_row(a_row: &[f64], b: &Tensor2) -> Vec<f64> {
    let mut out = vec![0.0; b.cols];
    for (k, &av) in a_row.iter().enumerate() {
        let brow = b.row(k);
        for j in 0..b.cols {
            out[j] += av * brow[j];
        }
    }
    out
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax with max subtraction; rows sum to 1.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for i in 0..x.rows {
        let row = out.row_mut(i);
        softmax_in_place(row);
    }
    out
}

/// The single softmax routine shared by prediction, loss evaluation and the
/// backward pass.
pub fn softmax_in_place(row: &mut [f64]) {
    let mut mx = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Column-wise max over rows, `[1 x cols]`; also returns the argmax row per
/// column (first row wins ties).
pub fn global_max_pool_rows(x: &Tensor2) -> (Tensor2, Vec<usize>) {
    let mut out = Tensor2::zeros(1, x.cols);
    let mut arg = vec![0usize; x.cols];
    for j in 0..x.cols {
        let mut best = f64::NEG_INFINITY;
        let mut bi = 0;
        for i in 0..x.rows {
            let v = x.get(i, j);
            if v > best {
                best = v;
                bi = i;
            }
        }
        out.set(0, j, best);
        arg[j] = bi;
    }
    (out, arg)
}

/// Horizontal concatenation, column order preserving.
pub fn concat_cols(parts: &[&Tensor2]) -> Result<Tensor2> {
    let rows = parts.first().map_or(0, |p| p.rows);
    if parts.iter().any(|p| p.rows != rows) {
        return Err(GemError::Structural("concat_cols: row mismatch".into()));
    }
    let cols: usize = parts.iter().map(|p| p.cols).sum();
    let mut out = Tensor2::zeros(rows, cols);
    for i in 0..rows {
        let orow = out.row_mut(i);
        let mut off = 0;
        for p in parts {
            orow[off..off + p.cols].copy_from_slice(p.row(i));
            off += p.cols;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand() {
        let a = Tensor2::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor2::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 3);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matvec_row_matches_matmul() {
        let a = Tensor2::from_rows(vec![vec![0.3, -1.5, 2.0], vec![1.0, 0.0, -0.25]]).unwrap();
        let b = Tensor2::from_rows(vec![
            vec![0.5, 1.0],
            vec![-2.0, 0.125],
            vec![3.0, -0.75],
        ])
        .unwrap();
        let full = matmul(&a, &b).unwrap();
        for i in 0..a.rows {
            let row = matvec_row(a.row(i), &b);
            assert_eq!(row.as_slice(), full.row(i));
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor2::from_rows(vec![vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]).unwrap();
        let s = softmax_rows(&x);
        for i in 0..s.rows {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_single_row_is_identity() {
        let x = Tensor2::from_rows(vec![vec![0.5, -2.0, 7.0]]).unwrap();
        let (p, arg) = global_max_pool_rows(&x);
        assert_eq!(p.data, x.data);
        assert_eq!(arg, vec![0, 0, 0]);
    }

    #[test]
    fn max_pool_duplicate_rows_unchanged() {
        let x = Tensor2::from_rows(vec![vec![1.0, 4.0], vec![3.0, 2.0]]).unwrap();
        let dup = Tensor2::from_rows(vec![vec![1.0, 4.0], vec![3.0, 2.0], vec![1.0, 4.0]]).unwrap();
        let (a, _) = global_max_pool_rows(&x);
        let (b, _) = global_max_pool_rows(&dup);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn concat_preserves_column_order() {
        let a = Tensor2::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        let b = Tensor2::from_rows(vec![vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.rows, 2);
        assert_eq!(c.cols, 3);
        assert_eq!(c.row(0), &[1.0, 3.0, 4.0]);
        assert_eq!(c.row(1), &[2.0, 5.0, 6.0]);
    }
}
