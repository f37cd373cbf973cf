//! Normalized-adjacency propagation in sparse form.
//!
//! `NormAdj` is the `D^{-1/2}(A+I)D^{-1/2}` operator stored as per-row
//! `(neighbor, weight)` lists (self-loop included, ascending neighbor
//! order). Every model forward — full, per-row, tape — multiplies through
//! this one structure, so a value computed twice is computed identically.

use crate::error::{GemError, Result};
use crate::numerics::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct NormAdj {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    /// Plain neighbor lists without self-loops, ascending.
    neighbors: Vec<Vec<usize>>,
}

impl NormAdj {
    /// Build from sorted neighbor lists (no self-loops).
    pub fn from_neighbor_lists(adj: Vec<Vec<usize>>) -> Self {
        let n = adj.len();
        let inv_sqrt: Vec<f64> = adj
            .iter()
            .map(|l| 1.0 / ((l.len() as f64) + 1.0).sqrt())
            .collect();
        let rows = adj
            .iter()
            .enumerate()
            .map(|(i, list)| {
                let mut row = Vec::with_capacity(list.len() + 1);
                let mut self_placed = false;
                for &j in list {
                    if !self_placed && j > i {
                        row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                        self_placed = true;
                    }
                    row.push((j, inv_sqrt[i] * inv_sqrt[j]));
                }
                if !self_placed {
                    row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                }
                row
            })
            .collect();
        NormAdj {
            n,
            rows,
            neighbors: adj,
        }
    }

    /// Build from a dense binary symmetric zero-diagonal adjacency.
    pub fn from_dense(adjacency: &Tensor2) -> Result<Self> {
        let n = adjacency.rows;
        if adjacency.cols != n {
            return Err(GemError::Structural("adjacency must be square".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let v = adjacency.get(i, j);
                if i == j {
                    if v != 0.0 {
                        return Err(GemError::Structural(format!("nonzero diagonal at {i}")));
                    }
                } else if v == 1.0 {
                    adj[i].push(j);
                } else if v != 0.0 {
                    return Err(GemError::Structural(format!(
                        "adjacency entry ({i}, {j}) not binary"
                    )));
                }
            }
        }
        for i in 0..n {
            for &j in &adj[i] {
                if adjacency.get(j, i) != 1.0 {
                    return Err(GemError::Structural(format!(
                        "adjacency not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::from_neighbor_lists(adj))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Row entries `(neighbor, weight)` including the self-loop, ascending.
    pub fn entries(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// One output row of `self @ x` into `out`.
    #[inline]
    pub fn row_into(&self, x: &Tensor2, i: usize, out: &mut [f64]) {
        out.fill(0.0);
        for &(j, w) in &self.rows[i] {
            let xr = x.row(j);
            for (o, &v) in out.iter_mut().zip(xr) {
                *o += w * v;
            }
        }
    }

    /// `self @ x` for all rows.
    pub fn matmul(&self, x: &Tensor2) -> Tensor2 {
        let cols = x.cols;
        let mut out = Tensor2::zeros(self.n, cols);
        for i in 0..self.n {
            let row = &mut out.data[i * cols..(i + 1) * cols];
            self.row_into(x, i, row);
        }
        out
    }
}
