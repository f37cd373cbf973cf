//! Reverse-mode differentiation over a recorded tape of the fixed op
//! vocabulary the two model families need. Forward evaluation is eager;
//! `backward` replays the recorded ops in reverse and accumulates exact
//! analytic gradients per parameter name.

use crate::error::{GemError, Result};
use crate::numerics::params::{GradMap, ParamSet};
use crate::numerics::prop::NormAdj;
use crate::numerics::tensor::{
    concat_cols, global_max_pool_rows, matmul, relu, sigmoid, softmax_in_place, Tensor2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<'a> {
    Constant,
    Param(String),
    SpMM { prop: &'a NormAdj, x: NodeId },
    MatMul { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    AddRowBias { x: NodeId, bias: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    MaxPoolRows { x: NodeId, argmax: Vec<usize> },
    SelectRows { x: NodeId, rows: Vec<usize> },
    EdgeGram { z: NodeId, edges: Vec<(usize, usize)> },
}

struct TapeNode<'a> {
    op: Op<'a>,
    value: Tensor2,
}

pub struct Tape<'a> {
    nodes: Vec<TapeNode<'a>>,
}

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<'a>, value: Tensor2) -> Result<NodeId> {
        value.ensure_finite("tape op output")?;
        self.nodes.push(TapeNode { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, t: Tensor2) -> Result<NodeId> {
        self.push(Op::Constant, t)
    }

    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        let value = params.value(name)?.clone();
        self.push(Op::Param(name.to_string()), value)
    }

    pub fn spmm(&mut self, prop: &'a NormAdj, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rows != prop.n() {
            return Err(GemError::Structural("spmm row mismatch".into()));
        }
        let value = prop.matmul(xv);
        self.push(Op::SpMM { prop, x }, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul(self.value(a), self.value(b))?;
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = relu(self.value(x));
        self.push(Op::Relu { x }, value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = sigmoid(self.value(x));
        self.push(Op::Sigmoid { x }, value)
    }

    /// `x + bias`, bias `[1 x c]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(GemError::Structural("bias shape mismatch".into()));
        }
        let mut value = xv.clone();
        for i in 0..value.rows {
            let row = value.row_mut(i);
            for (r, b) in row.iter_mut().zip(&bv.data) {
                *r += b;
            }
        }
        self.push(Op::AddRowBias { x, bias }, value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = concat_cols(&tensors)?;
        self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
        )
    }

    pub fn max_pool_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (value, argmax) = global_max_pool_rows(self.value(x));
        self.push(Op::MaxPoolRows { x, argmax }, value)
    }

    pub fn select_rows(&mut self, x: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x);
        let mut value = Tensor2::zeros(rows.len(), xv.cols);
        for (r, &i) in rows.iter().enumerate() {
            if i >= xv.rows {
                return Err(GemError::Structural(format!("select_rows index {i}")));
            }
            value.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(Op::SelectRows { x, rows }, value)
    }

    /// Inner products `z_i . z_j` for each edge, as an `[|E| x 1]` column.
    pub fn edge_gram(&mut self, z: NodeId, edges: Vec<(usize, usize)>) -> Result<NodeId> {
        let zv = self.value(z);
        let mut value = Tensor2::zeros(edges.len(), 1);
        for (r, &(i, j)) in edges.iter().enumerate() {
            if i >= zv.rows || j >= zv.rows {
                return Err(GemError::Structural("edge_gram index out of range".into()));
            }
            let mut dot = 0.0;
            for k in 0..zv.cols {
                dot += zv.get(i, k) * zv.get(j, k);
            }
            value.set(r, 0, dot);
        }
        self.push(Op::EdgeGram { z, edges }, value)
    }

    /// Reverse pass from `root` with gradient `seed`; returns per-parameter
    /// gradients keyed by name.
    pub fn backward(&self, root: NodeId, seed: Tensor2) -> Result<GradMap> {
        let rv = self.value(root);
        if seed.rows != rv.rows || seed.cols != rv.cols {
            return Err(GemError::Structural("backward seed shape mismatch".into()));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        let mut out = GradMap::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(name) => match out.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                Op::SpMM { prop, x } => {
                    let dx = prop.matmul(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MatMul { a, b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = matmul(&g, &bv.transpose())?;
                    let db = matmul(&av.transpose(), &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data.iter_mut().zip(&xv.data) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let sv = &self.nodes[idx].value;
                    let mut dx = g;
                    for (d, &s) in dx.data.iter_mut().zip(&sv.data) {
                        *d *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::AddRowBias { x, bias } => {
                    let mut db = Tensor2::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (acc, &v) in db.data.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::ConcatCols { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut dp = Tensor2::zeros(g.rows, pc);
                        for i in 0..g.rows {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + pc]);
                        }
                        accumulate(&mut grads, p, dp);
                        off += pc;
                    }
                }
                Op::MaxPoolRows { x, argmax } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows, xv.cols);
                    for j in 0..xv.cols {
                        let v = dx.get(argmax[j], j) + g.get(0, j);
                        dx.set(argmax[j], j, v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows, xv.cols);
                    for (r, &i) in rows.iter().enumerate() {
                        for (acc, &v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::EdgeGram { z, edges } => {
                    let zv = self.value(*z);
                    let mut dz = Tensor2::zeros(zv.rows, zv.cols);
                    for (r, &(i, j)) in edges.iter().enumerate() {
                        let ge = g.get(r, 0);
                        for k in 0..zv.cols {
                            let di = dz.get(i, k) + ge * zv.get(j, k);
                            dz.set(i, k, di);
                            let dj = dz.get(j, k) + ge * zv.get(i, k);
                            dz.set(j, k, dj);
                        }
                    }
                    accumulate(&mut grads, *z, dz);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, g: Tensor2) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Mean softmax cross-entropy over rows; returns the loss and its gradient
/// with respect to the logits. The per-row loss is `-ln p_label` with `p`
/// from the same softmax routine prediction uses.
pub fn softmax_cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    if logits.rows != labels.len() {
        return Err(GemError::Structural(format!(
            "{} logit rows vs {} labels",
            logits.rows,
            labels.len()
        )));
    }
    let r = logits.rows as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols {
            return Err(GemError::InvalidInput(format!("label {y} out of range")));
        }
        let row = grad.row_mut(i);
        softmax_in_place(row);
        loss += -row[y].ln();
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= r;
        }
    }
    loss /= r;
    if !loss.is_finite() {
        return Err(GemError::Numeric("non-finite cross-entropy".into()));
    }
    Ok((loss, grad))
}

/// Mean squared error of a column of predictions against targets; returns
/// the loss and its gradient with respect to the predictions.
pub fn mean_squared_error(pred: &Tensor2, targets: &[f64]) -> Result<(f64, Tensor2)> {
    if pred.cols != 1 || pred.rows != targets.len() {
        return Err(GemError::Structural(format!(
            "mse shapes {}x{} vs {} targets",
            pred.rows,
            pred.cols,
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(GemError::InvalidInput("mse over empty targets".into()));
    }
    let n = targets.len() as f64;
    let mut grad = Tensor2::zeros(pred.rows, 1);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let d = pred.get(i, 0) - t;
        loss += d * d;
        grad.set(i, 0, 2.0 * d / n);
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(GemError::Numeric("non-finite mse".into()));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logit_cross_entropy_is_ln_l() {
        for l in [2usize, 3, 7] {
            let logits = Tensor2::zeros(1, l);
            let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
            assert!((loss - (l as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_linear_zero_target_squared_error() {
        let x = Tensor2::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor2::zeros(2, 1));
        let mut tape = Tape::new();
        let xi = tape.constant(x).unwrap();
        let w = tape.param(&ps, "w").unwrap();
        let y = tape.matmul(xi, w).unwrap();
        let (loss, seed) = mean_squared_error(tape.value(y), &[0.0]).unwrap();
        assert_eq!(loss, 0.0);
        let grads = tape.backward(y, seed).unwrap();
        assert!(grads["w"].data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn matmul_backward_matches_hand_computation() {
        // f(W) = sum((x @ W)^2) / 1 with x = [1, 2], W = [[3], [4]]
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor2::from_rows(vec![vec![3.0], vec![4.0]]).unwrap());
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor2::from_rows(vec![vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let w = tape.param(&ps, "w").unwrap();
        let y = tape.matmul(x, w).unwrap(); // value 11
        let (loss, seed) = mean_squared_error(tape.value(y), &[0.0]).unwrap();
        assert!((loss - 121.0).abs() < 1e-12);
        let grads = tape.backward(y, seed).unwrap();
        // d/dW of (xW)^2 = 2 (xW) x^T = 2 * 11 * [1, 2]^T
        assert!((grads["w"].get(0, 0) - 22.0).abs() < 1e-12);
        assert!((grads["w"].get(1, 0) - 44.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_forward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor2::from_rows(vec![vec![1e308, 1e308]]).unwrap())
            .unwrap();
        let w = tape
            .constant(Tensor2::from_rows(vec![vec![1e308], vec![1e308]]).unwrap())
            .unwrap();
        assert!(tape.matmul(x, w).is_err());
    }
}
