//! The fixed network shapes used by the pipeline and the tape programs that
//! train them.
//!
//! Two classifier stacks (3 GCN layers, dim 20, concat head for node tasks,
//! max-pool head for graph tasks) and the mask auto-encoder (GCN encoder
//! 32/32/16 with a linear last layer, inner-product decoder).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::numerics::params::{GradMap, ParamSet};
use crate::numerics::prop::NormAdj;
use crate::numerics::tape::{mean_squared_error, softmax_cross_entropy, NodeId, Tape};
use crate::numerics::tensor::Tensor2;

pub const GCN_HIDDEN: usize = 20;
pub const ENCODER_DIMS: (usize, usize, usize) = (32, 32, 16);

pub const ARCH_NODE_GCN: &str = "gem-nodegcn-v1";
pub const ARCH_GRAPH_GCN: &str = "gem-graphgcn-v1";
pub const ARCH_EXPLAINER: &str = "gem-explainer-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkSpec {
    NodeGcn {
        input_dim: usize,
        num_classes: usize,
    },
    GraphGcn {
        input_dim: usize,
        num_classes: usize,
    },
    MaskAutoencoder {
        input_dim: usize,
    },
}

impl NetworkSpec {
    pub fn arch_id(&self) -> &'static str {
        match self {
            NetworkSpec::NodeGcn { .. } => ARCH_NODE_GCN,
            NetworkSpec::GraphGcn { .. } => ARCH_GRAPH_GCN,
            NetworkSpec::MaskAutoencoder { .. } => ARCH_EXPLAINER,
        }
    }

    /// Glorot-initialized parameters, drawn in a fixed declaration order.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        match *self {
            NetworkSpec::NodeGcn {
                input_dim,
                num_classes,
            } => {
                ps.insert_glorot("w1", input_dim, GCN_HIDDEN, rng);
                ps.insert_glorot("w2", GCN_HIDDEN, GCN_HIDDEN, rng);
                ps.insert_glorot("w3", GCN_HIDDEN, GCN_HIDDEN, rng);
                for b in ["b1", "b2", "b3"] {
                    ps.insert(b, Tensor2::zeros(1, GCN_HIDDEN));
                }
                ps.insert_glorot("w_head", 3 * GCN_HIDDEN, num_classes, rng);
                ps.insert("b_head", Tensor2::zeros(1, num_classes));
            }
            NetworkSpec::GraphGcn {
                input_dim,
                num_classes,
            } => {
                ps.insert_glorot("w1", input_dim, GCN_HIDDEN, rng);
                ps.insert_glorot("w2", GCN_HIDDEN, GCN_HIDDEN, rng);
                ps.insert_glorot("w3", GCN_HIDDEN, GCN_HIDDEN, rng);
                for b in ["b1", "b2", "b3"] {
                    ps.insert(b, Tensor2::zeros(1, GCN_HIDDEN));
                }
                ps.insert_glorot("w_head", GCN_HIDDEN, num_classes, rng);
                ps.insert("b_head", Tensor2::zeros(1, num_classes));
            }
            NetworkSpec::MaskAutoencoder { input_dim } => {
                let (d1, d2, d3) = ENCODER_DIMS;
                ps.insert_glorot("w1", input_dim, d1, rng);
                ps.insert_glorot("w2", d1, d2, rng);
                ps.insert_glorot("w3", d2, d3, rng);
            }
        }
        ps
    }
}

/// Loss attach point for `forward_backward`.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// Softmax cross-entropy over the selected logit rows.
    Classify {
        /// Rows of the logits to score (node instances); `None` scores all.
        rows: Option<Vec<usize>>,
        labels: Vec<usize>,
    },
    /// Squared error of decoded edge scores against target edge weights.
    EdgeRegression {
        edges: Vec<(usize, usize)>,
        targets: Vec<f64>,
    },
}

/// Three GCN layers. Classifier stacks carry per-layer biases (the layer
/// would otherwise collapse to a rank-1 map on constant-feature graphs);
/// the auto-encoder stack is bias-free.
fn gcn_stack<'a>(
    tape: &mut Tape<'a>,
    prop: &'a NormAdj,
    x: NodeId,
    params: &ParamSet,
    layer_bias: bool,
    relu_last: bool,
) -> Result<(NodeId, NodeId, NodeId)> {
    let mut hs = Vec::with_capacity(3);
    let mut input = x;
    for (i, w_name) in ["w1", "w2", "w3"].iter().enumerate() {
        let w = tape.param(params, w_name)?;
        let p = tape.matmul(input, w)?;
        let mut a = tape.spmm(prop, p)?;
        if layer_bias {
            let b = tape.param(params, &format!("b{}", i + 1))?;
            a = tape.add_row_bias(a, b)?;
        }
        let h = if i < 2 || relu_last { tape.relu(a)? } else { a };
        hs.push(h);
        input = h;
    }
    Ok((hs[0], hs[1], hs[2]))
}

/// Record the full forward program for `spec` and return the tape along
/// with the id of its output node (logits, or decoded edge scores for the
/// auto-encoder).
pub fn record_forward<'a>(
    prop: &'a NormAdj,
    features: &Tensor2,
    params: &ParamSet,
    spec: &NetworkSpec,
    edges: Option<&[(usize, usize)]>,
) -> Result<(Tape<'a>, NodeId)> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone())?;
    let out = match spec {
        NetworkSpec::NodeGcn { .. } => {
            let (h1, h2, h3) = gcn_stack(&mut tape, prop, x, params, true, true)?;
            let cc = tape.concat_cols(&[h1, h2, h3])?;
            let w_head = tape.param(params, "w_head")?;
            let b_head = tape.param(params, "b_head")?;
            let lin = tape.matmul(cc, w_head)?;
            tape.add_row_bias(lin, b_head)?
        }
        NetworkSpec::GraphGcn { .. } => {
            let (_h1, _h2, h3) = gcn_stack(&mut tape, prop, x, params, true, true)?;
            let pooled = tape.max_pool_rows(h3)?;
            let w_head = tape.param(params, "w_head")?;
            let b_head = tape.param(params, "b_head")?;
            let lin = tape.matmul(pooled, w_head)?;
            tape.add_row_bias(lin, b_head)?
        }
        NetworkSpec::MaskAutoencoder { .. } => {
            let (_h1, _h2, z) = gcn_stack(&mut tape, prop, x, params, false, false)?;
            let edges = edges
                .ok_or_else(|| GemError::Structural("auto-encoder needs an edge list".into()))?;
            let gram = tape.edge_gram(z, edges.to_vec())?;
            tape.sigmoid(gram)?
        }
    };
    Ok((tape, out))
}

fn attach_loss(
    tape: &mut Tape<'_>,
    out: NodeId,
    spec: &NetworkSpec,
    loss: &LossSpec,
) -> Result<(f64, NodeId, Tensor2)> {
    match (spec, loss) {
        (NetworkSpec::MaskAutoencoder { .. }, LossSpec::EdgeRegression { targets, .. }) => {
            let (l, seed) = mean_squared_error(tape.value(out), targets)?;
            Ok((l, out, seed))
        }
        (_, LossSpec::Classify { rows, labels }) => {
            let scored = match rows {
                Some(r) => tape.select_rows(out, r.clone())?,
                None => out,
            };
            let (l, seed) = softmax_cross_entropy(tape.value(scored), labels)?;
            Ok((l, scored, seed))
        }
        _ => Err(GemError::Structural(
            "loss spec does not match network spec".into(),
        )),
    }
}

/// Loss plus exact analytic gradients of the loss with respect to every
/// parameter, by reverse traversal of the recorded op sequence.
pub fn forward_backward(
    prop: &NormAdj,
    features: &Tensor2,
    params: &ParamSet,
    spec: &NetworkSpec,
    loss: &LossSpec,
) -> Result<(f64, GradMap)> {
    let edges = loss_edges(loss);
    let (mut tape, out) = record_forward(prop, features, params, spec, edges)?;
    let (l, root, seed) = attach_loss(&mut tape, out, spec, loss)?;
    let grads = tape.backward(root, seed)?;
    Ok((l, grads))
}

/// Loss only; used by finite-difference checks and validation passes.
pub fn forward_loss(
    prop: &NormAdj,
    features: &Tensor2,
    params: &ParamSet,
    spec: &NetworkSpec,
    loss: &LossSpec,
) -> Result<f64> {
    let edges = loss_edges(loss);
    let (mut tape, out) = record_forward(prop, features, params, spec, edges)?;
    let (l, _, _) = attach_loss(&mut tape, out, spec, loss)?;
    Ok(l)
}

fn loss_edges(loss: &LossSpec) -> Option<&[(usize, usize)]> {
    match loss {
        LossSpec::EdgeRegression { edges, .. } => Some(edges),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check::check_gradients;
    use crate::numerics::tensor::Tensor2;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_graph(
        rng: &mut rand_chacha::ChaCha8Rng,
        n: usize,
        d: usize,
    ) -> (NormAdj, Tensor2, Vec<(usize, usize)>) {
        let mut adj = vec![Vec::new(); n];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    adj[i].push(j);
                    adj[j].push(i);
                    edges.push((i, j));
                }
            }
        }
        let features = Tensor2 {
            rows: n,
            cols: d,
            data: (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        };
        (NormAdj::from_neighbor_lists(adj), features, edges)
    }

    fn run_check(spec: NetworkSpec, loss_of: impl Fn(&[(usize, usize)]) -> LossSpec, seed: u64) {
        let mut rng = rng_from(seed);
        let (prop, features, edges) = random_graph(&mut rng, 6, 3);
        let mut params = spec.init_params(&mut rng);
        let loss = loss_of(&edges);
        let (_, grads) = forward_backward(&prop, &features, &params, &spec, &loss).unwrap();
        let report = check_gradients(&mut params, &grads, 1e-5, |p| {
            forward_loss(&prop, &features, p, &spec, &loss)
        })
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "seed {seed}: max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    #[test]
    fn node_classifier_gradients_match_finite_differences() {
        for seed in 0..3 {
            run_check(
                NetworkSpec::NodeGcn {
                    input_dim: 3,
                    num_classes: 4,
                },
                |_| LossSpec::Classify {
                    rows: Some(vec![0, 2, 5]),
                    labels: vec![1, 3, 0],
                },
                seed,
            );
        }
    }

    #[test]
    fn graph_classifier_gradients_match_finite_differences() {
        for seed in 10..13 {
            run_check(
                NetworkSpec::GraphGcn {
                    input_dim: 3,
                    num_classes: 2,
                },
                |_| LossSpec::Classify {
                    rows: None,
                    labels: vec![1],
                },
                seed,
            );
        }
    }

    #[test]
    fn autoencoder_gradients_match_finite_differences() {
        for seed in 20..23 {
            run_check(
                NetworkSpec::MaskAutoencoder { input_dim: 3 },
                |edges| LossSpec::EdgeRegression {
                    edges: edges.to_vec(),
                    targets: (0..edges.len()).map(|i| (i as f64 * 0.37).fract()).collect(),
                },
                seed,
            );
        }
    }
}
