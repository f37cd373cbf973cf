//! The target classifiers to be explained: three GCN layers (dim 20),
//! concatenation head for node tasks, global max-pool head for graph
//! tasks. Training runs on the tape; inference uses direct forwards that
//! reproduce the tape arithmetic bit for bit.

use rayon::prelude::*;
use serde_json::json;

use crate::datasets::{LabeledDataset, SplitSpec, TaskKind};
use crate::error::{GemError, Result};
use crate::graph::ComputationGraph;
use crate::numerics::model::{forward_backward, LossSpec, NetworkSpec};
use crate::numerics::params::ParamSet;
use crate::numerics::prop::NormAdj;
use crate::numerics::tensor::{matvec_row, softmax_in_place, Tensor2};
use crate::numerics::{Checkpoint, ADAM_BETAS, ADAM_EPS};
use crate::rng::{rng_from, stage_seed};

/// A frozen (or in-training) target classifier.
#[derive(Debug, Clone)]
pub struct GnnModel {
    pub task: TaskKind,
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl GnnModel {
    pub fn new_random(task: TaskKind, input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let spec = match task {
            TaskKind::NodeClassification => NetworkSpec::NodeGcn {
                input_dim,
                num_classes,
            },
            TaskKind::GraphClassification => NetworkSpec::GraphGcn {
                input_dim,
                num_classes,
            },
        };
        let mut rng = rng_from(seed);
        GnnModel {
            task,
            spec,
            params: spec.init_params(&mut rng),
            input_dim,
            num_classes,
        }
    }

    pub fn to_checkpoint(&self, rng_seed: u64, train_meta: serde_json::Value) -> Checkpoint {
        Checkpoint::from_params(&self.params, self.spec.arch_id(), rng_seed, train_meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let params = ckpt.into_params()?;
        let input_dim = params.value("w1")?.rows;
        let num_classes = params.value("w_head")?.cols;
        let (task, spec) = match ckpt.arch.as_str() {
            "gem-nodegcn-v1" => (
                TaskKind::NodeClassification,
                NetworkSpec::NodeGcn {
                    input_dim,
                    num_classes,
                },
            ),
            "gem-graphgcn-v1" => (
                TaskKind::GraphClassification,
                NetworkSpec::GraphGcn {
                    input_dim,
                    num_classes,
                },
            ),
            other => {
                return Err(GemError::Ingestion(format!(
                    "checkpoint arch {other:?} is not a classifier"
                )))
            }
        };
        Ok(GnnModel {
            task,
            spec,
            params,
            input_dim,
            num_classes,
        })
    }
}

/// Class distribution for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl Prediction {
    fn from_logits(mut logits: Vec<f64>) -> Prediction {
        softmax_in_place(&mut logits);
        let predicted_class = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        Prediction {
            probabilities: logits,
            predicted_class,
        }
    }
}

fn layer_full(
    prop: &NormAdj,
    x: &Tensor2,
    w: &Tensor2,
    bias: Option<&Tensor2>,
    relu: bool,
) -> Result<Tensor2> {
    let p = crate::numerics::tensor::matmul(x, w)?;
    let mut h = prop.matmul(&p);
    if let Some(b) = bias {
        for i in 0..h.rows {
            for (v, bv) in h.row_mut(i).iter_mut().zip(&b.data) {
                *v += bv;
            }
        }
    }
    if relu {
        for v in &mut h.data {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
    }
    h.ensure_finite("gcn layer")?;
    Ok(h)
}

/// Full three-layer stack; shared by both classifier heads and by the
/// explainer's encoder (which is bias-free and passes `relu_last = false`).
pub fn eval_stack(
    prop: &NormAdj,
    features: &Tensor2,
    params: &ParamSet,
    relu_last: bool,
) -> Result<(Tensor2, Tensor2, Tensor2)> {
    let bias = |name: &str| params.value(name).ok();
    let h1 = layer_full(prop, features, params.value("w1")?, bias("b1"), true)?;
    let h2 = layer_full(prop, &h1, params.value("w2")?, bias("b2"), true)?;
    let h3 = layer_full(prop, &h2, params.value("w3")?, bias("b3"), relu_last)?;
    Ok((h1, h2, h3))
}

/// Per-node logits `[n x l]` (node-task head).
pub fn node_forward(model: &GnnModel, cg: &ComputationGraph) -> Result<Tensor2> {
    if model.task != TaskKind::NodeClassification {
        return Err(GemError::InvalidInput("model is not a node classifier".into()));
    }
    let prop = NormAdj::from_dense(&cg.adjacency)?;
    node_logits_via(model, &prop, &cg.features)
}

pub fn node_logits_via(
    model: &GnnModel,
    prop: &NormAdj,
    features: &Tensor2,
) -> Result<Tensor2> {
    check_dims(model, features)?;
    let (h1, h2, h3) = eval_stack(prop, features, &model.params, true)?;
    let cc = crate::numerics::tensor::concat_cols(&[&h1, &h2, &h3])?;
    let lin = crate::numerics::tensor::matmul(&cc, model.params.value("w_head")?)?;
    let bias = model.params.value("b_head")?;
    let mut out = lin;
    for i in 0..out.rows {
        for (v, b) in out.row_mut(i).iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    out.ensure_finite("node logits")?;
    Ok(out)
}

/// Graph logits `[1 x l]` (max-pool head).
pub fn graph_forward(model: &GnnModel, cg: &ComputationGraph) -> Result<Tensor2> {
    if model.task != TaskKind::GraphClassification {
        return Err(GemError::InvalidInput("model is not a graph classifier".into()));
    }
    let prop = NormAdj::from_dense(&cg.adjacency)?;
    let row = graph_logits_via(model, &prop, &cg.features)?;
    Tensor2::from_vec(1, row.len(), row)
}

pub fn graph_logits_via(
    model: &GnnModel,
    prop: &NormAdj,
    features: &Tensor2,
) -> Result<Vec<f64>> {
    check_dims(model, features)?;
    let (_h1, _h2, h3) = eval_stack(prop, features, &model.params, true)?;
    let (pooled, _) = crate::numerics::tensor::global_max_pool_rows(&h3);
    let mut logits = matvec_row(pooled.row(0), model.params.value("w_head")?);
    for (v, b) in logits.iter_mut().zip(&model.params.value("b_head")?.data) {
        *v += b;
    }
    Ok(logits)
}

fn check_dims(model: &GnnModel, features: &Tensor2) -> Result<()> {
    if features.cols != model.input_dim {
        return Err(GemError::Structural(format!(
            "feature dim {} != model input dim {}",
            features.cols, model.input_dim
        )));
    }
    Ok(())
}

/// Node-task logits for one target row only. Computes exactly the rows of
/// each layer the target depends on; arithmetic matches the full forward
/// bit for bit.
pub fn node_logit_row_via(
    model: &GnnModel,
    prop: &NormAdj,
    features: &Tensor2,
    target: usize,
) -> Result<Vec<f64>> {
    check_dims(model, features)?;
    let n = prop.n();
    if target >= n {
        return Err(GemError::InvalidInput(format!("target {target} out of range")));
    }
    // rows needed at each layer, walking dependencies backwards from target
    let grow = |seed: &[usize]| -> Vec<usize> {
        let mut set = vec![false; n];
        for &v in seed {
            set[v] = true;
            for &w in prop.neighbors(v) {
                set[w] = true;
            }
        }
        (0..n).filter(|&v| set[v]).collect()
    };
    let need3 = vec![target];
    let need2 = grow(&need3);
    let need1 = grow(&need2);
    let need0 = grow(&need1);

    let w1 = model.params.value("w1")?;
    let w2 = model.params.value("w2")?;
    let w3 = model.params.value("w3")?;
    let bias = |name: &str| model.params.value(name).ok();

    let p1 = rows_matmul(features, w1, &need0, n);
    let h1 = agg_relu_rows(prop, &p1, &need1, w1.cols, bias("b1"), true);
    let p2 = rows_matmul_sparse(&h1, w2, &need1, n);
    let h2 = agg_relu_rows(prop, &p2, &need2, w2.cols, bias("b2"), true);
    let p3 = rows_matmul_sparse(&h2, w3, &need2, n);
    let h3 = agg_relu_rows(prop, &p3, &[target], w3.cols, bias("b3"), true);

    let mut cc = Vec::with_capacity(3 * w1.cols);
    cc.extend_from_slice(&h1[target]);
    cc.extend_from_slice(&h2[target]);
    cc.extend_from_slice(&h3[target]);
    let mut logits = matvec_row(&cc, model.params.value("w_head")?);
    for (v, b) in logits.iter_mut().zip(&model.params.value("b_head")?.data) {
        *v += b;
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(GemError::Numeric("non-finite logits".into()));
    }
    Ok(logits)
}

fn neighbor_lists_of(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    adj
}

fn rows_matmul(x: &Tensor2, w: &Tensor2, rows: &[usize], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); n];
    for &r in rows {
        out[r] = matvec_row(x.row(r), w);
    }
    out
}

fn rows_matmul_sparse(x: &[Vec<f64>], w: &Tensor2, rows: &[usize], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); n];
    for &r in rows {
        out[r] = matvec_row(&x[r], w);
    }
    out
}

fn agg_relu_rows(
    prop: &NormAdj,
    p: &[Vec<f64>],
    rows: &[usize],
    cols: usize,
    bias: Option<&Tensor2>,
    relu: bool,
) -> Vec<Vec<f64>> {
    let n = prop.n();
    let mut out = vec![Vec::new(); n];
    for &r in rows {
        let mut acc = vec![0.0; cols];
        for &(j, w) in prop.entries(r) {
            for (a, &v) in acc.iter_mut().zip(&p[j]) {
                *a += w * v;
            }
        }
        if let Some(b) = bias {
            for (a, bv) in acc.iter_mut().zip(&b.data) {
                *a += bv;
            }
        }
        if relu {
            for v in &mut acc {
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        out[r] = acc;
    }
    out
}

/// Softmax prediction at the target node (node task) or of the pooled graph
/// representation (graph task).
pub fn predict(model: &GnnModel, cg: &ComputationGraph) -> Result<Prediction> {
    let prop = NormAdj::from_dense(&cg.adjacency)?;
    predict_via(model, &prop, &cg.features, cg.target_local_index)
}

pub fn predict_via(
    model: &GnnModel,
    prop: &NormAdj,
    features: &Tensor2,
    target: Option<usize>,
) -> Result<Prediction> {
    let logits = match model.task {
        TaskKind::NodeClassification => {
            let t = target.ok_or_else(|| {
                GemError::InvalidInput("node-task prediction needs a target node".into())
            })?;
            node_logit_row_via(model, prop, features, t)?
        }
        TaskKind::GraphClassification => graph_logits_via(model, prop, features)?,
    };
    Ok(Prediction::from_logits(logits))
}

#[derive(Debug, Clone)]
pub struct GnnTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    /// Fraction of edges dropped (fresh sample each epoch) during
    /// training only. Explanation queries delete edges, so the classifier
    /// must hold up on edge-deleted graphs; evaluation always runs on the
    /// intact graph.
    pub edge_dropout: f64,
    pub seed: u64,
}

impl GnnTrainConfig {
    pub fn defaults_for(task: TaskKind, seed: u64) -> Self {
        // constant-feature node benchmarks escape the class-prior basin
        // slowly; early lr decay stalls them, so the plateau window is wide
        match task {
            TaskKind::NodeClassification => GnnTrainConfig {
                epochs: 2000,
                lr: 1e-3,
                batch_size: 0, // full batch
                plateau_patience: 800,
                lr_decay: 0.5,
                edge_dropout: 0.1,
                seed,
            },
            TaskKind::GraphClassification => GnnTrainConfig {
                epochs: 300,
                lr: 1e-3,
                batch_size: 32,
                plateau_patience: 100,
                lr_decay: 0.5,
                edge_dropout: 0.1,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl TrainReport {
    pub fn to_meta(&self) -> serde_json::Value {
        json!({
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
            "test_acc": self.test_acc,
            "best_epoch": self.best_epoch,
            "epochs": self.epochs_run,
        })
    }
}

/// Train a classifier on the split with Adam and early model selection by
/// validation accuracy. Deterministic given the config seed.
pub fn train_gnn(
    dataset: &LabeledDataset,
    split: &SplitSpec,
    config: &GnnTrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    match dataset.task {
        TaskKind::NodeClassification => train_node_task(dataset, split, config),
        TaskKind::GraphClassification => train_graph_task(dataset, split, config),
    }
}

fn train_node_task(
    dataset: &LabeledDataset,
    split: &SplitSpec,
    config: &GnnTrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    let g = &dataset.graphs[0];
    let labels_all = g.node_labels.as_ref().expect("node task carries labels");
    let prop = NormAdj::from_neighbor_lists((0..g.num_nodes()).map(|v| g.neighbors(v).to_vec()).collect());
    let features = g.features().clone();

    let mut model = GnnModel::new_random(
        dataset.task,
        g.feature_dim(),
        dataset.num_classes,
        stage_seed(config.seed, "gnn-init"),
    );
    // Background nodes (labeled nodes outside the explanation-instance set,
    // e.g. the base-graph class of the synthetic benchmarks) join the
    // training loss as auxiliary supervision: without them the classifier
    // never needs the motif structure and the causal signal for
    // explanations degenerates. They are never validation or test
    // instances.
    let instance_set: std::collections::BTreeSet<usize> =
        dataset.instances().into_iter().collect();
    let mut train_rows = split.train_ids.clone();
    train_rows.extend((0..g.num_nodes()).filter(|v| !instance_set.contains(v)));
    let train_labels: Vec<usize> = train_rows.iter().map(|&i| labels_all[i]).collect();
    let loss_spec = LossSpec::Classify {
        rows: Some(train_rows),
        labels: train_labels,
    };

    let accuracy = |model: &GnnModel, ids: &[usize]| -> Result<f64> {
        let logits = node_logits_via(model, &prop, &features)?;
        let correct = ids
            .iter()
            .filter(|&&i| {
                let row = logits.row(i);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(c, _)| c)
                    .unwrap();
                pred == labels_all[i]
            })
            .count();
        Ok(correct as f64 / ids.len().max(1) as f64)
    };

    let full_edges: Vec<(usize, usize)> = g.edges().to_vec();
    let n = g.num_nodes();
    let mut drop_rng = rng_from(stage_seed(config.seed, "gnn-dropedge"));
    let mut lr = config.lr;
    let mut best = (0.0f64, 0usize, model.params.clone());
    let mut since_improve = 0usize;
    for epoch in 0..config.epochs {
        let dropped;
        let train_prop = if config.edge_dropout > 0.0 {
            use rand::Rng;
            let kept: Vec<(usize, usize)> = full_edges
                .iter()
                .copied()
                .filter(|_| drop_rng.random::<f64>() >= config.edge_dropout)
                .collect();
            dropped = NormAdj::from_neighbor_lists(neighbor_lists_of(n, &kept));
            &dropped
        } else {
            &prop
        };
        let (loss, grads) = forward_backward(
            train_prop,
            &features,
            &model.params,
            &model.spec,
            &loss_spec,
        )
        .map_err(|e| GemError::Training {
            epoch,
            msg: e.to_string(),
        })?;
        if !loss.is_finite() {
            return Err(GemError::Training {
                epoch,
                msg: "loss diverged".into(),
            });
        }
        model.params.set_grads(&grads)?;
        model.params.adam_step(lr, ADAM_BETAS, ADAM_EPS);

        let val = accuracy(&model, &split.val_ids)?;
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: loss {loss:.5} val {val:.3} lr {lr:.2e}");
        }
        if val > best.0 {
            best = (val, epoch, model.params.clone());
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= config.plateau_patience {
                lr *= config.lr_decay;
                since_improve = 0;
            }
        }
    }
    model.params = best.2.clone();
    let report = TrainReport {
        train_acc: accuracy(&model, &split.train_ids)?,
        val_acc: best.0,
        test_acc: accuracy(&model, &split.test_ids)?,
        best_epoch: best.1,
        epochs_run: config.epochs,
    };
    Ok((model, report))
}

fn train_graph_task(
    dataset: &LabeledDataset,
    split: &SplitSpec,
    config: &GnnTrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    let input_dim = dataset.graphs[0].feature_dim();
    let mut model = GnnModel::new_random(
        dataset.task,
        input_dim,
        dataset.num_classes,
        stage_seed(config.seed, "gnn-init"),
    );

    // per-graph propagation structures, built once
    let prepared: Vec<(NormAdj, &Tensor2, usize, Vec<(usize, usize)>, usize)> = dataset
        .graphs
        .iter()
        .map(|g| {
            let prop = NormAdj::from_neighbor_lists(
                (0..g.num_nodes()).map(|v| g.neighbors(v).to_vec()).collect(),
            );
            (
                prop,
                g.features(),
                g.graph_label.unwrap(),
                g.edges().to_vec(),
                g.num_nodes(),
            )
        })
        .collect();

    let accuracy = |model: &GnnModel, ids: &[usize]| -> Result<f64> {
        let correct: usize = ids
            .par_iter()
            .map(|&i| {
                let (prop, feats, label, _, _) = &prepared[i];
                predict_via(model, prop, feats, None)
                    .map(|p| (p.predicted_class == *label) as usize)
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        Ok(correct as f64 / ids.len().max(1) as f64)
    };

    let mut rng = rng_from(stage_seed(config.seed, "gnn-batches"));
    let batch = config.batch_size.max(1);
    let mut lr = config.lr;
    let mut best = (0.0f64, 0usize, model.params.clone());
    let mut since_improve = 0usize;
    for epoch in 0..config.epochs {
        let mut order = split.train_ids.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let results: Vec<(f64, crate::numerics::GradMap)> = chunk
                .par_iter()
                .map(|&i| {
                    let (prop, feats, label, edges, n) = &prepared[i];
                    let loss_spec = LossSpec::Classify {
                        rows: None,
                        labels: vec![*label],
                    };
                    let dropped;
                    let train_prop = if config.edge_dropout > 0.0 {
                        use rand::Rng;
                        let mut rng = rng_from(stage_seed(
                            config.seed,
                            &format!("gnn-dropedge-{epoch}-{i}"),
                        ));
                        let kept: Vec<(usize, usize)> = edges
                            .iter()
                            .copied()
                            .filter(|_| rng.random::<f64>() >= config.edge_dropout)
                            .collect();
                        dropped = NormAdj::from_neighbor_lists(neighbor_lists_of(*n, &kept));
                        &dropped
                    } else {
                        prop
                    };
                    forward_backward(train_prop, feats, &model.params, &model.spec, &loss_spec)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| GemError::Training {
                    epoch,
                    msg: e.to_string(),
                })?;
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = crate::numerics::GradMap::new();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                crate::numerics::params::merge_grads(&mut grads, g);
            }
            crate::numerics::params::scale_grads(&mut grads, scale);
            epoch_loss += loss * scale;
            model.params.set_grads(&grads)?;
            model.params.adam_step(lr, ADAM_BETAS, ADAM_EPS);
        }
        if !epoch_loss.is_finite() {
            return Err(GemError::Training {
                epoch,
                msg: "loss diverged".into(),
            });
        }
        let val = accuracy(&model, &split.val_ids)?;
        if val > best.0 {
            best = (val, epoch, model.params.clone());
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= config.plateau_patience {
                lr *= config.lr_decay;
                since_improve = 0;
            }
        }
    }
    model.params = best.2.clone();
    let report = TrainReport {
        train_acc: accuracy(&model, &split.train_ids)?,
        val_acc: best.0,
        test_acc: accuracy(&model, &split.test_ids)?,
        best_epoch: best.1,
        epochs_run: config.epochs,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn toy_cg(task: TaskKind) -> ComputationGraph {
        let g = Graph::new(
            4,
            vec![(0, 1), (1, 2), (2, 3), (0, 2)],
            Tensor2::from_rows(vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 1.0],
                vec![0.5, -0.5],
            ])
            .unwrap(),
            None,
            None,
        )
        .unwrap();
        let mut cg = ComputationGraph::from_graph(&g, 0);
        if task == TaskKind::NodeClassification {
            cg.target_local_index = Some(1);
        }
        cg
    }

    #[test]
    fn zero_weights_give_uniform_prediction() {
        for task in [TaskKind::NodeClassification, TaskKind::GraphClassification] {
            let mut model = GnnModel::new_random(task, 2, 3, 0);
            for name in ["w1", "w2", "w3", "w_head"] {
                model.params.value_mut(name).unwrap().data.fill(0.0);
            }
            let cg = toy_cg(task);
            let p = predict(&model, &cg).unwrap();
            for v in &p.probabilities {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_is_pure_and_leaves_model_frozen() {
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 1);
        let cg = toy_cg(TaskKind::GraphClassification);
        let digest_before = model.params.digest();
        let a = predict(&model, &cg).unwrap();
        let b = predict(&model, &cg).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        assert_eq!(model.params.digest(), digest_before);
    }

    #[test]
    fn node_target_row_matches_full_forward_bitwise() {
        let model = GnnModel::new_random(TaskKind::NodeClassification, 2, 3, 7);
        let cg = toy_cg(TaskKind::NodeClassification);
        let full = node_forward(&model, &cg).unwrap();
        let prop = NormAdj::from_dense(&cg.adjacency).unwrap();
        for t in 0..cg.num_nodes() {
            let row = node_logit_row_via(&model, &prop, &cg.features, t).unwrap();
            assert_eq!(row.as_slice(), full.row(t), "row {t}");
        }
    }

    #[test]
    fn predict_requires_target_for_node_task() {
        let model = GnnModel::new_random(TaskKind::NodeClassification, 2, 3, 7);
        let mut cg = toy_cg(TaskKind::NodeClassification);
        cg.target_local_index = None;
        assert!(predict(&model, &cg).is_err());
    }

    #[test]
    fn single_node_logits_by_hand() {
        // isolated node: normalized adjacency is [[1]]; all hidden values
        // collapse to hand-computable constants
        let mut model = GnnModel::new_random(TaskKind::NodeClassification, 1, 2, 0);
        model.params.value_mut("w1").unwrap().data.fill(0.1);
        model.params.value_mut("w2").unwrap().data.fill(0.05);
        model.params.value_mut("w3").unwrap().data.fill(0.05);
        {
            let wh = model.params.value_mut("w_head").unwrap();
            for r in 0..wh.rows {
                wh.set(r, 0, 0.01);
                wh.set(r, 1, 0.02);
            }
        }
        model
            .params
            .value_mut("b_head")
            .unwrap()
            .data
            .copy_from_slice(&[0.1, -0.1]);
        let g = Graph::new(
            1,
            vec![],
            Tensor2::from_rows(vec![vec![2.0]]).unwrap(),
            None,
            None,
        )
        .unwrap();
        let mut cg = ComputationGraph::from_graph(&g, 0);
        cg.target_local_index = Some(0);
        let logits = node_forward(&model, &cg).unwrap();
        // h1 = relu(2.0 * 0.1) = 0.2 (x20); h2 = relu(20 * 0.2 * 0.05) = 0.2
        // h3 = 0.2; head: 60 * 0.2 * w + b
        assert!((logits.get(0, 0) - (60.0 * 0.2 * 0.01 + 0.1)).abs() < 1e-12);
        assert!((logits.get(0, 1) - (60.0 * 0.2 * 0.02 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn node_permutation_equivariance() {
        use rand::seq::SliceRandom;
        let model = GnnModel::new_random(TaskKind::NodeClassification, 2, 3, 3);
        let cg = toy_cg(TaskKind::NodeClassification);
        let base = node_forward(&model, &cg).unwrap();
        let mut rng = rng_from(17);
        for _ in 0..20 {
            let n = cg.num_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut adjacency = Tensor2::zeros(n, n);
            let mut features = Tensor2::zeros(n, cg.features.cols);
            for i in 0..n {
                features
                    .row_mut(perm[i])
                    .copy_from_slice(cg.features.row(i));
                for j in 0..n {
                    if cg.adjacency.get(i, j) != 0.0 {
                        adjacency.set(perm[i], perm[j], 1.0);
                    }
                }
            }
            let permuted = ComputationGraph {
                nodes: cg.nodes.clone(),
                target_local_index: None,
                adjacency,
                features,
                origin: 0,
            };
            let mut p = permuted.clone();
            p.target_local_index = Some(0);
            let out = node_forward(&model, &p).unwrap();
            for i in 0..n {
                for c in 0..base.cols {
                    assert!((out.get(perm[i], c) - base.get(i, c)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn graph_permutation_invariance() {
        use rand::seq::SliceRandom;
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 5);
        let cg = toy_cg(TaskKind::GraphClassification);
        let base = graph_forward(&model, &cg).unwrap();
        let mut rng = rng_from(23);
        for _ in 0..20 {
            let n = cg.num_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut adjacency = Tensor2::zeros(n, n);
            let mut features = Tensor2::zeros(n, cg.features.cols);
            for i in 0..n {
                features
                    .row_mut(perm[i])
                    .copy_from_slice(cg.features.row(i));
                for j in 0..n {
                    if cg.adjacency.get(i, j) != 0.0 {
                        adjacency.set(perm[i], perm[j], 1.0);
                    }
                }
            }
            let permuted = ComputationGraph {
                nodes: cg.nodes.clone(),
                target_local_index: None,
                adjacency,
                features,
                origin: 0,
            };
            let out = graph_forward(&model, &permuted).unwrap();
            for c in 0..base.cols {
                assert!((out.get(0, c) - base.get(0, c)).abs() < 1e-9);
            }
        }
    }
}
