//! The generative explainer: structural role features, a GCN encoder with
//! an inner-product decoder producing an edge-score mask, supervised
//! training against distilled ground truth, and top-K explanation
//! extraction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasets::{LabeledDataset, TaskKind};
use crate::distill::{DistilledExplanation, Edge};
use crate::error::{GemError, Result};
use crate::gnn::eval_stack;
use crate::graph::ComputationGraph;
use crate::numerics::model::{forward_backward, forward_loss, LossSpec, NetworkSpec};
use crate::numerics::params::ParamSet;
use crate::numerics::prop::NormAdj;
use crate::numerics::tensor::{matmul, sigmoid_scalar, Tensor2};
use crate::numerics::{Checkpoint, GradMap, ADAM_BETAS, ADAM_EPS};
use crate::rng::{mix64, rng_from, stage_seed};

pub const EXPLAIN_FORMAT: &str = "gem-explain-v1";

/// Trained auto-encoder plus the featurization recipe it was trained with.
#[derive(Debug, Clone)]
pub struct ExplainerModel {
    pub params: ParamSet,
    pub task: TaskKind,
    /// Encoder input width: role one-hot, plus raw features when
    /// `concat_features` is set.
    pub input_dim: usize,
    /// Width of the role one-hot block.
    pub role_vocab: usize,
    pub wl_iterations: usize,
    /// Seed WL colors from the discrete node label (feature argmax) instead
    /// of the degree.
    pub wl_feature_seed: bool,
    pub concat_features: bool,
    pub feature_dim: usize,
}

impl ExplainerModel {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::MaskAutoencoder {
            input_dim: self.input_dim,
        }
    }

    /// Role indices for a computation graph under this model's recipe.
    pub fn roles_for(&self, cg: &ComputationGraph) -> Result<Vec<usize>> {
        match self.task {
            TaskKind::NodeClassification => node_role_labels(cg, self.role_vocab - 1),
            TaskKind::GraphClassification => Ok(wl_labels(
                cg,
                self.wl_iterations,
                self.role_vocab,
                self.wl_feature_seed,
            )),
        }
    }

    /// Encoder input: one-hot roles, optionally concatenated with the raw
    /// node features.
    pub fn encoder_input(&self, cg: &ComputationGraph, roles: &[usize]) -> Result<Tensor2> {
        if roles.len() != cg.num_nodes() {
            return Err(GemError::Structural("role count != node count".into()));
        }
        let mut x = Tensor2::zeros(cg.num_nodes(), self.role_vocab);
        for (i, &r) in roles.iter().enumerate() {
            if r >= self.role_vocab {
                return Err(GemError::Structural(format!(
                    "role {r} exceeds vocabulary {}",
                    self.role_vocab
                )));
            }
            x.set(i, r, 1.0);
        }
        if self.concat_features {
            x = crate::numerics::tensor::concat_cols(&[&x, &cg.features])?;
        }
        if x.cols != self.input_dim {
            return Err(GemError::Structural(format!(
                "encoder input width {} != model input dim {}",
                x.cols, self.input_dim
            )));
        }
        Ok(x)
    }

    pub fn to_checkpoint(&self, rng_seed: u64, extra_meta: serde_json::Value) -> Checkpoint {
        let mut meta = json!({
            "task": self.task,
            "role_vocab": self.role_vocab,
            "wl_iterations": self.wl_iterations,
            "wl_feature_seed": self.wl_feature_seed,
            "concat_features": self.concat_features,
            "feature_dim": self.feature_dim,
        });
        if let (Some(m), Some(e)) = (meta.as_object_mut(), extra_meta.as_object()) {
            for (k, v) in e {
                m.insert(k.clone(), v.clone());
            }
        }
        Checkpoint::from_params(&self.params, "gem-explainer-v1", rng_seed, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.arch != "gem-explainer-v1" {
            return Err(GemError::Ingestion(format!(
                "checkpoint arch {:?} is not an explainer",
                ckpt.arch
            )));
        }
        #[derive(Deserialize)]
        struct Meta {
            task: TaskKind,
            role_vocab: usize,
            wl_iterations: usize,
            wl_feature_seed: bool,
            concat_features: bool,
            feature_dim: usize,
        }
        let meta: Meta = serde_json::from_value(ckpt.train_meta.clone())?;
        let params = ckpt.into_params()?;
        let input_dim = params.value("w1")?.rows;
        Ok(ExplainerModel {
            params,
            task: meta.task,
            input_dim,
            role_vocab: meta.role_vocab,
            wl_iterations: meta.wl_iterations,
            wl_feature_seed: meta.wl_feature_seed,
            concat_features: meta.concat_features,
            feature_dim: meta.feature_dim,
        })
    }
}

/// Structural roles for node-task instances: BFS distance from the target
/// node, capped at `cap` (unreachable nodes also map to `cap`).
pub fn node_role_labels(cg: &ComputationGraph, cap: usize) -> Result<Vec<usize>> {
    let target = cg.target_local_index.ok_or_else(|| {
        GemError::InvalidInput("role labeling needs a target node".into())
    })?;
    let adj = cg.neighbor_lists();
    let n = cg.num_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[target] = 0;
    let mut q = VecDeque::from([target]);
    while let Some(v) = q.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    Ok(dist.into_iter().map(|d| d.min(cap)).collect())
}

fn hash_u64s(values: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    mix64(h)
}

/// Weisfeiler-Lehman color refinement seeded by degree (or by the discrete
/// node label when `feature_seed` is set), hashed into a fixed vocabulary
/// so the encoding is stable across unseen graphs.
pub fn wl_labels(
    cg: &ComputationGraph,
    iterations: usize,
    vocab: usize,
    feature_seed: bool,
) -> Vec<usize> {
    let adj = cg.neighbor_lists();
    let n = cg.num_nodes();
    let mut colors: Vec<u64> = (0..n)
        .map(|v| {
            if feature_seed {
                let row = cg.features.row(v);
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i as u64)
                    .unwrap_or(0)
            } else {
                adj[v].len() as u64
            }
        })
        .collect();
    let mut scratch = vec![0u64; n];
    for _ in 0..iterations {
        for v in 0..n {
            let mut sig: Vec<u64> = adj[v].iter().map(|&w| colors[w]).collect();
            sig.sort_unstable();
            sig.insert(0, colors[v]);
            scratch[v] = hash_u64s(&sig);
        }
        colors.copy_from_slice(&scratch);
    }
    colors
        .into_iter()
        .map(|c| (mix64(c) % vocab as u64) as usize)
        .collect()
}

/// Latent embedding and the decoded edge-score matrix for one instance.
#[derive(Debug, Clone)]
pub struct ExplanationMask {
    pub latent: Tensor2,
    pub mask: Tensor2,
}

/// Encode the computation graph and decode the full mask
/// `sigma(Z Z^T)`.
pub fn encode_decode(
    model: &ExplainerModel,
    cg: &ComputationGraph,
    roles: &[usize],
) -> Result<ExplanationMask> {
    let x = model.encoder_input(cg, roles)?;
    let prop = NormAdj::from_dense(&cg.adjacency)?;
    let (_h1, _h2, z) = eval_stack(&prop, &x, &model.params, false)?;
    let gram = matmul(&z, &z.transpose())?;
    let mask = crate::numerics::tensor::sigmoid(&gram);
    Ok(ExplanationMask { latent: z, mask })
}

/// Edge scores for the existing edges only; linear in the edge count and
/// bitwise equal to the corresponding `encode_decode` mask entries.
pub fn edge_scores(
    model: &ExplainerModel,
    cg: &ComputationGraph,
    roles: &[usize],
) -> Result<Vec<(Edge, f64)>> {
    let x = model.encoder_input(cg, roles)?;
    let prop = NormAdj::from_neighbor_lists(cg.neighbor_lists());
    let (_h1, _h2, z) = eval_stack(&prop, &x, &model.params, false)?;
    Ok(cg
        .edges()
        .into_iter()
        .map(|(i, j)| {
            let mut dot = 0.0;
            for k in 0..z.cols {
                dot += z.get(i, k) * z.get(j, k);
            }
            ((i, j), sigmoid_scalar(dot))
        })
        .collect())
}

/// A ranked compact explanation for one instance.
#[derive(Debug, Clone)]
pub struct ExplanationResult {
    pub origin: usize,
    /// Selected edges with their mask scores, in selection order.
    pub selected_edges: Vec<(Edge, f64)>,
    /// The computation graph restricted to the selected edges.
    pub subgraph: ComputationGraph,
    pub k: usize,
}

impl ExplanationResult {
    pub fn edge_list(&self) -> Vec<Edge> {
        self.selected_edges.iter().map(|(e, _)| *e).collect()
    }
}

pub(crate) enum GrowFrom {
    Node(usize),
    TopEdge,
}

/// Rank scored edges descending and take the top K; with connectivity the
/// selection grows greedily from the start point, always adding the
/// highest-ranked edge adjacent to the current component.
pub(crate) fn select_edges(
    scored: &[(Edge, f64)],
    k: usize,
    connectivity: Option<GrowFrom>,
) -> Vec<(Edge, f64)> {
    let mut ranked: Vec<(Edge, f64)> = scored.to_vec();
    ranked.sort_by(|(ea, sa), (eb, sb)| sb.partial_cmp(sa).unwrap().then(ea.cmp(eb)));
    match connectivity {
        None => ranked.into_iter().take(k).collect(),
        Some(start) => {
            let mut component: BTreeSet<usize> = BTreeSet::new();
            let mut selected: Vec<(Edge, f64)> = Vec::new();
            let mut used = vec![false; ranked.len()];
            match start {
                GrowFrom::Node(v) => {
                    component.insert(v);
                }
                GrowFrom::TopEdge => {
                    if let Some(&((i, j), s)) = ranked.first() {
                        component.extend([i, j]);
                        selected.push(((i, j), s));
                        used[0] = true;
                    }
                }
            }
            while selected.len() < k {
                let next = ranked.iter().enumerate().find(|(idx, ((i, j), _))| {
                    !used[*idx] && (component.contains(i) || component.contains(j))
                });
                match next {
                    Some((idx, &((i, j), s))) => {
                        used[idx] = true;
                        component.extend([i, j]);
                        selected.push(((i, j), s));
                    }
                    None => break,
                }
            }
            selected
        }
    }
}

/// Produce the top-K explanation subgraph for one computation graph.
pub fn explain(
    model: &ExplainerModel,
    cg: &ComputationGraph,
    k: usize,
    connectivity: bool,
) -> Result<ExplanationResult> {
    if k < 1 {
        return Err(GemError::InvalidInput("K must be >= 1".into()));
    }
    let roles = model.roles_for(cg)?;
    let scored = edge_scores(model, cg, &roles)?;
    let grow = if connectivity {
        Some(match model.task {
            TaskKind::NodeClassification => GrowFrom::Node(cg.target_local_index.ok_or_else(
                || GemError::InvalidInput("connected node explanation needs a target".into()),
            )?),
            TaskKind::GraphClassification => GrowFrom::TopEdge,
        })
    } else {
        None
    };
    let selected_edges = select_edges(&scored, k, grow);
    let subgraph =
        cg.restricted_to_edges(&selected_edges.iter().map(|(e, _)| *e).collect::<Vec<_>>());
    Ok(ExplanationResult {
        origin: cg.origin,
        selected_edges,
        subgraph,
        k,
    })
}

/// Additive attribution view of a mask over a computation graph's edges:
/// `value(S) = psi0 + sum of psi_e over selected edges`.
#[derive(Debug, Clone)]
pub struct AttributionView {
    pub psi0: f64,
    pub psi: BTreeMap<Edge, f64>,
}

impl AttributionView {
    pub fn evaluate(&self, selected: &[Edge]) -> f64 {
        self.psi0
            + selected
                .iter()
                .map(|&(i, j)| {
                    self.psi
                        .get(&(i.min(j), i.max(j)))
                        .copied()
                        .unwrap_or(0.0)
                })
                .sum::<f64>()
    }
}

/// Attribution weights: the mask value of each existing edge.
pub fn attribution_view(mask: &ExplanationMask, cg: &ComputationGraph) -> AttributionView {
    let psi = cg
        .edges()
        .into_iter()
        .map(|(i, j)| ((i, j), mask.mask.get(i, j)))
        .collect();
    AttributionView { psi0: 0.0, psi }
}

#[derive(Debug, Clone)]
pub struct ExplainerTrainConfig {
    /// Defaults to 0.01 for graph tasks and 0.001 for node tasks.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub wl_iterations: usize,
    pub role_vocab: usize,
    /// Concatenate raw node features to the role encoding; defaults to
    /// "dataset has more than one feature column".
    pub concat_features: Option<bool>,
    pub seed: u64,
}

impl ExplainerTrainConfig {
    pub fn defaults(seed: u64) -> Self {
        ExplainerTrainConfig {
            lr: None,
            epochs: 100,
            batch_size: 32,
            wl_iterations: 3,
            role_vocab: 16,
            concat_features: None,
            seed,
        }
    }

    fn effective_lr(&self, task: TaskKind) -> f64 {
        self.lr.unwrap_or(match task {
            TaskKind::GraphClassification => 0.01,
            TaskKind::NodeClassification => 0.001,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExplainerTrainReport {
    pub initial_val_mse: f64,
    pub best_val_mse: f64,
    pub final_train_mse: f64,
    pub best_epoch: usize,
}

impl ExplainerTrainReport {
    pub fn to_meta(&self) -> serde_json::Value {
        json!({
            "initial_val_mse": self.initial_val_mse,
            "best_val_mse": self.best_val_mse,
            "final_train_mse": self.final_train_mse,
            "best_epoch": self.best_epoch,
        })
    }
}

struct Prepared {
    prop: NormAdj,
    x: Tensor2,
    edges: Vec<Edge>,
    targets: Vec<f64>,
}

fn prepare(
    model: &ExplainerModel,
    dataset: &LabeledDataset,
    records: &[DistilledExplanation],
    l_hops: usize,
) -> Result<Vec<Prepared>> {
    records
        .par_iter()
        .map(|rec| {
            let cg = dataset.computation_graph(rec.origin, l_hops)?;
            let roles = model.roles_for(&cg)?;
            let x = model.encoder_input(&cg, &roles)?;
            let prop = NormAdj::from_neighbor_lists(cg.neighbor_lists());
            let edges = cg.edges();
            let targets = edges.iter().map(|&e| rec.weight_of(e)).collect();
            Ok(Prepared {
                prop,
                x,
                edges,
                targets,
            })
        })
        .collect()
}

fn mean_mse(model: &ExplainerModel, set: &[Prepared]) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let total: f64 = set
        .par_iter()
        .map(|p| {
            forward_loss(
                &p.prop,
                &p.x,
                &model.params,
                &model.spec(),
                &LossSpec::EdgeRegression {
                    edges: p.edges.clone(),
                    targets: p.targets.clone(),
                },
            )
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / set.len() as f64)
}

/// Train the explainer on distilled ground truth with Adam; model selection
/// by validation MSE. Deterministic given the config seed.
pub fn train_explainer(
    dataset: &LabeledDataset,
    distilled_train: &[DistilledExplanation],
    distilled_val: &[DistilledExplanation],
    l_hops: usize,
    config: &ExplainerTrainConfig,
) -> Result<(ExplainerModel, ExplainerTrainReport)> {
    if distilled_train.is_empty() {
        return Err(GemError::InvalidInput("no training instances".into()));
    }
    let feature_dim = dataset.graphs[0].feature_dim();
    let concat = config.concat_features.unwrap_or(feature_dim > 1);
    let role_vocab = match dataset.task {
        TaskKind::NodeClassification => l_hops + 1,
        TaskKind::GraphClassification => config.role_vocab,
    };
    let input_dim = role_vocab + if concat { feature_dim } else { 0 };
    let spec = NetworkSpec::MaskAutoencoder { input_dim };
    let mut rng = rng_from(stage_seed(config.seed, "explainer-init"));
    let mut model = ExplainerModel {
        params: spec.init_params(&mut rng),
        task: dataset.task,
        input_dim,
        role_vocab,
        wl_iterations: config.wl_iterations,
        wl_feature_seed: feature_dim > 1,
        concat_features: concat,
        feature_dim,
    };

    let train_set = prepare(&model, dataset, distilled_train, l_hops)?;
    let val_set = prepare(&model, dataset, distilled_val, l_hops)?;
    let score_set = if val_set.is_empty() { &train_set } else { &val_set };

    let lr = config.effective_lr(dataset.task);
    let initial_val_mse = mean_mse(&model, score_set)?;
    let mut best = (initial_val_mse, 0usize, model.params.clone());
    let mut order_rng = rng_from(stage_seed(config.seed, "explainer-batches"));
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let results: Vec<(f64, GradMap)> = chunk
                .par_iter()
                .map(|&i| {
                    let p = &train_set[i];
                    forward_backward(
                        &p.prop,
                        &p.x,
                        &model.params,
                        &spec,
                        &LossSpec::EdgeRegression {
                            edges: p.edges.clone(),
                            targets: p.targets.clone(),
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| GemError::Training {
                    epoch,
                    msg: e.to_string(),
                })?;
            let mut grads = GradMap::new();
            for (_, g) in &results {
                crate::numerics::params::merge_grads(&mut grads, g);
            }
            crate::numerics::params::scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            model.params.set_grads(&grads)?;
            model.params.adam_step(lr, ADAM_BETAS, ADAM_EPS);
        }
        let val = mean_mse(&model, score_set)?;
        if !val.is_finite() {
            return Err(GemError::Training {
                epoch,
                msg: "validation loss diverged".into(),
            });
        }
        if val < best.0 {
            best = (val, epoch + 1, model.params.clone());
        }
    }
    model.params = best.2.clone();
    let report = ExplainerTrainReport {
        initial_val_mse,
        best_val_mse: best.0,
        final_train_mse: mean_mse(&model, &train_set)?,
        best_epoch: best.1,
    };
    Ok((model, report))
}

#[derive(Debug, Serialize, Deserialize)]
struct ExplainHeader {
    format: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExplainRecord {
    origin: usize,
    edges: Vec<(usize, usize, f64)>,
    #[serde(rename = "K")]
    k: usize,
}

/// Persist explanation results as JSON-lines with a format header.
pub fn save_explanations(path: &Path, results: &[ExplanationResult]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(
        &mut w,
        &ExplainHeader {
            format: EXPLAIN_FORMAT.to_string(),
        },
    )?;
    w.write_all(b"\n")?;
    for r in results {
        let rec = ExplainRecord {
            origin: r.origin,
            edges: r
                .selected_edges
                .iter()
                .map(|&((i, j), s)| (i, j, s))
                .collect(),
            k: r.k,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reload explanation edge lists (origin, edges with scores, K).
pub fn load_explanations(path: &Path) -> Result<Vec<(usize, Vec<(Edge, f64)>, usize)>> {
    let file = std::fs::File::open(path).map_err(|e| {
        GemError::MissingArtifact(format!("explanations {}: {e}", path.display()))
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| GemError::Ingestion("empty explanations file".into()))??;
    let header: ExplainHeader = serde_json::from_str(&header_line)?;
    if header.format != EXPLAIN_FORMAT {
        return Err(GemError::Ingestion(format!(
            "unexpected explanations format {:?}",
            header.format
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExplainRecord = serde_json::from_str(&line)?;
        out.push((
            rec.origin,
            rec.edges.into_iter().map(|(i, j, s)| ((i, j), s)).collect(),
            rec.k,
        ));
    }
    Ok(out)
}
