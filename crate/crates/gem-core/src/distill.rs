//! Ground-truth distillation: per-edge causal contributions (how much does
//! deleting one edge hurt the frozen classifier?) and a greedy pass that
//! reduces a computation graph to its top-K error-critical edges, with an
//! optional connectivity rule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDataset, TaskKind};
use crate::error::{GemError, Result};
use crate::gnn::{predict_via, GnnModel};
use crate::graph::ComputationGraph;
use crate::numerics::prop::NormAdj;
use crate::numerics::tensor::Tensor2;

pub const DISTILL_FORMAT: &str = "gem-distill-v1";

pub type Edge = (usize, usize);

/// Per-edge causal contributions and the distilled top-K ground-truth
/// subgraph for one instance.
#[derive(Debug, Clone)]
pub struct DistilledExplanation {
    pub origin: usize,
    pub base_error: f64,
    /// Initial-pass contributions (not persisted to JSONL).
    pub edge_contributions: BTreeMap<Edge, f64>,
    /// Kept edges with normalized weights, descending by weight.
    pub kept_edges: Vec<(Edge, f64)>,
    pub k: usize,
    pub connected: bool,
}

impl DistilledExplanation {
    /// Weighted adjacency with normalized weights on kept edges, 0 elsewhere.
    pub fn target_mask(&self, n: usize) -> Tensor2 {
        let mut m = Tensor2::zeros(n, n);
        for &((i, j), w) in &self.kept_edges {
            m.set(i, j, w);
            m.set(j, i, w);
        }
        m
    }

    /// Normalized weight of an edge, 0 when not kept.
    pub fn weight_of(&self, edge: Edge) -> f64 {
        let key = (edge.0.min(edge.1), edge.0.max(edge.1));
        self.kept_edges
            .iter()
            .find(|(e, _)| *e == key)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn kept_edge_list(&self) -> Vec<Edge> {
        self.kept_edges.iter().map(|(e, _)| *e).collect()
    }
}

/// Cross-entropy of the frozen model against the instance's label:
/// `-ln p_y`.
pub fn model_error(model: &GnnModel, cg: &ComputationGraph, y: usize) -> Result<f64> {
    if y >= model.num_classes {
        return Err(GemError::InvalidInput(format!("class {y} out of range")));
    }
    let p = crate::gnn::predict(model, cg)?;
    let err = -p.probabilities[y].ln();
    if !err.is_finite() {
        return Err(GemError::Numeric("model error is not finite".into()));
    }
    Ok(err)
}

/// Increase in model error caused by deleting `edge`: positive means the
/// edge is causally important for the prediction.
pub fn edge_causal_contribution(
    model: &GnnModel,
    cg: &ComputationGraph,
    y: usize,
    edge: Edge,
) -> Result<f64> {
    let ev = Evaluator::new(model, cg, y)?;
    let base = ev.error_of(&ev.full_edges)?;
    let mut without = ev.full_edges.clone();
    if !without.remove(&normalize_edge(edge)) {
        return Err(GemError::InvalidInput(format!(
            "edge ({}, {}) not present",
            edge.0, edge.1
        )));
    }
    Ok(ev.error_of(&without)? - base)
}

#[derive(Debug, Clone)]
pub struct DistillOptions {
    pub k: usize,
    pub connectivity: bool,
    /// Node the connected explanation must contain. Defaults to the
    /// computation graph's target node for node tasks.
    pub anchor: Option<usize>,
    /// Keep the raw sign convention of the source procedure (kept edges get
    /// negative weights, so the pruning order inverts). Audit flag only.
    pub literal_sign: bool,
}

impl DistillOptions {
    pub fn new(k: usize, connectivity: bool) -> Self {
        DistillOptions {
            k,
            connectivity,
            anchor: None,
            literal_sign: false,
        }
    }
}

fn normalize_edge(e: Edge) -> Edge {
    (e.0.min(e.1), e.0.max(e.1))
}

/// Shared evaluation context: frozen model, features, label, and fast
/// error evaluation for arbitrary edge subsets of one computation graph.
struct Evaluator<'a> {
    model: &'a GnnModel,
    features: &'a Tensor2,
    target: Option<usize>,
    y: usize,
    n: usize,
    full_edges: BTreeSet<Edge>,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a GnnModel, cg: &'a ComputationGraph, y: usize) -> Result<Self> {
        if y >= model.num_classes {
            return Err(GemError::InvalidInput(format!("class {y} out of range")));
        }
        if model.task == TaskKind::NodeClassification && cg.target_local_index.is_none() {
            return Err(GemError::InvalidInput(
                "node-task distillation needs a target node".into(),
            ));
        }
        Ok(Evaluator {
            model,
            features: &cg.features,
            target: cg.target_local_index,
            y,
            n: cg.num_nodes(),
            full_edges: cg.edges().into_iter().collect(),
        })
    }

    fn neighbor_lists(&self, edges: &BTreeSet<Edge>) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    /// `-ln p_y` of the model on the graph restricted to `edges`.
    fn error_of(&self, edges: &BTreeSet<Edge>) -> Result<f64> {
        let prop = NormAdj::from_neighbor_lists(self.neighbor_lists(edges));
        let p = predict_via(self.model, &prop, self.features, self.target)?;
        let err = -p.probabilities[self.y].ln();
        if !err.is_finite() {
            return Err(GemError::Numeric("model error is not finite".into()));
        }
        Ok(err)
    }

    /// Restrict `edges` to one component: the one containing `anchor`, or
    /// the largest (ties to the component with the lowest node index).
    fn component_restrict(&self, edges: &BTreeSet<Edge>, anchor: Option<usize>) -> BTreeSet<Edge> {
        let adj = self.neighbor_lists(edges);
        let mut comp_of = vec![usize::MAX; self.n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for start in 0..self.n {
            if comp_of[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            comp_of[start] = id;
            let mut q = VecDeque::from([start]);
            while let Some(v) = q.pop_front() {
                for &w in &adj[v] {
                    if comp_of[w] == usize::MAX {
                        comp_of[w] = id;
                        members.push(w);
                        q.push_back(w);
                    }
                }
            }
            comps.push(members);
        }
        let chosen = match anchor {
            Some(a) => comp_of[a],
            None => comps
                .iter()
                .enumerate()
                .max_by(|(_, x), (_, y)| x.len().cmp(&y.len()).then(y[0].cmp(&x[0])))
                .map(|(i, _)| i)
                .unwrap(),
        };
        edges
            .iter()
            .copied()
            .filter(|&(i, j)| comp_of[i] == chosen && comp_of[j] == chosen)
            .collect()
    }
}

/// Distill the ground-truth explanation for one instance.
///
/// 1. score every edge by the error increase its removal causes;
/// 2. walk edges in ascending score order, greedily committing removals
///    that do not increase the current error (re-restricting to the
///    anchored/largest component when connectivity is on) and recording an
///    importance weight for edges that must stay;
/// 3. prune kept edges lowest-weight-first until at most K remain;
/// 4. min-max normalize the surviving weights into (0, 1].
pub fn distill(
    model: &GnnModel,
    cg: &ComputationGraph,
    y: usize,
    opts: &DistillOptions,
) -> Result<DistilledExplanation> {
    if opts.k < 1 {
        return Err(GemError::InvalidInput("K must be >= 1".into()));
    }
    if cg.num_edges() == 0 {
        return Err(GemError::InvalidInput(
            "computation graph has no edges to distill".into(),
        ));
    }
    let anchor = if opts.connectivity {
        let a = opts.anchor.or(cg.target_local_index);
        if let Some(a) = a {
            if a >= cg.num_nodes() {
                return Err(GemError::InvalidInput(format!(
                    "anchor {a} outside computation graph"
                )));
            }
        }
        a
    } else {
        None
    };

    let ev = Evaluator::new(model, cg, y)?;
    let base_error = ev.error_of(&ev.full_edges)?;

    // initial pass: causal contribution of every edge
    let mut edge_contributions = BTreeMap::new();
    for &e in &ev.full_edges {
        let mut without = ev.full_edges.clone();
        without.remove(&e);
        edge_contributions.insert(e, ev.error_of(&without)? - base_error);
    }

    // ascending by (contribution, edge)
    let mut sorted: Vec<Edge> = ev.full_edges.iter().copied().collect();
    sorted.sort_by(|a, b| {
        let ca = edge_contributions[a];
        let cb = edge_contributions[b];
        ca.partial_cmp(&cb).unwrap().then(a.cmp(b))
    });

    // greedy pass
    let mut current = ev.full_edges.clone();
    let mut current_error = base_error;
    let mut weights: BTreeMap<Edge, f64> = BTreeMap::new();
    for &e in &sorted {
        if !current.contains(&e) {
            continue; // already dropped by an earlier component restriction
        }
        let mut tentative = current.clone();
        tentative.remove(&e);
        if opts.connectivity {
            tentative = ev.component_restrict(&tentative, anchor);
        }
        let tentative_error = ev.error_of(&tentative)?;
        if tentative_error > current_error {
            let w = if opts.literal_sign {
                current_error - tentative_error
            } else {
                tentative_error - current_error
            };
            weights.insert(e, w);
        } else {
            current = tentative;
            current_error = tentative_error;
        }
    }

    // prune to K, lowest weight first, re-restricting after each removal
    while current.len() > opts.k {
        let victim = current
            .iter()
            .copied()
            .min_by(|a, b| {
                let wa = weights[a];
                let wb = weights[b];
                wa.partial_cmp(&wb).unwrap().then(a.cmp(b))
            })
            .unwrap();
        current.remove(&victim);
        if opts.connectivity {
            current = ev.component_restrict(&current, anchor);
        }
    }

    // min-max normalize surviving weights into (0, 1]; a floor keeps kept
    // edges separable from zeros in the target mask
    let survivors: Vec<(Edge, f64)> = current.iter().map(|&e| (e, weights[&e])).collect();
    let kept_edges = normalize_weights(survivors, opts.literal_sign);

    debug_assert!(kept_edges.len() <= opts.k);
    Ok(DistilledExplanation {
        origin: cg.origin,
        base_error,
        edge_contributions,
        kept_edges,
        k: opts.k,
        connected: opts.connectivity,
    })
}

fn normalize_weights(mut survivors: Vec<(Edge, f64)>, literal_sign: bool) -> Vec<(Edge, f64)> {
    if survivors.is_empty() {
        return survivors;
    }
    let lo = survivors.iter().map(|(_, w)| *w).fold(f64::INFINITY, f64::min);
    let hi = survivors
        .iter()
        .map(|(_, w)| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    for (_, w) in survivors.iter_mut() {
        *w = if hi > lo { 0.1 + 0.9 * (*w - lo) / (hi - lo) } else { 1.0 };
    }
    // descending by weight, ties by edge; under the literal sign convention
    // the raw ordering is preserved by the same rule after normalization
    survivors.sort_by(|(ea, wa), (eb, wb)| wb.partial_cmp(wa).unwrap().then(ea.cmp(eb)));
    let _ = literal_sign;
    survivors
}

/// Distill many instances of a dataset in parallel; results ordered by the
/// input id order.
pub fn distill_instances(
    model: &GnnModel,
    dataset: &LabeledDataset,
    ids: &[usize],
    l_hops: usize,
    opts: &DistillOptions,
) -> Result<Vec<DistilledExplanation>> {
    ids.par_iter()
        .map(|&id| {
            let cg = dataset.computation_graph(id, l_hops)?;
            let y = dataset.instance_label(id)?;
            distill(model, &cg, y, opts)
        })
        .collect()
}

/// Fraction of instances whose distilled subgraph (all nodes, non-kept
/// edges zeroed) is classified to the ground-truth label.
pub fn distillation_accuracy(
    model: &GnnModel,
    explanations: &[DistilledExplanation],
    dataset: &LabeledDataset,
    l_hops: usize,
) -> Result<f64> {
    if explanations.is_empty() {
        return Err(GemError::InvalidInput("no explanations to score".into()));
    }
    let correct: usize = explanations
        .par_iter()
        .map(|expl| {
            let cg = dataset.computation_graph(expl.origin, l_hops)?;
            let sub = cg.restricted_to_edges(&expl.kept_edge_list());
            let p = crate::gnn::predict(model, &sub)?;
            let y = dataset.instance_label(expl.origin)?;
            Ok((p.predicted_class == y) as usize)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / explanations.len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct DistillHeader {
    format: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistillRecord {
    origin: usize,
    #[serde(rename = "K")]
    k: usize,
    base_error: f64,
    edges: Vec<(usize, usize, f64)>,
    connected: bool,
}

/// Persist distilled ground truth as JSON-lines with a format header.
pub fn save_distilled(path: &Path, records: &[DistilledExplanation]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(
        &mut w,
        &DistillHeader {
            format: DISTILL_FORMAT.to_string(),
        },
    )?;
    w.write_all(b"\n")?;
    for r in records {
        let rec = DistillRecord {
            origin: r.origin,
            k: r.k,
            base_error: r.base_error,
            edges: r.kept_edges.iter().map(|&((i, j), w)| (i, j, w)).collect(),
            connected: r.connected,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reload distilled records; initial-pass contributions are not persisted
/// and come back empty.
pub fn load_distilled(path: &Path) -> Result<Vec<DistilledExplanation>> {
    let file = std::fs::File::open(path).map_err(|e| {
        GemError::MissingArtifact(format!("distilled ground truth {}: {e}", path.display()))
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| GemError::Ingestion("empty distill file".into()))??;
    let header: DistillHeader = serde_json::from_str(&header_line)?;
    if header.format != DISTILL_FORMAT {
        return Err(GemError::Ingestion(format!(
            "unexpected distill format {:?}",
            header.format
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DistillRecord = serde_json::from_str(&line)?;
        out.push(DistilledExplanation {
            origin: rec.origin,
            base_error: rec.base_error,
            edge_contributions: BTreeMap::new(),
            kept_edges: rec.edges.into_iter().map(|(i, j, w)| ((i, j), w)).collect(),
            k: rec.k,
            connected: rec.connected,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{connected_components, Graph};
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_cg(seed: u64, n: usize, task: TaskKind) -> ComputationGraph {
        let mut rng = rng_from(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    edges.push((i, j));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 1));
        }
        let features = Tensor2 {
            rows: n,
            cols: 2,
            data: (0..n * 2).map(|_| rng.random::<f64>()).collect(),
        };
        let g = Graph::new(n, edges, features, None, None).unwrap();
        let mut cg = ComputationGraph::from_graph(&g, 0);
        if task == TaskKind::NodeClassification {
            cg.target_local_index = Some(0);
        }
        cg
    }

    #[test]
    fn model_error_analytic_cases() {
        // uniform prediction on a 2-class model: error = ln 2
        let mut model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 0);
        for name in ["w1", "w2", "w3", "w_head"] {
            model.params.value_mut(name).unwrap().data.fill(0.0);
        }
        let cg = random_cg(1, 4, TaskKind::GraphClassification);
        let err = model_error(&model, &cg, 0).unwrap();
        assert!((err - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn contribution_matches_two_call_oracle_bitwise() {
        for seed in 0..10u64 {
            let task = if seed % 2 == 0 {
                TaskKind::NodeClassification
            } else {
                TaskKind::GraphClassification
            };
            let model = GnnModel::new_random(task, 2, 3, seed + 100);
            let cg = random_cg(seed, 6, task);
            let y = (seed % 3) as usize;
            let base = model_error(&model, &cg, y).unwrap();
            for e in cg.edges() {
                let fast = edge_causal_contribution(&model, &cg, y, e).unwrap();
                let removed = crate::graph::remove_edge(&cg, e).unwrap();
                let oracle = model_error(&model, &removed, y).unwrap() - base;
                assert_eq!(fast, oracle, "seed {seed} edge {e:?}");
            }
        }
    }

    #[test]
    fn contribution_rejects_absent_edge() {
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 0);
        let cg = random_cg(3, 4, TaskKind::GraphClassification);
        let absent = (0..4)
            .flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
            .find(|&(i, j)| !cg.has_edge(i, j));
        if let Some(e) = absent {
            assert!(edge_causal_contribution(&model, &cg, 0, e).is_err());
        }
    }

    #[test]
    fn distilled_output_respects_k_and_connectivity() {
        for seed in 0..8u64 {
            let task = if seed % 2 == 0 {
                TaskKind::NodeClassification
            } else {
                TaskKind::GraphClassification
            };
            let model = GnnModel::new_random(task, 2, 2, seed);
            let cg = random_cg(seed + 40, 7, task);
            let opts = DistillOptions::new(3, true);
            let d = distill(&model, &cg, (seed % 2) as usize, &opts).unwrap();
            assert!(d.kept_edges.len() <= 3);
            for (_, w) in &d.kept_edges {
                assert!(*w > 0.0 && *w <= 1.0);
            }
            if !d.kept_edges.is_empty() {
                let sub = cg.restricted_to_edges(&d.kept_edge_list());
                let comps = connected_components(&sub);
                let nonsingleton: Vec<_> = comps.iter().filter(|c| c.len() > 1).collect();
                assert!(nonsingleton.len() <= 1, "kept edges must form one component");
                if task == TaskKind::NodeClassification {
                    let t = cg.target_local_index.unwrap();
                    assert!(
                        nonsingleton.is_empty() || nonsingleton[0].contains(&t),
                        "connected explanation must contain the target"
                    );
                }
            }
        }
    }

    #[test]
    fn distill_is_deterministic() {
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 9);
        let cg = random_cg(77, 6, TaskKind::GraphClassification);
        let opts = DistillOptions::new(4, true);
        let a = distill(&model, &cg, 1, &opts).unwrap();
        let b = distill(&model, &cg, 1, &opts).unwrap();
        assert_eq!(a.kept_edges, b.kept_edges);
        assert_eq!(a.base_error, b.base_error);
    }

    #[test]
    fn kept_edges_at_smaller_k_are_a_subset() {
        for seed in 0..6u64 {
            let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, seed);
            let cg = random_cg(seed + 10, 7, TaskKind::GraphClassification);
            let big = distill(&model, &cg, 0, &DistillOptions::new(5, true)).unwrap();
            let small = distill(&model, &cg, 0, &DistillOptions::new(2, true)).unwrap();
            let big_set: BTreeSet<Edge> = big.kept_edge_list().into_iter().collect();
            for e in small.kept_edge_list() {
                assert!(big_set.contains(&e), "seed {seed}: {e:?} in K=2 but not K=5");
            }
        }
    }

    #[test]
    fn distill_rejects_bad_inputs() {
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 0);
        let cg = random_cg(5, 5, TaskKind::GraphClassification);
        assert!(distill(&model, &cg, 0, &DistillOptions::new(0, false)).is_err());
        let mut opts = DistillOptions::new(2, true);
        opts.anchor = Some(99);
        assert!(distill(&model, &cg, 0, &opts).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 1);
        let cg = random_cg(21, 6, TaskKind::GraphClassification);
        let d = distill(&model, &cg, 0, &DistillOptions::new(3, true)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_distilled(&path, &[d.clone()]).unwrap();
        let loaded = load_distilled(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].origin, d.origin);
        assert_eq!(loaded[0].kept_edges, d.kept_edges);
        assert_eq!(loaded[0].base_error, d.base_error);
        assert_eq!(loaded[0].k, d.k);
    }
}
