//! Benchmark corpora: synthetic motif datasets with ground-truth
//! explanations, TU-format loading for real graph-classification data, and
//! deterministic train/validation/test splits.

pub mod surrogate;
pub mod synthetic;
pub mod tu;

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::graph::Graph;
use crate::numerics::tensor::Tensor2;
use crate::rng::rng_from;

pub const DATASET_FORMAT: &str = "gem-dataset-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "node-classification")]
    NodeClassification,
    #[serde(rename = "graph-classification")]
    GraphClassification,
}

/// A corpus plus task metadata. For node tasks there is exactly one graph
/// carrying node labels; for graph tasks every graph carries a label.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub graphs: Vec<Graph>,
    pub task: TaskKind,
    pub num_classes: usize,
    /// Ground-truth motif edges, one edge set per planted motif
    /// (synthetic node-task datasets only).
    pub motif_edges: Option<Vec<Vec<(usize, usize)>>>,
}

impl LabeledDataset {
    pub fn new(
        graphs: Vec<Graph>,
        task: TaskKind,
        num_classes: usize,
        motif_edges: Option<Vec<Vec<(usize, usize)>>>,
    ) -> Result<Self> {
        match task {
            TaskKind::NodeClassification => {
                if graphs.len() != 1 || graphs[0].node_labels.is_none() {
                    return Err(GemError::InvalidInput(
                        "node task requires exactly one graph with node labels".into(),
                    ));
                }
                if let Some(labels) = &graphs[0].node_labels {
                    if labels.iter().any(|&l| l >= num_classes) {
                        return Err(GemError::InvalidInput("node label out of range".into()));
                    }
                }
            }
            TaskKind::GraphClassification => {
                for (i, g) in graphs.iter().enumerate() {
                    match g.graph_label {
                        Some(l) if l < num_classes => {}
                        Some(_) => {
                            return Err(GemError::InvalidInput(format!(
                                "graph {i} label out of range"
                            )))
                        }
                        None => {
                            return Err(GemError::InvalidInput(format!("graph {i} has no label")))
                        }
                    }
                }
            }
        }
        if let Some(motifs) = &motif_edges {
            let g = &graphs[0];
            for (mi, edges) in motifs.iter().enumerate() {
                for &(a, b) in edges {
                    if !g.has_edge(a, b) {
                        return Err(GemError::InvalidInput(format!(
                            "motif {mi} edge ({a}, {b}) not present in graph"
                        )));
                    }
                }
            }
        }
        Ok(LabeledDataset {
            graphs,
            task,
            num_classes,
            motif_edges,
        })
    }

    /// Explanation instances: motif-member node indices for node tasks,
    /// graph indices for graph tasks. Ascending.
    pub fn instances(&self) -> Vec<usize> {
        match self.task {
            TaskKind::NodeClassification => {
                let mut nodes: Vec<usize> = self
                    .motif_edges
                    .iter()
                    .flatten()
                    .flatten()
                    .flat_map(|&(a, b)| [a, b])
                    .collect();
                nodes.sort_unstable();
                nodes.dedup();
                nodes
            }
            TaskKind::GraphClassification => (0..self.graphs.len()).collect(),
        }
    }

    /// Which planted motif a node belongs to, if any.
    pub fn motif_of_node(&self, node: usize) -> Option<usize> {
        let motifs = self.motif_edges.as_ref()?;
        motifs
            .iter()
            .position(|edges| edges.iter().any(|&(a, b)| a == node || b == node))
    }

    /// The computation graph a model prediction for `instance` depends on:
    /// the L-hop neighborhood for node tasks, the whole graph otherwise.
    pub fn computation_graph(
        &self,
        instance: usize,
        l_hops: usize,
    ) -> Result<crate::graph::ComputationGraph> {
        match self.task {
            TaskKind::NodeClassification => {
                crate::graph::l_hop_subgraph(&self.graphs[0], instance, l_hops)
            }
            TaskKind::GraphClassification => {
                let g = self.graphs.get(instance).ok_or_else(|| {
                    GemError::InvalidInput(format!("graph {instance} out of range"))
                })?;
                Ok(crate::graph::ComputationGraph::from_graph(g, instance))
            }
        }
    }

    /// Ground-truth label of an instance.
    pub fn instance_label(&self, instance: usize) -> Result<usize> {
        match self.task {
            TaskKind::NodeClassification => self.graphs[0]
                .node_labels
                .as_ref()
                .and_then(|l| l.get(instance).copied())
                .ok_or_else(|| GemError::InvalidInput(format!("no label for node {instance}"))),
            TaskKind::GraphClassification => self
                .graphs
                .get(instance)
                .and_then(|g| g.graph_label)
                .ok_or_else(|| GemError::InvalidInput(format!("no label for graph {instance}"))),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let record = DatasetRecord::from_dataset(self);
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| GemError::MissingArtifact(format!("dataset {}: {e}", path.display())))?;
        let record: DatasetRecord = serde_json::from_reader(BufReader::new(file))?;
        record.into_dataset()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    node_labels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    graph_label: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    format: String,
    task: TaskKind,
    num_classes: usize,
    graphs: Vec<GraphRecord>,
    motif_edges: Option<Vec<Vec<(usize, usize)>>>,
}

impl DatasetRecord {
    fn from_dataset(ds: &LabeledDataset) -> Self {
        DatasetRecord {
            format: DATASET_FORMAT.to_string(),
            task: ds.task,
            num_classes: ds.num_classes,
            graphs: ds
                .graphs
                .iter()
                .map(|g| GraphRecord {
                    n: g.num_nodes(),
                    edges: g.edges().to_vec(),
                    features: (0..g.num_nodes())
                        .map(|i| g.features().row(i).to_vec())
                        .collect(),
                    node_labels: g.node_labels.clone(),
                    graph_label: g.graph_label,
                })
                .collect(),
            motif_edges: ds.motif_edges.clone(),
        }
    }

    fn into_dataset(self) -> Result<LabeledDataset> {
        if self.format != DATASET_FORMAT {
            return Err(GemError::Ingestion(format!(
                "unexpected dataset format {:?}",
                self.format
            )));
        }
        let graphs = self
            .graphs
            .into_iter()
            .map(|r| {
                Graph::new(
                    r.n,
                    r.edges,
                    Tensor2::from_rows(r.features)?,
                    r.node_labels,
                    r.graph_label,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(graphs, self.task, self.num_classes, self.motif_edges)
    }
}

/// Disjoint instance split with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Rec<'a> {
            format: &'a str,
            #[serde(flatten)]
            split: &'a SplitSpec,
        }
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(
            &mut w,
            &Rec {
                format: "gem-split-v1",
                split: self,
            },
        )?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Rec {
            format: String,
            #[serde(flatten)]
            split: SplitSpec,
        }
        let file = std::fs::File::open(path)
            .map_err(|e| GemError::MissingArtifact(format!("split {}: {e}", path.display())))?;
        let rec: Rec = serde_json::from_reader(BufReader::new(file))?;
        if rec.format != "gem-split-v1" {
            return Err(GemError::Ingestion(format!(
                "unexpected split format {:?}",
                rec.format
            )));
        }
        Ok(rec.split)
    }
}

/// Uniform random disjoint split over the dataset's explanation instances.
/// When the counts cover fewer instances than exist, the highest-index
/// instances are dropped deterministically before shuffling.
pub fn make_split(
    dataset: &LabeledDataset,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<SplitSpec> {
    let pool = dataset.instances();
    let (n_train, n_val, n_test) = counts;
    let total = n_train + n_val + n_test;
    if total > pool.len() {
        return Err(GemError::InvalidInput(format!(
            "split counts {total} exceed {} instances",
            pool.len()
        )));
    }
    let mut used: Vec<usize> = pool[..total].to_vec();
    let mut rng = rng_from(seed);
    used.shuffle(&mut rng);
    Ok(SplitSpec {
        train_ids: used[..n_train].to_vec(),
        val_ids: used[n_train..n_train + n_val].to_vec(),
        test_ids: used[n_train + n_val..].to_vec(),
        seed,
    })
}

/// Count of instances per ground-truth class, for reporting.
pub fn class_histogram(dataset: &LabeledDataset) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    match dataset.task {
        TaskKind::NodeClassification => {
            if let Some(labels) = &dataset.graphs[0].node_labels {
                for &l in labels {
                    *hist.entry(l).or_insert(0) += 1;
                }
            }
        }
        TaskKind::GraphClassification => {
            for g in &dataset.graphs {
                if let Some(l) = g.graph_label {
                    *hist.entry(l).or_insert(0) += 1;
                }
            }
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph_dataset() -> LabeledDataset {
        let graphs = (0..10)
            .map(|i| {
                Graph::new(
                    3,
                    vec![(0, 1), (1, 2)],
                    Tensor2::zeros(3, 2),
                    None,
                    Some(i % 2),
                )
                .unwrap()
            })
            .collect();
        LabeledDataset::new(graphs, TaskKind::GraphClassification, 2, None).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let ds = tiny_graph_dataset();
        let split = make_split(&ds, (6, 2, 2), 3).unwrap();
        assert_eq!(split.train_ids.len(), 6);
        assert_eq!(split.val_ids.len(), 2);
        assert_eq!(split.test_ids.len(), 2);
        let mut all: Vec<usize> = split
            .train_ids
            .iter()
            .chain(&split.val_ids)
            .chain(&split.test_ids)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_rejects_oversubscription() {
        let ds = tiny_graph_dataset();
        assert!(make_split(&ds, (9, 1, 1), 3).is_err());
    }

    #[test]
    fn split_is_deterministic_and_drops_highest() {
        let ds = tiny_graph_dataset();
        let a = make_split(&ds, (5, 2, 2), 7).unwrap();
        let b = make_split(&ds, (5, 2, 2), 7).unwrap();
        assert_eq!(a, b);
        // instance 9 is dropped, never split
        assert!(!a.train_ids.contains(&9) && !a.val_ids.contains(&9) && !a.test_ids.contains(&9));
    }
}
