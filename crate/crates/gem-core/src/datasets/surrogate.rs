//! Offline stand-ins for the real TU corpora.
//!
//! The real archives are not redistributable with this repository, so these
//! generators build molecule-like graph-classification corpora with the
//! same shape (atom-type node labels, ~30-node graphs, binary labels whose
//! evidence is a small functional-group subgraph). They are written through
//! the TU writer so the whole ingestion path is exercised; point the
//! pipeline at a real TU directory to run the originals instead.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::Graph;
use crate::numerics::tensor::Tensor2;
use crate::rng::rng_from;

use super::{LabeledDataset, TaskKind};

const CARBON: usize = 0;
const NITROGEN: usize = 1;
const OXYGEN: usize = 2;

fn one_hot(labels: &[usize], dim: usize) -> Tensor2 {
    let mut t = Tensor2::zeros(labels.len(), dim);
    for (i, &l) in labels.iter().enumerate() {
        t.set(i, l, 1.0);
    }
    t
}

/// Random tree skeleton with a few ring closures; returns (labels, edges).
fn skeleton(
    rng: &mut ChaCha8Rng,
    n_core: usize,
    atom_dim: usize,
    hetero_rate: f64,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut labels = Vec::with_capacity(n_core);
    let mut edges = Vec::new();
    for v in 0..n_core {
        let label = if v > 0 && rng.random::<f64>() < hetero_rate {
            3 + rng.random_range(0..atom_dim - 3)
        } else {
            CARBON
        };
        labels.push(label);
        if v > 0 {
            let parent = rng.random_range(0..v);
            edges.push((parent, v));
        }
    }
    // one or two ring closures
    for _ in 0..rng.random_range(1..3usize) {
        let a = rng.random_range(0..n_core);
        let b = rng.random_range(0..n_core);
        if a != b && !edges.contains(&(a.min(b), a.max(b))) {
            edges.push((a.min(b), a.max(b)));
        }
    }
    (labels, edges)
}

/// Mutagenicity-style corpus: positive graphs carry a nitro-like group (a
/// nitrogen bonded to two oxygens), negatives carry decoys (lone nitrogen,
/// or oxygen elsewhere) so atom presence alone is not decisive.
pub fn mutag_like(n_graphs: usize, seed: u64) -> Result<LabeledDataset> {
    let atom_dim = 7;
    let mut rng = rng_from(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for gi in 0..n_graphs {
        let n_core = rng.random_range(16..28usize);
        let (mut labels, mut edges) = skeleton(&mut rng, n_core, atom_dim, 0.04);
        let label = gi % 2;
        if label == 1 {
            // nitro-like: N on a random core atom, two O on the N
            let host = rng.random_range(0..n_core);
            let n = labels.len();
            labels.extend_from_slice(&[NITROGEN, OXYGEN, OXYGEN]);
            edges.extend_from_slice(&[(host, n), (n, n + 1), (n, n + 2)]);
        } else {
            // decoys keep the atom vocabulary overlapping across classes
            match rng.random_range(0..3usize) {
                0 => {
                    let host = rng.random_range(0..n_core);
                    let n = labels.len();
                    labels.push(NITROGEN);
                    edges.push((host, n));
                }
                1 => {
                    let host = rng.random_range(0..n_core);
                    let n = labels.len();
                    labels.extend_from_slice(&[NITROGEN, OXYGEN]);
                    edges.extend_from_slice(&[(host, n), (n, n + 1)]);
                }
                _ => {
                    let host = rng.random_range(0..n_core);
                    let n = labels.len();
                    labels.push(OXYGEN);
                    edges.push((host, n));
                }
            }
        }
        let n = labels.len();
        graphs.push(Graph::new(
            n,
            edges,
            one_hot(&labels, atom_dim),
            None,
            Some(label),
        )?);
    }
    LabeledDataset::new(graphs, TaskKind::GraphClassification, 2, None)
}

/// Screening-style corpus with a larger atom vocabulary: the class is
/// decided by local bonding structure (a type-1 atom with two type-2
/// neighbors) rather than atom presence; both classes share identical
/// motif atom histograms.
pub fn nci1_like(n_graphs: usize, seed: u64) -> Result<LabeledDataset> {
    let atom_dim = 37;
    let mut rng = rng_from(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for gi in 0..n_graphs {
        let n_core = rng.random_range(18..30usize);
        let (mut labels, mut edges) = skeleton(&mut rng, n_core, atom_dim, 0.10);
        let label = gi % 2;
        let host = rng.random_range(0..n_core);
        let n = labels.len();
        labels.extend_from_slice(&[1, 2, 2]);
        if label == 1 {
            // branched: host - 1, with both 2s on the 1
            edges.extend_from_slice(&[(host, n), (n, n + 1), (n, n + 2)]);
        } else {
            // chain: host - 1 - 2 - 2, same atom histogram
            edges.extend_from_slice(&[(host, n), (n, n + 1), (n + 1, n + 2)]);
        }
        let total = labels.len();
        graphs.push(Graph::new(
            total,
            edges,
            one_hot(&labels, atom_dim),
            None,
            Some(label),
        )?);
    }
    LabeledDataset::new(graphs, TaskKind::GraphClassification, 2, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::tu::{load_tu_dataset, save_tu_dataset};

    #[test]
    fn corpus_shape_and_balance() {
        let ds = mutag_like(200, 3).unwrap();
        assert_eq!(ds.graphs.len(), 200);
        let pos = ds
            .graphs
            .iter()
            .filter(|g| g.graph_label == Some(1))
            .count();
        assert_eq!(pos, 100);
        let mean_nodes: f64 = ds.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / 200.0;
        assert!(mean_nodes > 15.0 && mean_nodes < 35.0);
    }

    #[test]
    fn survives_tu_roundtrip() {
        let ds = nci1_like(30, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_tu_dataset(&ds, dir.path(), "surr").unwrap();
        let back = load_tu_dataset(dir.path(), "surr").unwrap();
        assert_eq!(back.graphs.len(), 30);
        for (a, b) in ds.graphs.iter().zip(&back.graphs) {
            assert_eq!(a.edges(), b.edges());
            assert_eq!(a.graph_label, b.graph_label);
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let a = mutag_like(20, 9).unwrap();
        let b = mutag_like(20, 9).unwrap();
        for (x, y) in a.graphs.iter().zip(&b.graphs) {
            assert_eq!(x.edges(), y.edges());
        }
    }
}
