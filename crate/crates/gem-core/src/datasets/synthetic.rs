//! Synthetic node-classification benchmarks with planted ground-truth
//! motifs: a Barabási–Albert base studded with five-node "house" motifs,
//! and a balanced binary tree studded with six-node cycles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GemError, Result};
use crate::graph::Graph;
use crate::numerics::tensor::Tensor2;
use crate::rng::rng_from;

use super::{LabeledDataset, TaskKind};

/// Node class indices used by the house benchmark.
pub const CLASS_NONE: usize = 0;
pub const CLASS_TOP: usize = 1;
pub const CLASS_MIDDLE: usize = 2;
pub const CLASS_BOTTOM: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct BaShapesParams {
    pub base_nodes: usize,
    pub attach_m: usize,
    pub houses: usize,
    pub noise_edges: usize,
}

impl Default for BaShapesParams {
    fn default() -> Self {
        BaShapesParams {
            base_nodes: 300,
            attach_m: 5,
            houses: 80,
            noise_edges: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeCyclesParams {
    pub tree_levels: u32,
    pub motifs: usize,
    pub noise_edges: usize,
    /// Node total the published benchmark reports; a differing realized
    /// total is logged, never asserted.
    pub reference_node_count: Option<usize>,
}

impl Default for TreeCyclesParams {
    fn default() -> Self {
        TreeCyclesParams {
            tree_levels: 8,
            motifs: 80,
            noise_edges: 0,
            reference_node_count: Some(871),
        }
    }
}

/// Barabási–Albert growth: an `m`-clique start, then each new node attaches
/// to `m` existing nodes sampled proportionally to degree, without
/// replacement.
pub fn gen_ba_graph(n: usize, m: usize, seed: u64) -> Result<Graph> {
    let mut rng = rng_from(seed);
    let edges = ba_edges(n, m, &mut rng)?;
    Graph::new(n, edges, ones_features(n), None, None)
}

fn ones_features(n: usize) -> Tensor2 {
    Tensor2 {
        rows: n,
        cols: 1,
        data: vec![1.0; n],
    }
}

fn ba_edges(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if m < 1 || n <= m {
        return Err(GemError::InvalidInput(format!(
            "preferential attachment needs n > m >= 1 (got n = {n}, m = {m})"
        )));
    }
    let mut edges = Vec::with_capacity(m * (n - m) + m * (m - 1) / 2);
    let mut degree = vec![0usize; n];
    for i in 0..m {
        for j in (i + 1)..m {
            edges.push((i, j));
            degree[i] += 1;
            degree[j] += 1;
        }
    }
    for new in m..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        for _ in 0..m {
            let total: usize = (0..new)
                .filter(|v| !chosen.contains(v))
                .map(|v| degree[v])
                .sum();
            let pick = if total == 0 {
                // degenerate (all-zero degrees): uniform over the candidates
                let candidates: Vec<usize> = (0..new).filter(|v| !chosen.contains(v)).collect();
                candidates[rng.random_range(0..candidates.len())]
            } else {
                let mut r = rng.random::<f64>() * total as f64;
                let mut pick = usize::MAX;
                for v in 0..new {
                    if chosen.contains(&v) {
                        continue;
                    }
                    r -= degree[v] as f64;
                    if r < 0.0 {
                        pick = v;
                        break;
                    }
                }
                if pick == usize::MAX {
                    // numeric edge of the last interval
                    (0..new).rev().find(|v| !chosen.contains(v)).unwrap()
                } else {
                    pick
                }
            };
            chosen.push(pick);
            edges.push((pick, new));
            degree[pick] += 1;
            degree[new] += 1;
        }
    }
    Ok(edges)
}

fn add_noise_edges(
    edges: &mut Vec<(usize, usize)>,
    n: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) {
    use std::collections::HashSet;
    let mut present: HashSet<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let mut added = 0;
    let mut attempts = 0;
    while added < count && attempts < count * 1000 {
        attempts += 1;
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if present.insert(key) {
            edges.push(key);
            added += 1;
        }
    }
}

/// One 700-node graph: 300 preferential-attachment base nodes plus 80
/// five-node houses, each tethered to a random base node by a single edge.
/// Four structural classes; constant scalar features.
pub fn gen_ba_shapes(seed: u64) -> Result<LabeledDataset> {
    gen_ba_shapes_with(BaShapesParams::default(), seed)
}

pub fn gen_ba_shapes_with(params: BaShapesParams, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng_from(seed);
    let mut edges = ba_edges(params.base_nodes, params.attach_m, &mut rng)?;
    let total_nodes = params.base_nodes + 5 * params.houses;
    let mut labels = vec![CLASS_NONE; total_nodes];
    let mut motif_edges = Vec::with_capacity(params.houses);
    for h in 0..params.houses {
        let b = params.base_nodes + 5 * h;
        // two bottoms (b, b+1), two middles (b+2, b+3), one top (b+4)
        let house = [
            (b, b + 1),
            (b, b + 2),
            (b + 1, b + 3),
            (b + 2, b + 3),
            (b + 2, b + 4),
            (b + 3, b + 4),
        ];
        edges.extend_from_slice(&house);
        motif_edges.push(house.to_vec());
        labels[b] = CLASS_BOTTOM;
        labels[b + 1] = CLASS_BOTTOM;
        labels[b + 2] = CLASS_MIDDLE;
        labels[b + 3] = CLASS_MIDDLE;
        labels[b + 4] = CLASS_TOP;
        let anchor = rng.random_range(0..params.base_nodes);
        edges.push((anchor, b));
    }
    add_noise_edges(&mut edges, total_nodes, params.noise_edges, &mut rng);
    let graph = Graph::new(
        total_nodes,
        edges,
        ones_features(total_nodes),
        Some(labels),
        None,
    )?;
    log::info!(
        "house benchmark: {} nodes, {} edges, {} motifs",
        graph.num_nodes(),
        graph.num_edges(),
        params.houses
    );
    LabeledDataset::new(vec![graph], TaskKind::NodeClassification, 4, Some(motif_edges))
}

/// Balanced binary tree plus hexagon motifs, each tethered by one random
/// edge. Two classes: cycle member or not.
pub fn gen_tree_cycles(seed: u64) -> Result<LabeledDataset> {
    gen_tree_cycles_with(TreeCyclesParams::default(), seed)
}

pub fn gen_tree_cycles_with(params: TreeCyclesParams, seed: u64) -> Result<LabeledDataset> {
    if params.tree_levels == 0 {
        return Err(GemError::InvalidInput("tree needs at least one level".into()));
    }
    let mut rng = rng_from(seed);
    let tree_nodes = (1usize << params.tree_levels) - 1;
    let total_nodes = tree_nodes + 6 * params.motifs;
    let mut edges = Vec::new();
    for v in 0..tree_nodes {
        for child in [2 * v + 1, 2 * v + 2] {
            if child < tree_nodes {
                edges.push((v, child));
            }
        }
    }
    let mut labels = vec![0usize; total_nodes];
    let mut motif_edges = Vec::with_capacity(params.motifs);
    for k in 0..params.motifs {
        let o = tree_nodes + 6 * k;
        let hexagon: Vec<(usize, usize)> = (0..6).map(|i| (o + i, o + (i + 1) % 6)).collect();
        edges.extend_from_slice(&hexagon);
        motif_edges.push(hexagon);
        for i in 0..6 {
            labels[o + i] = 1;
        }
        let anchor = rng.random_range(0..tree_nodes);
        edges.push((anchor, o));
    }
    add_noise_edges(&mut edges, total_nodes, params.noise_edges, &mut rng);
    let graph = Graph::new(
        total_nodes,
        edges,
        ones_features(total_nodes),
        Some(labels),
        None,
    )?;
    log::info!(
        "tree-cycles benchmark: {} nodes ({} tree + {} cycle), {} edges",
        graph.num_nodes(),
        tree_nodes,
        6 * params.motifs,
        graph.num_edges()
    );
    if let Some(reference) = params.reference_node_count {
        if graph.num_nodes() != reference {
            log::warn!(
                "tree-cycles realized {} nodes; the published benchmark reports {}",
                graph.num_nodes(),
                reference
            );
        }
    }
    LabeledDataset::new(vec![graph], TaskKind::NodeClassification, 2, Some(motif_edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::class_histogram;

    #[test]
    fn ba_complete_when_n_is_m_plus_one() {
        let g = gen_ba_graph(4, 3, 0).unwrap();
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn ba_edge_count_formula() {
        for (n, m, seed) in [(50, 3, 1), (120, 5, 2), (30, 1, 3)] {
            let g = gen_ba_graph(n, m, seed).unwrap();
            assert_eq!(g.num_edges(), m * (n - m) + m * (m - 1) / 2);
        }
    }

    #[test]
    fn ba_rejects_bad_sizes() {
        assert!(gen_ba_graph(3, 3, 0).is_err());
        assert!(gen_ba_graph(5, 0, 0).is_err());
    }

    #[test]
    fn ba_degrees_are_heavy_tailed() {
        for seed in 0..10 {
            let g = gen_ba_graph(300, 5, seed).unwrap();
            let degrees: Vec<usize> = (0..300).map(|v| g.degree(v)).collect();
            let mean = degrees.iter().sum::<usize>() as f64 / 300.0;
            let max = *degrees.iter().max().unwrap() as f64;
            assert!(max > 2.0 * mean, "seed {seed}: max {max}, mean {mean}");
        }
    }

    #[test]
    fn house_benchmark_statistics() {
        let ds = gen_ba_shapes(7).unwrap();
        assert_eq!(ds.graphs[0].num_nodes(), 700);
        let hist = class_histogram(&ds);
        assert_eq!(hist[&CLASS_NONE], 300);
        assert_eq!(hist[&CLASS_TOP], 80);
        assert_eq!(hist[&CLASS_MIDDLE], 160);
        assert_eq!(hist[&CLASS_BOTTOM], 160);
        assert_eq!(ds.instances().len(), 400);
        // every recorded motif edge exists
        let motifs = ds.motif_edges.as_ref().unwrap();
        assert_eq!(motifs.len(), 80);
        for edges in motifs {
            assert_eq!(edges.len(), 6);
            for &(a, b) in edges {
                assert!(ds.graphs[0].has_edge(a, b));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_edge_list() {
        let a = gen_ba_shapes(11).unwrap();
        let b = gen_ba_shapes(11).unwrap();
        assert_eq!(a.graphs[0].edges(), b.graphs[0].edges());
        let c = gen_ba_shapes(12).unwrap();
        assert_ne!(a.graphs[0].edges(), c.graphs[0].edges());
    }

    #[test]
    fn tree_cycles_statistics() {
        let ds = gen_tree_cycles(5).unwrap();
        let g = &ds.graphs[0];
        let labels = g.node_labels.as_ref().unwrap();
        let cycle_nodes = labels.iter().filter(|&&l| l == 1).count();
        assert_eq!(cycle_nodes, 480);
        // every motif node sits on a cycle, so degree >= 2
        for (v, &l) in labels.iter().enumerate() {
            if l == 1 {
                assert!(g.degree(v) >= 2);
            }
        }
        assert_eq!(ds.instances().len(), 480);
    }
}
