//! Undirected attributed graphs, neighborhood extraction and connectivity
//! utilities shared by every other module.
//!
//! Graphs are unweighted and immutable; all edge weighting lives in masks
//! produced downstream. Adjacency is kept dense — the graphs here top out
//! around a thousand nodes.

use std::collections::VecDeque;

use crate::error::{GemError, Result};
use crate::numerics::tensor::Tensor2;

/// Undirected attributed graph. Edges stored once with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    node_features: Tensor2,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        mut edges: Vec<(usize, usize)>,
        node_features: Tensor2,
        node_labels: Option<Vec<usize>>,
        graph_label: Option<usize>,
    ) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(GemError::InvalidInput(format!("self-loop at node {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= num_nodes {
                return Err(GemError::InvalidInput(format!(
                    "edge ({}, {}) endpoint out of range (n = {num_nodes})",
                    e.0, e.1
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        if node_features.rows != num_nodes {
            return Err(GemError::Structural(format!(
                "feature rows {} != num_nodes {num_nodes}",
                node_features.rows
            )));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != num_nodes {
                return Err(GemError::Structural("node_labels length mismatch".into()));
            }
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Graph {
            num_nodes,
            edges,
            adj,
            node_features,
            node_labels,
            graph_label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn dense_adjacency(&self) -> Tensor2 {
        let mut m = Tensor2::zeros(self.num_nodes, self.num_nodes);
        for &(a, b) in &self.edges {
            m.set(a, b, 1.0);
            m.set(b, a, 1.0);
        }
        m
    }

    /// BFS distances from `start`; unreachable nodes get `usize::MAX`.
    pub fn bfs_distances(&self, start: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_nodes];
        dist[start] = 0;
        let mut q = VecDeque::from([start]);
        while let Some(v) = q.pop_front() {
            for &w in &self.adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
            }
        }
        dist
    }
}

/// The L-hop neighborhood (node task) or whole graph (graph task) a GNN
/// prediction is fully determined by.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    /// Original node indices, ascending.
    pub nodes: Vec<usize>,
    /// Local index of the explained node; present iff node task.
    pub target_local_index: Option<usize>,
    /// Binary symmetric adjacency with zero diagonal, local indexing.
    pub adjacency: Tensor2,
    pub features: Tensor2,
    /// Source graph index (graph task) or source node index (node task).
    pub origin: usize,
}

impl ComputationGraph {
    /// Whole-graph computation graph for graph-level tasks.
    pub fn from_graph(g: &Graph, origin: usize) -> Self {
        ComputationGraph {
            nodes: (0..g.num_nodes()).collect(),
            target_local_index: None,
            adjacency: g.dense_adjacency(),
            features: g.features().clone(),
            origin,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i, j) != 0.0
    }

    /// Local-index edge list, `i < j`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Sorted neighbor lists derived from the adjacency matrix.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let n = self.num_nodes();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency.get(i, j) != 0.0 {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    /// Copy with adjacency zeroed everywhere except `keep` (local-index
    /// unordered pairs). The node set is unchanged.
    pub fn restricted_to_edges(&self, keep: &[(usize, usize)]) -> ComputationGraph {
        let n = self.num_nodes();
        let mut adjacency = Tensor2::zeros(n, n);
        for &(i, j) in keep {
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }
        ComputationGraph {
            nodes: self.nodes.clone(),
            target_local_index: self.target_local_index,
            adjacency,
            features: self.features.clone(),
            origin: self.origin,
        }
    }
}

/// Induced subgraph on all nodes within BFS distance `l` of `node`.
pub fn l_hop_subgraph(graph: &Graph, node: usize, l: usize) -> Result<ComputationGraph> {
    if node >= graph.num_nodes() {
        return Err(GemError::InvalidInput(format!(
            "node {node} out of range (n = {})",
            graph.num_nodes()
        )));
    }
    if l == 0 {
        return Err(GemError::InvalidInput("hop count must be >= 1".into()));
    }
    let dist = graph.bfs_distances(node);
    let nodes: Vec<usize> = (0..graph.num_nodes()).filter(|&v| dist[v] <= l).collect();
    let local: std::collections::HashMap<usize, usize> =
        nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = nodes.len();
    let mut adjacency = Tensor2::zeros(n, n);
    for (li, &v) in nodes.iter().enumerate() {
        for &w in graph.neighbors(v) {
            if let Some(&lw) = local.get(&w) {
                adjacency.set(li, lw, 1.0);
                adjacency.set(lw, li, 1.0);
            }
        }
    }
    let mut features = Tensor2::zeros(n, graph.feature_dim());
    for (li, &v) in nodes.iter().enumerate() {
        features.row_mut(li).copy_from_slice(graph.features().row(v));
    }
    let target_local_index = Some(local[&node]);
    Ok(ComputationGraph {
        nodes,
        target_local_index,
        adjacency,
        features,
        origin: node,
    })
}

/// Kipf-style symmetric normalization with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}`.
pub fn normalized_adjacency(adjacency: &Tensor2) -> Result<Tensor2> {
    let n = adjacency.rows;
    if adjacency.cols != n {
        return Err(GemError::InvalidInput("adjacency must be square".into()));
    }
    for i in 0..n {
        if adjacency.get(i, i) != 0.0 {
            return Err(GemError::InvalidInput(format!("nonzero diagonal at {i}")));
        }
        for j in (i + 1)..n {
            let a = adjacency.get(i, j);
            if a != adjacency.get(j, i) {
                return Err(GemError::InvalidInput(format!(
                    "adjacency not symmetric at ({i}, {j})"
                )));
            }
            if a != 0.0 && a != 1.0 {
                return Err(GemError::InvalidInput(format!(
                    "adjacency not binary at ({i}, {j})"
                )));
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = (0..n).map(|j| adjacency.get(i, j)).sum::<f64>() + 1.0;
            1.0 / deg.sqrt()
        })
        .collect();
    let mut out = Tensor2::zeros(n, n);
    for i in 0..n {
        out.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
        for j in (i + 1)..n {
            if adjacency.get(i, j) != 0.0 {
                let w = inv_sqrt[i] * inv_sqrt[j];
                out.set(i, j, w);
                out.set(j, i, w);
            }
        }
    }
    Ok(out)
}

/// Copy of `cg` with both symmetric entries of `edge` zeroed.
pub fn remove_edge(cg: &ComputationGraph, edge: (usize, usize)) -> Result<ComputationGraph> {
    let (i, j) = edge;
    let n = cg.num_nodes();
    if i >= n || j >= n || !cg.has_edge(i, j) {
        return Err(GemError::InvalidInput(format!(
            "edge ({i}, {j}) not present in computation graph"
        )));
    }
    let mut out = cg.clone();
    out.adjacency.set(i, j, 0.0);
    out.adjacency.set(j, i, 0.0);
    Ok(out)
}

/// Maximal connected node sets under the current adjacency. Components are
/// sorted internally and ordered by their smallest member.
pub fn connected_components(cg: &ComputationGraph) -> Vec<Vec<usize>> {
    let n = cg.num_nodes();
    let adj = cg.neighbor_lists();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut q = VecDeque::from([start]);
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                    q.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Restrict adjacency to one component: the component containing `anchor`
/// when given, otherwise the largest one (ties broken by lowest contained
/// node index). Nodes are never dropped; edges outside the component are
/// zeroed.
pub fn largest_component_subgraph(
    cg: &ComputationGraph,
    anchor: Option<usize>,
) -> ComputationGraph {
    let comps = connected_components(cg);
    let chosen = match anchor {
        Some(a) => comps
            .iter()
            .find(|c| c.binary_search(&a).is_ok())
            .expect("anchor must be a node of the computation graph"),
        None => comps
            .iter()
            .max_by(|x, y| x.len().cmp(&y.len()).then(y[0].cmp(&x[0])))
            .expect("computation graph has at least one node"),
    };
    let member: Vec<bool> = {
        let mut m = vec![false; cg.num_nodes()];
        for &v in chosen {
            m[v] = true;
        }
        m
    };
    let keep: Vec<(usize, usize)> = cg
        .edges()
        .into_iter()
        .filter(|&(i, j)| member[i] && member[j])
        .collect();
    cg.restricted_to_edges(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(n, edges, Tensor2::zeros(n, 1), None, None).unwrap()
    }

    #[test]
    fn l_hop_isolated_node() {
        let g = Graph::new(3, vec![(1, 2)], Tensor2::zeros(3, 1), None, None).unwrap();
        let cg = l_hop_subgraph(&g, 0, 2).unwrap();
        assert_eq!(cg.nodes, vec![0]);
        assert_eq!(cg.num_edges(), 0);
        assert_eq!(cg.target_local_index, Some(0));
    }

    #[test]
    fn l_hop_on_path() {
        // a-b-c-d, node = a, L = 2 -> {a, b, c} with edges (a,b), (b,c)
        let g = path_graph(4);
        let cg = l_hop_subgraph(&g, 0, 2).unwrap();
        assert_eq!(cg.nodes, vec![0, 1, 2]);
        assert_eq!(cg.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn l_hop_rejects_bad_node() {
        let g = path_graph(3);
        assert!(l_hop_subgraph(&g, 9, 1).is_err());
    }

    #[test]
    fn normalized_adjacency_single_node() {
        let a = Tensor2::zeros(1, 1);
        let n = normalized_adjacency(&a).unwrap();
        assert_eq!(n.data, vec![1.0]);
    }

    #[test]
    fn normalized_adjacency_single_edge() {
        let a = Tensor2::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let n = normalized_adjacency(&a).unwrap();
        for v in n.data {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_adjacency_triangle() {
        let mut a = Tensor2::zeros(3, 3);
        for &(i, j) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        let n = normalized_adjacency(&a).unwrap();
        for v in n.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_adjacency_rejects_asymmetric() {
        let mut a = Tensor2::zeros(2, 2);
        a.set(0, 1, 1.0);
        assert!(normalized_adjacency(&a).is_err());
    }

    #[test]
    fn remove_edge_roundtrip() {
        let g = path_graph(3);
        let cg = ComputationGraph::from_graph(&g, 0);
        let removed = remove_edge(&cg, (0, 1)).unwrap();
        assert!(!removed.has_edge(0, 1));
        assert_eq!(removed.num_edges(), cg.num_edges() - 1);
        assert!(remove_edge(&removed, (0, 1)).is_err());
        let mut back = removed.clone();
        back.adjacency.set(0, 1, 1.0);
        back.adjacency.set(1, 0, 1.0);
        assert_eq!(back.adjacency, cg.adjacency);
    }

    #[test]
    fn components_of_empty_adjacency() {
        let g = Graph::new(3, vec![], Tensor2::zeros(3, 1), None, None).unwrap();
        let cg = ComputationGraph::from_graph(&g, 0);
        let comps = connected_components(&cg);
        assert_eq!(comps, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn components_of_path() {
        let g = path_graph(5);
        let cg = ComputationGraph::from_graph(&g, 0);
        assert_eq!(connected_components(&cg).len(), 1);
    }

    #[test]
    fn largest_component_prefers_size_then_anchor() {
        // components {0,1,2,3} (path) and {4,5}
        let g = Graph::new(
            6,
            vec![(0, 1), (1, 2), (2, 3), (4, 5)],
            Tensor2::zeros(6, 1),
            None,
            None,
        )
        .unwrap();
        let cg = ComputationGraph::from_graph(&g, 0);
        let big = largest_component_subgraph(&cg, None);
        assert_eq!(big.edges(), vec![(0, 1), (1, 2), (2, 3)]);
        let anchored = largest_component_subgraph(&cg, Some(5));
        assert_eq!(anchored.edges(), vec![(4, 5)]);
        let connected = largest_component_subgraph(&cg, Some(1));
        assert_eq!(connected.edges(), vec![(0, 1), (1, 2), (2, 3)]);
    }
}
