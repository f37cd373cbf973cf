//! TU-format graph classification corpora: line-oriented text files with a
//! global edge list, per-node graph membership, per-graph labels and
//! per-node labels.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{GemError, Result};
use crate::graph::Graph;
use crate::numerics::tensor::Tensor2;

use super::{LabeledDataset, TaskKind};

fn read_lines(dir: &Path, file: &str) -> Result<Vec<String>> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path)
        .map_err(|_| GemError::Ingestion(format!("missing file {}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn parse_int(file: &str, line_no: usize, token: &str) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| GemError::Format {
        file: file.to_string(),
        line: line_no,
        msg: format!("expected integer, got {token:?}"),
    })
}

/// Parse `<name>_A.txt`, `<name>_graph_indicator.txt`,
/// `<name>_graph_labels.txt` and `<name>_node_labels.txt` from `dir`.
///
/// Edges are 1-indexed global node pairs (symmetric duplicates are
/// deduplicated); graph labels are remapped onto `0..k` in ascending label
/// order; node labels become one-hot feature vectors.
pub fn load_tu_dataset(dir: &Path, name: &str) -> Result<LabeledDataset> {
    let a_file = format!("{name}_A.txt");
    let gi_file = format!("{name}_graph_indicator.txt");
    let gl_file = format!("{name}_graph_labels.txt");
    let nl_file = format!("{name}_node_labels.txt");

    let indicator_lines = read_lines(dir, &gi_file)?;
    let mut node_graph = Vec::with_capacity(indicator_lines.len());
    for (ln, line) in indicator_lines.iter().enumerate() {
        let gid = parse_int(&gi_file, ln + 1, line)?;
        if gid < 1 {
            return Err(GemError::Format {
                file: gi_file.clone(),
                line: ln + 1,
                msg: format!("graph id {gid} < 1"),
            });
        }
        node_graph.push((gid - 1) as usize);
    }
    let total_nodes = node_graph.len();
    let num_graphs = node_graph.iter().max().map_or(0, |&g| g + 1);

    // local index of each global node within its graph
    let mut graph_sizes = vec![0usize; num_graphs];
    let mut local_index = Vec::with_capacity(total_nodes);
    for &g in &node_graph {
        local_index.push(graph_sizes[g]);
        graph_sizes[g] += 1;
    }

    let label_lines = read_lines(dir, &nl_file)?;
    if label_lines.len() != total_nodes {
        return Err(GemError::Format {
            file: nl_file.clone(),
            line: label_lines.len(),
            msg: format!(
                "{} node labels for {} nodes",
                label_lines.len(),
                total_nodes
            ),
        });
    }
    let mut node_labels = Vec::with_capacity(total_nodes);
    for (ln, line) in label_lines.iter().enumerate() {
        node_labels.push(parse_int(&nl_file, ln + 1, line)?);
    }
    let vocab: Vec<i64> = node_labels
        .iter()
        .copied()
        .collect::<BTreeSet<i64>>()
        .into_iter()
        .collect();
    let feature_dim = vocab.len();
    let feature_col = |label: i64| vocab.binary_search(&label).unwrap();

    let mut edges_per_graph: Vec<BTreeSet<(usize, usize)>> =
        vec![BTreeSet::new(); num_graphs];
    for (ln, line) in read_lines(dir, &a_file)?.iter().enumerate() {
        let mut parts = line.split(',');
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(GemError::Format {
                file: a_file.clone(),
                line: ln + 1,
                msg: "expected 'i, j'".into(),
            });
        };
        let a = parse_int(&a_file, ln + 1, a)?;
        let b = parse_int(&a_file, ln + 1, b)?;
        for v in [a, b] {
            if v < 1 || v as usize > total_nodes {
                return Err(GemError::Format {
                    file: a_file.clone(),
                    line: ln + 1,
                    msg: format!("dangling node index {v} (have {total_nodes} nodes)"),
                });
            }
        }
        let (a, b) = ((a - 1) as usize, (b - 1) as usize);
        if node_graph[a] != node_graph[b] {
            return Err(GemError::Format {
                file: a_file.clone(),
                line: ln + 1,
                msg: format!("edge joins graphs {} and {}", node_graph[a], node_graph[b]),
            });
        }
        if a == b {
            continue;
        }
        let (la, lb) = (local_index[a], local_index[b]);
        edges_per_graph[node_graph[a]].insert((la.min(lb), la.max(lb)));
    }

    let gl_lines = read_lines(dir, &gl_file)?;
    if gl_lines.len() != num_graphs {
        return Err(GemError::Format {
            file: gl_file.clone(),
            line: gl_lines.len(),
            msg: format!("{} graph labels for {} graphs", gl_lines.len(), num_graphs),
        });
    }
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for (ln, line) in gl_lines.iter().enumerate() {
        raw_labels.push(parse_int(&gl_file, ln + 1, line)?);
    }
    let class_vocab: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<i64>>()
        .into_iter()
        .collect();
    let num_classes = class_vocab.len();

    let mut node_rows: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (global, &g) in node_graph.iter().enumerate() {
        node_rows[g].push(global);
    }
    let graphs = (0..num_graphs)
        .map(|g| {
            let n = graph_sizes[g];
            let mut features = Tensor2::zeros(n, feature_dim);
            for &global in &node_rows[g] {
                features.set(local_index[global], feature_col(node_labels[global]), 1.0);
            }
            let label = class_vocab.binary_search(&raw_labels[g]).unwrap();
            Graph::new(
                n,
                edges_per_graph[g].iter().copied().collect(),
                features,
                None,
                Some(label),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    LabeledDataset::new(graphs, TaskKind::GraphClassification, num_classes, None)
}

/// Serialize a graph-classification dataset back to TU text files.
/// Each undirected edge is written in both directions; node labels are the
/// argmax of the one-hot feature rows.
pub fn save_tu_dataset(dataset: &LabeledDataset, dir: &Path, name: &str) -> Result<()> {
    if dataset.task != TaskKind::GraphClassification {
        return Err(GemError::InvalidInput(
            "TU format holds graph-classification corpora".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut a = String::new();
    let mut gi = String::new();
    let mut gl = String::new();
    let mut nl = String::new();
    let mut offset = 1usize; // TU files are 1-indexed
    for (gidx, g) in dataset.graphs.iter().enumerate() {
        for v in 0..g.num_nodes() {
            gi.push_str(&format!("{}\n", gidx + 1));
            let row = g.features().row(v);
            let label = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            nl.push_str(&format!("{label}\n"));
        }
        for &(x, y) in g.edges() {
            a.push_str(&format!("{}, {}\n", offset + x, offset + y));
            a.push_str(&format!("{}, {}\n", offset + y, offset + x));
        }
        gl.push_str(&format!("{}\n", g.graph_label.unwrap_or(0)));
        offset += g.num_nodes();
    }
    for (file, content) in [
        (format!("{name}_A.txt"), a),
        (format!("{name}_graph_indicator.txt"), gi),
        (format!("{name}_graph_labels.txt"), gl),
        (format!("{name}_node_labels.txt"), nl),
    ] {
        let mut f = fs::File::create(dir.join(file))?;
        f.write_all(content.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path) {
        // graph 1: triangle on nodes 1..3; graph 2: edge on nodes 4..5
        fs::write(
            dir.join("fix_A.txt"),
            "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n",
        )
        .unwrap();
        fs::write(dir.join("fix_graph_indicator.txt"), "1\n1\n1\n2\n2\n").unwrap();
        fs::write(dir.join("fix_graph_labels.txt"), "1\n-1\n").unwrap();
        fs::write(dir.join("fix_node_labels.txt"), "0\n1\n0\n2\n0\n").unwrap();
    }

    #[test]
    fn loads_hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let ds = load_tu_dataset(dir.path(), "fix").unwrap();
        assert_eq!(ds.graphs.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.graphs[0].num_nodes(), 3);
        assert_eq!(ds.graphs[0].num_edges(), 3);
        assert_eq!(ds.graphs[1].num_nodes(), 2);
        assert_eq!(ds.graphs[1].num_edges(), 1);
        // labels -1, 1 remap to 0, 1 in ascending order
        assert_eq!(ds.graphs[0].graph_label, Some(1));
        assert_eq!(ds.graphs[1].graph_label, Some(0));
        // one-hot features over the 3 distinct node labels
        assert_eq!(ds.graphs[0].feature_dim(), 3);
        assert_eq!(ds.graphs[0].features().row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::remove_file(dir.path().join("fix_node_labels.txt")).unwrap();
        let err = load_tu_dataset(dir.path(), "fix").unwrap_err();
        assert!(err.to_string().contains("fix_node_labels.txt"));
    }

    #[test]
    fn dangling_index_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("fix_A.txt"), "1, 2\n2, 9\n").unwrap();
        let err = load_tu_dataset(dir.path(), "fix").unwrap_err();
        match err {
            GemError::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn roundtrip_preserves_graphs() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let ds = load_tu_dataset(dir.path(), "fix").unwrap();
        let out = tempfile::tempdir().unwrap();
        save_tu_dataset(&ds, out.path(), "fix").unwrap();
        let reloaded = load_tu_dataset(out.path(), "fix").unwrap();
        assert_eq!(ds.graphs.len(), reloaded.graphs.len());
        for (a, b) in ds.graphs.iter().zip(&reloaded.graphs) {
            assert_eq!(a.num_nodes(), b.num_nodes());
            assert_eq!(a.edges(), b.edges());
            assert_eq!(a.graph_label, b.graph_label);
            assert_eq!(a.features().data, b.features().data);
        }
    }
}
