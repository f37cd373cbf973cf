//! Quantitative evaluation of explanations: prediction-preserving accuracy,
//! log-odds difference distributions, motif recovery on synthetics, timing
//! aggregation, and the CSV outputs downstream plotting consumes.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::distill::Edge;
use crate::error::{GemError, Result};
use crate::explainer::ExplanationResult;
use crate::gnn::{predict, GnnModel};
use crate::graph::ComputationGraph;

/// Probabilities are clamped into this interval before log-odds so
/// saturated softmax outputs cannot produce infinities.
pub const PROB_CLAMP: f64 = 1e-6;

/// One scored explanation instance.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub origin: usize,
    /// Probability of the reference class on the full computation graph.
    pub p_full: f64,
    /// Same probability on the explanation subgraph.
    pub p_sub: f64,
    /// Subgraph prediction equals the ground-truth label.
    pub correct: bool,
    /// Subgraph prediction equals the full-graph prediction.
    pub fidelity_match: bool,
    pub delta_log_odds: f64,
    pub k: usize,
    pub inference_ms: f64,
}

/// `ln(p / (1 - p))` after clamping away saturation.
pub fn log_odds(p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(GemError::Numeric(format!("log-odds of {p}")));
    }
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok((p / (1.0 - p)).ln())
}

/// Log-odds gap between the full computation graph and the explanation
/// subgraph, both scored on `reference_class`.
pub fn log_odds_difference(
    model: &GnnModel,
    cg: &ComputationGraph,
    result: &ExplanationResult,
    reference_class: usize,
) -> Result<f64> {
    if reference_class >= model.num_classes {
        return Err(GemError::InvalidInput(format!(
            "reference class {reference_class} out of range"
        )));
    }
    let p_full = predict(model, cg)?.probabilities[reference_class];
    let p_sub = predict(model, &result.subgraph)?.probabilities[reference_class];
    Ok(log_odds(p_full)? - log_odds(p_sub)?)
}

/// Score one explanation: the reference class is the class the model
/// predicts on the full computation graph (the outcome being explained).
pub fn evaluate_instance(
    model: &GnnModel,
    cg: &ComputationGraph,
    result: &ExplanationResult,
    label: usize,
    inference_ms: f64,
) -> Result<EvalRecord> {
    let full = predict(model, cg)?;
    let reference = full.predicted_class;
    let sub = predict(model, &result.subgraph)?;
    let p_full = full.probabilities[reference];
    let p_sub = sub.probabilities[reference];
    Ok(EvalRecord {
        origin: result.origin,
        p_full: p_full.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
        p_sub: p_sub.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
        correct: sub.predicted_class == label,
        fidelity_match: sub.predicted_class == reference,
        delta_log_odds: log_odds(p_full)? - log_odds(p_sub)?,
        k: result.k,
        inference_ms,
    })
}

/// Fraction of explanations whose subgraph keeps the ground-truth label.
pub fn explanation_accuracy(
    model: &GnnModel,
    results: &[ExplanationResult],
    labels: &[usize],
) -> Result<f64> {
    if results.is_empty() || results.len() != labels.len() {
        return Err(GemError::InvalidInput(
            "results and labels must be nonempty and aligned".into(),
        ));
    }
    let mut correct = 0usize;
    for (r, &y) in results.iter().zip(labels) {
        if predict(model, &r.subgraph)?.predicted_class == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / results.len() as f64)
}

/// Per-instance precision/recall of selected edges against ground-truth
/// motif edges, plus the means.
#[derive(Debug, Clone)]
pub struct MotifRecovery {
    pub per_instance: Vec<(f64, f64)>,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

/// Selected edges are translated from computation-graph local indices back
/// to original node indices, so `motif_edges` uses the source graph's ids.
pub fn motif_recovery(
    results: &[ExplanationResult],
    motif_edges: &[Vec<Edge>],
) -> Result<MotifRecovery> {
    if results.is_empty() || results.len() != motif_edges.len() {
        return Err(GemError::InvalidInput(
            "results and motif ground truth must be nonempty and aligned".into(),
        ));
    }
    let mut per_instance = Vec::with_capacity(results.len());
    for (r, motif) in results.iter().zip(motif_edges) {
        if motif.is_empty() {
            return Err(GemError::InvalidInput(format!(
                "instance {} has no motif ground truth",
                r.origin
            )));
        }
        let motif: std::collections::BTreeSet<Edge> = motif
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        let nodes = &r.subgraph.nodes;
        let selected: Vec<Edge> = r
            .edge_list()
            .into_iter()
            .map(|(a, b)| {
                let (ga, gb) = (nodes[a], nodes[b]);
                (ga.min(gb), ga.max(gb))
            })
            .collect();
        let hit = selected
            .iter()
            .filter(|&&e| motif.contains(&e))
            .count() as f64;
        let precision = if selected.is_empty() {
            0.0
        } else {
            hit / selected.len() as f64
        };
        let recall = hit / motif.len() as f64;
        per_instance.push((precision, recall));
    }
    let n = per_instance.len() as f64;
    Ok(MotifRecovery {
        mean_precision: per_instance.iter().map(|p| p.0).sum::<f64>() / n,
        mean_recall: per_instance.iter().map(|p| p.1).sum::<f64>() / n,
        per_instance,
    })
}

#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform-bin histogram over `[min, max]`; the last bin is right-closed.
/// All-equal inputs land in a single occupied bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(GemError::InvalidInput("histogram needs data and bins".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone)]
pub struct TimingSummary {
    pub mean_ms: f64,
    pub median_ms: f64,
}

pub fn timing_summary(records: &[EvalRecord]) -> Result<TimingSummary> {
    if records.is_empty() {
        return Err(GemError::InvalidInput("no timing records".into()));
    }
    let mut times: Vec<f64> = records.iter().map(|r| r.inference_ms).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    let mid = times.len() / 2;
    let median_ms = if times.len() % 2 == 0 {
        (times[mid - 1] + times[mid]) / 2.0
    } else {
        times[mid]
    };
    Ok(TimingSummary { mean_ms, median_ms })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// One row of `accuracy_by_k.csv`.
#[derive(Debug, Clone)]
pub struct AccuracyRow {
    pub dataset: String,
    pub method: String,
    pub k: usize,
    pub accuracy: f64,
}

pub fn write_accuracy_csv(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "dataset,method,K,accuracy")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.dataset, r.method, r.k, r.accuracy)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log_odds_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "origin,delta")?;
    for r in records {
        writeln!(w, "{},{}", r.origin, r.delta_log_odds)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "origin,ms")?;
    for r in records {
        writeln!(w, "{},{}", r.origin, r.inference_ms)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::TaskKind;
    use crate::graph::Graph;
    use crate::numerics::tensor::Tensor2;

    #[test]
    fn log_odds_analytic_values() {
        assert_eq!(log_odds(0.5).unwrap(), 0.0);
        let p = 0.73;
        assert!((log_odds(p).unwrap() + log_odds(1.0 - p).unwrap()).abs() < 1e-12);
        assert!((log_odds(0.82).unwrap() - 1.51634748).abs() < 1e-6);
        assert!(log_odds(f64::NAN).is_err());
    }

    #[test]
    fn identity_subgraph_has_zero_log_odds_difference() {
        let g = Graph::new(
            4,
            vec![(0, 1), (1, 2), (2, 3)],
            Tensor2::zeros(4, 2),
            None,
            None,
        )
        .unwrap();
        let cg = crate::graph::ComputationGraph::from_graph(&g, 0);
        let model = GnnModel::new_random(TaskKind::GraphClassification, 2, 2, 3);
        let result = ExplanationResult {
            origin: 0,
            selected_edges: cg.edges().into_iter().map(|e| (e, 1.0)).collect(),
            subgraph: cg.restricted_to_edges(&cg.edges()),
            k: 3,
        };
        let d = log_odds_difference(&model, &cg, &result, 0).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn closed_form_difference() {
        // p_full = 0.9, p_sub = 0.5 -> ln 9
        let d = log_odds(0.9).unwrap() - log_odds(0.5).unwrap();
        assert!((d - 9.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn motif_recovery_extremes() {
        let g = Graph::new(
            4,
            vec![(0, 1), (1, 2), (2, 3)],
            Tensor2::zeros(4, 1),
            None,
            None,
        )
        .unwrap();
        let cg = crate::graph::ComputationGraph::from_graph(&g, 0);
        let exact = ExplanationResult {
            origin: 0,
            selected_edges: vec![((0, 1), 1.0), ((1, 2), 0.9)],
            subgraph: cg.restricted_to_edges(&[(0, 1), (1, 2)]),
            k: 2,
        };
        let m = motif_recovery(&[exact.clone()], &[vec![(0, 1), (1, 2)]]).unwrap();
        assert_eq!(m.per_instance[0], (1.0, 1.0));
        let disjoint = motif_recovery(&[exact], &[vec![(2, 3)]]).unwrap();
        assert_eq!(disjoint.per_instance[0], (0.0, 0.0));
    }

    #[test]
    fn histogram_behavior() {
        let h = histogram(&[1.0, 1.0, 1.0], 5).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let h = histogram(&[0.0, 0.5, 1.0, 0.25], 4).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.edges.len(), 5);
    }

    #[test]
    fn timing_mean_median() {
        let mk = |ms: f64| EvalRecord {
            origin: 0,
            p_full: 0.5,
            p_sub: 0.5,
            correct: true,
            fidelity_match: true,
            delta_log_odds: 0.0,
            k: 1,
            inference_ms: ms,
        };
        let t = timing_summary(&[mk(1.0), mk(2.0), mk(3.0)]).unwrap();
        assert_eq!(t.mean_ms, 2.0);
        assert_eq!(t.median_ms, 2.0);
    }

    #[test]
    fn csv_headers_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let acc = dir.path().join("accuracy_by_k.csv");
        write_accuracy_csv(
            &acc,
            &[AccuracyRow {
                dataset: "x".into(),
                method: "gem".into(),
                k: 5,
                accuracy: 0.5,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&acc).unwrap();
        assert!(text.starts_with("dataset,method,K,accuracy\n"));
        assert!(text.contains("x,gem,5,0.5"));
    }
}
