//! Pipeline stages behind the CLI: each stage reads and writes only the
//! versioned artifact files, records itself in the run manifest, and can be
//! rerun in isolation.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DatasetSpec, RunConfig};
use crate::datasets::synthetic::{
    gen_ba_shapes_with, gen_tree_cycles_with, BaShapesParams, TreeCyclesParams,
};
use crate::datasets::tu::load_tu_dataset;
use crate::datasets::{make_split, LabeledDataset, SplitSpec};
use crate::distill::{
    distill_instances, load_distilled, save_distilled, DistillOptions, DistilledExplanation,
};
use crate::error::{GemError, Result};
use crate::evaluation::{
    evaluate_instance, motif_recovery, write_accuracy_csv, write_log_odds_csv, write_timing_csv,
    AccuracyRow, EvalRecord,
};
use crate::explainer::{
    explain, save_explanations, train_explainer, ExplainerModel, ExplainerTrainConfig,
};
use crate::gnn::{train_gnn, GnnModel, GnnTrainConfig};
use crate::numerics::Checkpoint;
use crate::rng::stage_seed;

pub const MANIFEST_FORMAT: &str = "gem-manifest-v1";

pub const DATASET_FILE: &str = "dataset.json";
pub const SPLIT_FILE: &str = "split.json";
pub const GNN_FILE: &str = "gnn.json";
pub const DISTILL_FILE: &str = "distill.jsonl";
pub const EXPLAINER_FILE: &str = "explainer.json";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const ACCURACY_CSV: &str = "accuracy_by_k.csv";
pub const LOG_ODDS_CSV: &str = "log_odds.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let out = Sha256::digest(&bytes);
    Ok(out.iter().map(|b| format!("{b:02x}")).collect())
}

fn sha256_str(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let out = Sha256::digest(text.as_bytes());
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StageEntry {
    pub seconds: f64,
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub metrics: serde_json::Value,
}

/// Run provenance: the resolved config, its hash, and per-stage timings and
/// artifact checksums.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    fn for_config(cfg: &RunConfig) -> Manifest {
        let config = cfg.to_value();
        let config_sha256 = sha256_str(&config.to_string());
        Manifest {
            format: MANIFEST_FORMAT.to_string(),
            config,
            config_sha256,
            seed: cfg.seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Recompute checksums of every recorded artifact; an upstream artifact
    /// mutated by a later stage shows up as a mismatch.
    pub fn verify_artifacts(&self, out_dir: &Path) -> Result<Vec<String>> {
        let mut mismatches = Vec::new();
        for (stage, entry) in &self.stages {
            for (file, expected) in &entry.artifacts {
                let actual = sha256_file(&out_dir.join(file))?;
                if &actual != expected {
                    mismatches.push(format!("{stage}:{file}"));
                }
            }
        }
        Ok(mismatches)
    }
}

/// Orchestrates the stages for one config.
pub struct Pipeline {
    pub cfg: RunConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out)?;
        Ok(Pipeline { cfg, out })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn record_stage(
        &self,
        name: &str,
        seconds: f64,
        artifacts: &[&str],
        metrics: serde_json::Value,
    ) -> Result<()> {
        let manifest_path = self.path(MANIFEST_FILE);
        let mut manifest = if manifest_path.is_file() {
            Manifest::load(&manifest_path)?
        } else {
            Manifest::for_config(&self.cfg)
        };
        let mut entry = StageEntry {
            seconds,
            artifacts: BTreeMap::new(),
            metrics,
        };
        for file in artifacts {
            entry
                .artifacts
                .insert(file.to_string(), sha256_file(&self.path(file))?);
        }
        manifest.stages.insert(name.to_string(), entry);
        manifest.save(&manifest_path)
    }

    fn load_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::load_json(&self.path(DATASET_FILE)).map_err(|_| {
            GemError::MissingArtifact(format!(
                "{} not found in {} — run `gem gen-data` first",
                DATASET_FILE,
                self.out.display()
            ))
        })
    }

    fn load_split(&self) -> Result<SplitSpec> {
        SplitSpec::load_json(&self.path(SPLIT_FILE)).map_err(|_| {
            GemError::MissingArtifact(format!(
                "{} not found in {} — run `gem gen-data` first",
                SPLIT_FILE,
                self.out.display()
            ))
        })
    }

    fn load_gnn(&self) -> Result<GnnModel> {
        let ckpt = Checkpoint::load(&self.path(GNN_FILE)).map_err(|_| {
            GemError::MissingArtifact(format!(
                "{} not found in {} — run `gem train-gnn` first",
                GNN_FILE,
                self.out.display()
            ))
        })?;
        GnnModel::from_checkpoint(&ckpt)
    }

    fn load_distilled_records(&self) -> Result<Vec<DistilledExplanation>> {
        load_distilled(&self.path(DISTILL_FILE)).map_err(|_| {
            GemError::MissingArtifact(format!(
                "{} not found in {} — run `gem distill` first",
                DISTILL_FILE,
                self.out.display()
            ))
        })
    }

    fn load_explainer(&self) -> Result<ExplainerModel> {
        let ckpt = Checkpoint::load(&self.path(EXPLAINER_FILE)).map_err(|_| {
            GemError::MissingArtifact(format!(
                "{} not found in {} — run `gem train-explainer` first",
                EXPLAINER_FILE,
                self.out.display()
            ))
        })?;
        ExplainerModel::from_checkpoint(&ckpt)
    }

    /// Materialize the dataset and the split.
    pub fn gen_data(&self) -> Result<()> {
        let t0 = Instant::now();
        let seed = stage_seed(self.cfg.seed, "gen-data");
        let p = &self.cfg.dataset_params;
        let dataset = match self.cfg.dataset_spec()? {
            DatasetSpec::BaShapes => {
                let mut params = BaShapesParams::default();
                if let Some(v) = p.ba_base_nodes {
                    params.base_nodes = v;
                }
                if let Some(v) = p.ba_attach_m {
                    params.attach_m = v;
                }
                if let Some(v) = p.ba_houses {
                    params.houses = v;
                }
                if let Some(v) = p.noise_edges {
                    params.noise_edges = v;
                }
                gen_ba_shapes_with(params, seed)?
            }
            DatasetSpec::TreeCycles => {
                let mut params = TreeCyclesParams::default();
                if let Some(v) = p.tree_levels {
                    params.tree_levels = v;
                }
                if let Some(v) = p.tree_motifs {
                    params.motifs = v;
                }
                if let Some(v) = p.noise_edges {
                    params.noise_edges = v;
                }
                gen_tree_cycles_with(params, seed)?
            }
            DatasetSpec::Tu { name, dir } => load_tu_dataset(&dir, &name)?,
        };
        let split = make_split(
            &dataset,
            (self.cfg.split.train, self.cfg.split.val, self.cfg.split.test),
            stage_seed(self.cfg.seed, "split"),
        )?;
        dataset.save_json(&self.path(DATASET_FILE))?;
        split.save_json(&self.path(SPLIT_FILE))?;
        let metrics = json!({
            "graphs": dataset.graphs.len(),
            "instances": dataset.instances().len(),
            "num_classes": dataset.num_classes,
        });
        log::info!(
            "gen-data: {} graphs, {} instances",
            dataset.graphs.len(),
            dataset.instances().len()
        );
        self.record_stage(
            "gen-data",
            t0.elapsed().as_secs_f64(),
            &[DATASET_FILE, SPLIT_FILE],
            metrics,
        )
    }

    /// Train the target classifier.
    pub fn train_gnn(&self) -> Result<()> {
        let t0 = Instant::now();
        let dataset = self.load_dataset()?;
        let split = self.load_split()?;
        let seed = stage_seed(self.cfg.seed, "train-gnn");
        let mut config = GnnTrainConfig::defaults_for(dataset.task, seed);
        let g = &self.cfg.gnn;
        if let Some(v) = g.epochs {
            config.epochs = v;
        }
        if let Some(v) = g.lr {
            config.lr = v;
        }
        if let Some(v) = g.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = g.plateau_patience {
            config.plateau_patience = v;
        }
        if let Some(v) = g.lr_decay {
            config.lr_decay = v;
        }
        if let Some(v) = g.edge_dropout {
            config.edge_dropout = v;
        }
        let (model, report) = train_gnn(&dataset, &split, &config)?;
        log::info!(
            "train-gnn: train {:.3} val {:.3} test {:.3} (best epoch {})",
            report.train_acc,
            report.val_acc,
            report.test_acc,
            report.best_epoch
        );
        model
            .to_checkpoint(seed, report.to_meta())
            .save(&self.path(GNN_FILE))?;
        self.record_stage(
            "train-gnn",
            t0.elapsed().as_secs_f64(),
            &[GNN_FILE],
            report.to_meta(),
        )
    }

    /// Distill ground-truth explanations for the training and validation
    /// splits.
    pub fn distill(&self) -> Result<()> {
        let t0 = Instant::now();
        let dataset = self.load_dataset()?;
        let split = self.load_split()?;
        let model = self.load_gnn()?;
        let opts = DistillOptions {
            k: self.cfg.distill.k,
            connectivity: self.cfg.distill.connectivity,
            anchor: None,
            literal_sign: self.cfg.distill.literal_sign,
        };
        let train_ids = cap(&split.train_ids, self.cfg.distill.max_instances);
        let val_ids = cap(&split.val_ids, self.cfg.distill.max_val_instances);
        let mut records =
            distill_instances(&model, &dataset, &train_ids, self.cfg.l_hops, &opts)?;
        records.extend(distill_instances(
            &model,
            &dataset,
            &val_ids,
            self.cfg.l_hops,
            &opts,
        )?);
        save_distilled(&self.path(DISTILL_FILE), &records)?;
        let accuracy =
            crate::distill::distillation_accuracy(&model, &records, &dataset, self.cfg.l_hops)?;
        let mut metrics = serde_json::Map::new();
        metrics.insert("train_instances".into(), json!(train_ids.len()));
        metrics.insert("val_instances".into(), json!(val_ids.len()));
        metrics.insert("k".into(), json!(self.cfg.distill.k));
        metrics.insert("distillation_accuracy".into(), json!(accuracy));
        if dataset.motif_edges.is_some() {
            let (mut hit, mut kept_total, mut motif_total) = (0usize, 0usize, 0usize);
            for rec in &records {
                let cg = dataset.computation_graph(rec.origin, self.cfg.l_hops)?;
                if let Some(m) = dataset.motif_of_node(rec.origin) {
                    let motif: std::collections::BTreeSet<(usize, usize)> = dataset
                        .motif_edges
                        .as_ref()
                        .unwrap()[m]
                        .iter()
                        .map(|&(a, b)| (a.min(b), a.max(b)))
                        .collect();
                    for (i, j) in rec.kept_edge_list() {
                        let (ga, gb) = (cg.nodes[i], cg.nodes[j]);
                        if motif.contains(&(ga.min(gb), ga.max(gb))) {
                            hit += 1;
                        }
                        kept_total += 1;
                    }
                    motif_total += motif.len();
                }
            }
            metrics.insert(
                "kept_motif_precision".into(),
                json!(hit as f64 / kept_total.max(1) as f64),
            );
            metrics.insert(
                "kept_motif_recall".into(),
                json!(hit as f64 / motif_total.max(1) as f64),
            );
        }
        let metrics = serde_json::Value::Object(metrics);
        log::info!(
            "distill: {} train + {} val instances at K={}, subgraph accuracy {:.3}",
            train_ids.len(),
            val_ids.len(),
            self.cfg.distill.k,
            accuracy
        );
        self.record_stage(
            "distill",
            t0.elapsed().as_secs_f64(),
            &[DISTILL_FILE],
            metrics,
        )
    }

    /// Train the explainer on distilled ground truth.
    pub fn train_explainer(&self) -> Result<()> {
        let t0 = Instant::now();
        let dataset = self.load_dataset()?;
        let split = self.load_split()?;
        let records = self.load_distilled_records()?;
        let in_val: std::collections::BTreeSet<usize> = split.val_ids.iter().copied().collect();
        let (val, train): (Vec<_>, Vec<_>) =
            records.into_iter().partition(|r| in_val.contains(&r.origin));
        let seed = stage_seed(self.cfg.seed, "train-explainer");
        let e = &self.cfg.explainer;
        let config = ExplainerTrainConfig {
            lr: e.lr,
            epochs: e.epochs,
            batch_size: e.batch_size,
            wl_iterations: e.wl_iterations,
            role_vocab: e.role_vocab,
            concat_features: e.concat_features,
            seed,
        };
        let (model, report) = train_explainer(&dataset, &train, &val, self.cfg.l_hops, &config)?;
        log::info!(
            "train-explainer: val mse {:.5} -> {:.5} (best epoch {})",
            report.initial_val_mse,
            report.best_val_mse,
            report.best_epoch
        );
        model
            .to_checkpoint(seed, report.to_meta())
            .save(&self.path(EXPLAINER_FILE))?;
        self.record_stage(
            "train-explainer",
            t0.elapsed().as_secs_f64(),
            &[EXPLAINER_FILE],
            report.to_meta(),
        )
    }

    /// Generate explanations for the test split at the configured K.
    pub fn explain(&self) -> Result<()> {
        let t0 = Instant::now();
        let dataset = self.load_dataset()?;
        let split = self.load_split()?;
        let model = self.load_explainer()?;
        let k = self.cfg.explain_k();
        let connectivity = self.cfg.distill.connectivity;
        let results = split
            .test_ids
            .par_iter()
            .map(|&id| {
                let cg = dataset.computation_graph(id, self.cfg.l_hops)?;
                explain(&model, &cg, k, connectivity)
            })
            .collect::<Result<Vec<_>>>()?;
        save_explanations(&self.path(EXPLANATIONS_FILE), &results)?;
        log::info!("explain: {} instances at K={k}", results.len());
        self.record_stage(
            "explain",
            t0.elapsed().as_secs_f64(),
            &[EXPLANATIONS_FILE],
            json!({"instances": results.len(), "k": k}),
        )
    }

    /// Score explanations across the K grid and emit the CSV outputs.
    pub fn evaluate(&self) -> Result<()> {
        let t0 = Instant::now();
        let dataset = self.load_dataset()?;
        let split = self.load_split()?;
        let gnn = self.load_gnn()?;
        let explainer = self.load_explainer()?;
        let connectivity = self.cfg.distill.connectivity;
        let short = self.cfg.dataset_spec()?.short_name();

        let mut accuracy_rows = Vec::new();
        let mut metrics = serde_json::Map::new();
        for &k in &self.cfg.eval.k_grid {
            let correct: usize = split
                .test_ids
                .par_iter()
                .map(|&id| {
                    let cg = dataset.computation_graph(id, self.cfg.l_hops)?;
                    let res = explain(&explainer, &cg, k, connectivity)?;
                    let p = crate::gnn::predict(&gnn, &res.subgraph)?;
                    Ok((p.predicted_class == dataset.instance_label(id)?) as usize)
                })
                .collect::<Result<Vec<usize>>>()?
                .into_iter()
                .sum();
            let accuracy = correct as f64 / split.test_ids.len().max(1) as f64;
            metrics.insert(format!("accuracy_k{k}"), json!(accuracy));
            accuracy_rows.push(AccuracyRow {
                dataset: short.clone(),
                method: "gem".to_string(),
                k,
                accuracy,
            });
        }
        write_accuracy_csv(&self.path(ACCURACY_CSV), &accuracy_rows)?;

        // log-odds and timing pass at one K
        let k = self.cfg.log_odds_k();
        let records: Vec<EvalRecord> = split
            .test_ids
            .par_iter()
            .map(|&id| {
                let cg = dataset.computation_graph(id, self.cfg.l_hops)?;
                let timer = Instant::now();
                let res = explain(&explainer, &cg, k, connectivity)?;
                let ms = timer.elapsed().as_secs_f64() * 1000.0;
                evaluate_instance(&gnn, &cg, &res, dataset.instance_label(id)?, ms)
            })
            .collect::<Result<Vec<_>>>()?;
        write_log_odds_csv(&self.path(LOG_ODDS_CSV), &records)?;
        write_timing_csv(&self.path(TIMING_CSV), &records)?;
        let deltas: Vec<f64> = records.iter().map(|r| r.delta_log_odds.abs()).collect();
        metrics.insert(
            "median_abs_log_odds".into(),
            json!(crate::evaluation::median(&deltas)),
        );

        // motif recovery on synthetics
        if dataset.motif_edges.is_some() {
            let mk = self.cfg.eval.motif_k;
            let pairs: Vec<(crate::explainer::ExplanationResult, Vec<(usize, usize)>)> = split
                .test_ids
                .par_iter()
                .map(|&id| {
                    let cg = dataset.computation_graph(id, self.cfg.l_hops)?;
                    let res = explain(&explainer, &cg, mk, connectivity)?;
                    let motif = dataset
                        .motif_of_node(id)
                        .and_then(|m| dataset.motif_edges.as_ref().map(|e| e[m].clone()))
                        .ok_or_else(|| {
                            GemError::InvalidInput(format!("instance {id} has no motif"))
                        })?;
                    Ok((res, motif))
                })
                .collect::<Result<Vec<_>>>()?;
            let (results, motifs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let recovery = motif_recovery(&results, &motifs)?;
            metrics.insert("motif_k".into(), json!(mk));
            metrics.insert("motif_mean_precision".into(), json!(recovery.mean_precision));
            metrics.insert("motif_mean_recall".into(), json!(recovery.mean_recall));
            log::info!(
                "evaluate: motif recovery at K={mk}: precision {:.3} recall {:.3}",
                recovery.mean_precision,
                recovery.mean_recall
            );
        }

        log::info!("evaluate: wrote {ACCURACY_CSV}, {LOG_ODDS_CSV}, {TIMING_CSV}");
        self.record_stage(
            "evaluate",
            t0.elapsed().as_secs_f64(),
            &[ACCURACY_CSV, LOG_ODDS_CSV, TIMING_CSV],
            serde_json::Value::Object(metrics),
        )
    }

    /// Chain every stage.
    pub fn run_all(&self) -> Result<()> {
        self.gen_data()?;
        self.train_gnn()?;
        self.distill()?;
        self.train_explainer()?;
        self.explain()?;
        self.evaluate()?;
        Ok(())
    }
}

fn cap(ids: &[usize], limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(l) => ids.iter().copied().take(l).collect(),
        None => ids.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> RunConfig {
        RunConfig::from_value(json!({
            "dataset": "ba_shapes",
            "seed": 3,
            "split": {"train": 40, "val": 10, "test": 10},
            "dataset_params": {"ba_base_nodes": 40, "ba_houses": 12},
            "gnn": {"epochs": 30},
            "distill": {"k": 6, "connectivity": true, "max_instances": 8, "max_val_instances": 4},
            "explainer": {"epochs": 5},
            "eval": {"k_grid": [4, 6]},
            "output_dir": out.to_string_lossy(),
        }))
        .unwrap()
    }

    #[test]
    fn stages_require_upstream_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let p = Pipeline::new(cfg).unwrap();
        let err = p.train_gnn().unwrap_err();
        assert!(err.to_string().contains("gem gen-data"));
        let err = p.distill().unwrap_err();
        assert!(err.to_string().contains("gem gen-data"));
        p.gen_data().unwrap();
        let err = p.distill().unwrap_err();
        assert!(err.to_string().contains("gem train-gnn"));
        let err = p.train_explainer().unwrap_err();
        assert!(err.to_string().contains("gem distill"));
        let err = p.evaluate().unwrap_err();
        assert!(err.to_string().contains("gem train-gnn"));
    }

    #[test]
    fn run_all_produces_all_artifacts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let p = Pipeline::new(cfg).unwrap();
        p.run_all().unwrap();
        for f in [
            DATASET_FILE,
            SPLIT_FILE,
            GNN_FILE,
            DISTILL_FILE,
            EXPLAINER_FILE,
            EXPLANATIONS_FILE,
            ACCURACY_CSV,
            LOG_ODDS_CSV,
            TIMING_CSV,
            MANIFEST_FILE,
        ] {
            assert!(dir.path().join(f).is_file(), "{f} missing");
        }
        let manifest = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.format, MANIFEST_FORMAT);
        assert_eq!(manifest.stages.len(), 6);
        // no stage mutated an upstream artifact
        assert!(manifest.verify_artifacts(dir.path()).unwrap().is_empty());
        // accuracy CSV has one row per grid K
        let text = std::fs::read_to_string(dir.path().join(ACCURACY_CSV)).unwrap();
        assert_eq!(text.lines().count(), 1 + 2);
    }
}
