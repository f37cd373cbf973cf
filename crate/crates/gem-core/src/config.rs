//! Run configuration: one JSON file drives every pipeline stage. Unknown
//! keys are rejected so typos cannot silently corrupt an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    BaShapes,
    TreeCycles,
    Tu { name: String, dir: PathBuf },
}

impl DatasetSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ba_shapes" => Ok(DatasetSpec::BaShapes),
            "tree_cycles" => Ok(DatasetSpec::TreeCycles),
            other => {
                if let Some(rest) = other.strip_prefix("tu:") {
                    let (name, dir) = rest.split_once(':').ok_or_else(|| {
                        GemError::Config(format!(
                            "dataset {other:?} must be 'tu:<name>:<path>'"
                        ))
                    })?;
                    if name.is_empty() || dir.is_empty() {
                        return Err(GemError::Config(format!(
                            "dataset {other:?} must be 'tu:<name>:<path>'"
                        )));
                    }
                    Ok(DatasetSpec::Tu {
                        name: name.to_string(),
                        dir: PathBuf::from(dir),
                    })
                } else {
                    Err(GemError::Config(format!(
                        "unknown dataset {other:?} (expected ba_shapes, tree_cycles or tu:<name>:<path>)"
                    )))
                }
            }
        }
    }

    pub fn short_name(&self) -> String {
        match self {
            DatasetSpec::BaShapes => "ba_shapes".into(),
            DatasetSpec::TreeCycles => "tree_cycles".into(),
            DatasetSpec::Tu { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetParams {
    pub ba_base_nodes: Option<usize>,
    pub ba_attach_m: Option<usize>,
    pub ba_houses: Option<usize>,
    pub tree_levels: Option<u32>,
    pub tree_motifs: Option<usize>,
    pub noise_edges: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfigSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub plateau_patience: Option<usize>,
    pub lr_decay: Option<f64>,
    pub edge_dropout: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub k: usize,
    pub connectivity: bool,
    #[serde(default)]
    pub literal_sign: bool,
    /// Cap on distilled training instances (the published procedure also
    /// distills subsamples); `None` distills the whole training split.
    #[serde(default)]
    pub max_instances: Option<usize>,
    #[serde(default)]
    pub max_val_instances: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainerSection {
    pub lr: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub wl_iterations: usize,
    pub role_vocab: usize,
    pub concat_features: Option<bool>,
}

impl Default for ExplainerSection {
    fn default() -> Self {
        ExplainerSection {
            lr: None,
            epochs: 100,
            batch_size: 32,
            wl_iterations: 3,
            role_vocab: 16,
            concat_features: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k_grid: Vec<usize>,
    /// K used for the log-odds / timing pass; defaults to the grid minimum.
    #[serde(default)]
    pub log_odds_k: Option<usize>,
    /// K used for motif-recovery scoring on synthetics.
    #[serde(default = "default_motif_k")]
    pub motif_k: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_motif_k() -> usize {
    6
}

fn default_bins() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    pub seed: u64,
    pub split: SplitCounts,
    #[serde(default = "default_l_hops")]
    pub l_hops: usize,
    #[serde(default)]
    pub dataset_params: DatasetParams,
    #[serde(default)]
    pub gnn: GnnConfigSection,
    pub distill: DistillSection,
    #[serde(default)]
    pub explainer: ExplainerSection,
    pub eval: EvalSection,
    /// K for the standalone explain stage; defaults to `distill.k`.
    #[serde(default)]
    pub explain_k: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_l_hops() -> usize {
    3
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GemError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| GemError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| GemError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        DatasetSpec::parse(&self.dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.dataset_spec()?;
        if let DatasetSpec::Tu { dir, name } = &spec {
            if !dir.is_dir() {
                return Err(GemError::Config(format!(
                    "TU dataset directory {} does not exist",
                    dir.display()
                )));
            }
            let a = dir.join(format!("{name}_A.txt"));
            if !a.is_file() {
                return Err(GemError::Config(format!(
                    "TU dataset file {} does not exist",
                    a.display()
                )));
            }
        }
        if self.distill.k < 1 {
            return Err(GemError::Config("distill.k must be >= 1".into()));
        }
        if self.explainer.epochs < 1 {
            return Err(GemError::Config("explainer.epochs must be >= 1".into()));
        }
        if self.l_hops < 1 {
            return Err(GemError::Config("l_hops must be >= 1".into()));
        }
        if self.eval.k_grid.is_empty() {
            return Err(GemError::Config("eval.k_grid must be nonempty".into()));
        }
        if self.eval.k_grid.iter().any(|&k| k < 1) {
            return Err(GemError::Config("eval.k_grid entries must be >= 1".into()));
        }
        if let Some(e) = self.gnn.epochs {
            if e < 1 {
                return Err(GemError::Config("gnn.epochs must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the fully-resolved config.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn log_odds_k(&self) -> usize {
        self.eval
            .log_odds_k
            .unwrap_or_else(|| *self.eval.k_grid.iter().min().unwrap())
    }

    pub fn explain_k(&self) -> usize {
        self.explain_k.unwrap_or(self.distill.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "dataset": "ba_shapes",
            "seed": 7,
            "split": {"train": 300, "val": 50, "test": 50},
            "distill": {"k": 6, "connectivity": true},
            "eval": {"k_grid": [5, 6, 7, 8, 9]},
            "output_dir": "out"
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_value(minimal_json()).unwrap();
        assert_eq!(cfg.l_hops, 3);
        assert_eq!(cfg.explainer.epochs, 100);
        assert_eq!(cfg.explainer.batch_size, 32);
        assert_eq!(cfg.log_odds_k(), 5);
        assert_eq!(cfg.explain_k(), 6);
        assert_eq!(cfg.dataset_spec().unwrap(), DatasetSpec::BaShapes);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal_json();
        v["typo_field"] = serde_json::json!(1);
        assert!(RunConfig::from_value(v).is_err());
        let mut v = minimal_json();
        v["distill"]["connectivty"] = serde_json::json!(true);
        assert!(RunConfig::from_value(v).is_err());
    }

    #[test]
    fn dataset_spec_parsing() {
        assert!(DatasetSpec::parse("tree_cycles").is_ok());
        assert!(DatasetSpec::parse("tu:Mutag:/data/mutag").is_ok());
        assert!(DatasetSpec::parse("tu:Mutag").is_err());
        assert!(DatasetSpec::parse("imagenet").is_err());
    }

    #[test]
    fn missing_tu_dir_fails_validation() {
        let mut v = minimal_json();
        v["dataset"] = serde_json::json!("tu:Nope:/definitely/missing/dir");
        assert!(RunConfig::from_value(v).is_err());
    }
}
