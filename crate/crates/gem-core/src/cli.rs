//! Command-line surface: one subcommand per pipeline stage plus `run-all`,
//! all driven by a single JSON config.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::Pipeline;

#[derive(Debug, Parser)]
#[command(
    name = "gem",
    about = "Train GCN classifiers, distill causal ground-truth explanations, train a generative explainer, and evaluate explanation quality",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Override the config's root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for instance-level parallelism
    /// (falls back to the GEM_JOBS environment variable).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate or ingest the dataset and write the split.
    GenData,
    /// Train the target GNN classifier.
    TrainGnn,
    /// Distill per-edge causal ground truth for the train/val splits.
    Distill,
    /// Train the generative explainer on distilled ground truth.
    TrainExplainer,
    /// Produce explanations for the test split.
    Explain,
    /// Score explanations and emit CSV outputs.
    Evaluate,
    /// Chain every stage.
    RunAll,
}

fn effective_jobs(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("GEM_JOBS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    })
}

/// Parse args, run the requested stage, and map errors onto exit codes:
/// 0 success, 1 validation error, 2 runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage text
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(jobs) = effective_jobs(cli.jobs) {
        // later calls are no-ops once a global pool exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let config_path = cli.config.clone().ok_or_else(|| {
        crate::error::GemError::Config("--config <path> is required".into())
    })?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = effective_jobs(cli.jobs) {
        cfg.jobs = Some(jobs);
    }
    if let Some(jobs) = cfg.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let pipeline = Pipeline::new(cfg)?;
    match cli.command {
        Command::GenData => pipeline.gen_data(),
        Command::TrainGnn => pipeline.train_gnn(),
        Command::Distill => pipeline.distill(),
        Command::TrainExplainer => pipeline.train_explainer(),
        Command::Explain => pipeline.explain(),
        Command::Evaluate => pipeline.evaluate(),
        Command::RunAll => pipeline.run_all(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_config_is_a_validation_error() {
        let code = run(["gem", "gen-data"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn bad_config_path_is_a_validation_error() {
        let code = run(["gem", "gen-data", "--config", "/no/such/file.json"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn unknown_subcommand_fails() {
        let code = run(["gem", "frobnicate"]);
        assert_eq!(code, 1);
    }
}
