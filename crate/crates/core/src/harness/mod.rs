//! Experiment orchestration: configuration, runs, sweeps, ablations and the
//! CSV artifacts they leave behind.

pub mod config;
pub mod embeddings;
pub mod results;
pub mod run;

pub use config::{DatasetConfig, DatasetKind, ExperimentConfig, NoiseConfig};
pub use embeddings::{dump_embeddings, embedding_table, read_embeddings, write_embeddings, EmbeddingTable};
pub use results::{
    aggregate, collect_results, load_results, mean_std, parse_results, parse_sweep, render_grid, save_results,
    sort_rows, write_report, write_results, write_sweep, ReportCell, ResultRow, SweepRow,
};
pub use run::{
    ablate, build_teacher, evaluate, load_data, pretrain_teachers, run_experiment, run_one, sweep_k, AblationArm,
    AblationOutcome, SeedData, SweepOutcome, Teacher, ABLATION_ARMS,
};

use crate::error::{Error, Result};

/// Fraction of exact matches between predictions and labels.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty prediction set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}
