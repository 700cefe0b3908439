//! The synthetic end-to-end experiment: prepare, pretrain, fine-tune, label a
//! held-out subject and score it.

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::Result;
use tracto_nn::checkpoint::Checkpoint;

use crate::commands::{cmd_finetune, cmd_prepare, cmd_pretrain};
use crate::config::PipelineConfig;
use crate::data::read_labeled_tractogram;
use crate::evaluate::{evaluate, Report};
use crate::infer::{infer, write_outputs};
use crate::training::{best_path, RunOptions, Stage, StageOutcome};

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Fraction of held-out streamlines labeled correctly.
    pub accuracy: f64,
    pub report: Report,
    pub elapsed: Duration,
    pub pretrain: Option<StageOutcome>,
    pub finetune: StageOutcome,
    pub labeled: usize,
    pub total: usize,
}

/// Runs every stage in `work` with `cfg` (whose data section lists the
/// training and validation subjects) and evaluates on `test`.
pub fn run(cfg: &PipelineConfig, work: &Path, test: &Path) -> Result<ExperimentResult> {
    let start = Instant::now();
    cmd_prepare(cfg, work)?;
    let pretrain = if cfg.train.pretrain_epochs > 0 { Some(cmd_pretrain(cfg, work, RunOptions::default())?) } else { None };
    let finetune = cmd_finetune(cfg, work, None, RunOptions::default())?;
    let ck = Checkpoint::load(&best_path(work, Stage::Finetune))?;
    let reference = read_labeled_tractogram(test)?;
    let inf = infer(&ck, cfg, &reference)?;
    let pred = write_outputs(&reference, &inf, &ck.class_names, &work.join("inference"))?;
    let ref_labels = reference.labels.as_ref().expect("labeled");
    let correct = inf
        .labels
        .iter()
        .zip(&ref_labels.indices)
        .filter(|(&p, &r)| ck.class_names[p] == ref_labels.class_names[r])
        .count();
    let report = evaluate(&pred, &reference, cfg.eval.voxel_size_mm)?;
    std::fs::write(work.join("report.tsv"), report.render())?;
    Ok(ExperimentResult {
        accuracy: correct as f64 / reference.len() as f64,
        report,
        elapsed: start.elapsed(),
        pretrain,
        finetune,
        labeled: inf.labels.len(),
        total: reference.len(),
    })
}
