//! The CLI subcommands as library functions.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use tracto_core::synth::{default_corpus, generate};
use tracto_nn::checkpoint::Checkpoint;

use crate::config::PipelineConfig;
use crate::data::{load_subjects, read_labeled_tractogram, read_tractogram, stream_seed, write_labeled_tractogram, Prepared};
use crate::evaluate::{evaluate, Report};
use crate::infer::{infer, write_outputs, Inference};
use crate::training::{best_path, run_stage, RunOptions, Stage, StageOutcome};

/// Writes `subject<i>.tck` + `.labels` for `n_subjects` synthetic subjects
/// of the default 8-class corpus.
pub fn cmd_synth(out: &Path, n_subjects: usize, n_streamlines: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    (0..n_subjects)
        .map(|s| {
            let subject_seed = stream_seed(&[seed, 100, s as u64]);
            let t = generate(&default_corpus(n_streamlines, subject_seed), subject_seed)?;
            let path = out.join(format!("subject{s}.tck"));
            write_labeled_tractogram(&t, &path)?;
            info!("wrote {} ({} streamlines)", path.display(), t.len());
            Ok(path)
        })
        .collect()
}

pub fn cmd_prepare(cfg: &PipelineConfig, out: &Path) -> Result<Prepared> {
    let (subjects, classes) = load_subjects(cfg)?;
    let prepared = crate::data::prepare(cfg, &subjects, &classes)?;
    prepared.save(out)?;
    for (split, per_class) in &prepared.manifest.counts {
        let total: usize = per_class.values().sum();
        info!("{split}: {total} samples over {} classes", per_class.len());
    }
    Ok(prepared)
}

pub fn cmd_pretrain(cfg: &PipelineConfig, out: &Path, opts: RunOptions) -> Result<StageOutcome> {
    let prepared = Prepared::load(out)?;
    let subjects = prepared.load_subjects()?;
    run_stage(cfg, &prepared, &subjects, Stage::Pretrain, None, out, opts)
}

/// Fine-tunes from `pretrained` when given, else from `<out>/pretrain.ckpt`
/// when present, else from scratch.
pub fn cmd_finetune(cfg: &PipelineConfig, out: &Path, pretrained: Option<&Path>, opts: RunOptions) -> Result<StageOutcome> {
    let prepared = Prepared::load(out)?;
    let subjects = prepared.load_subjects()?;
    let default = best_path(out, Stage::Pretrain);
    let init = match pretrained {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None if !opts.resume && default.exists() => Some(Checkpoint::load(&default)?),
        None => None,
    };
    if init.is_none() && !opts.resume {
        info!("no pretrained checkpoint; fine-tuning from random initialization");
    }
    run_stage(cfg, &prepared, &subjects, Stage::Finetune, init, out, opts)
}

pub fn cmd_infer(cfg: &PipelineConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<Inference> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let t = read_tractogram(input)?;
    let inf = infer(&ck, cfg, &t)?;
    write_outputs(&t, &inf, &ck.class_names, out)?;
    info!("labeled {} streamlines ({} through the nearest-centroid fallback)", inf.labels.len(), inf.fallback);
    Ok(inf)
}

pub fn cmd_evaluate(pred: &Path, reference: &Path, voxel_size_mm: f64, out: Option<&Path>) -> Result<Report> {
    let report = evaluate(&read_labeled_tractogram(pred)?, &read_labeled_tractogram(reference)?, voxel_size_mm)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.tsv"), report.render())?;
    }
    Ok(report)
}
