//! Pretraining and fine-tuning loops with validation-based model selection,
//! per-epoch checkpoints and early stopping.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracto_core::tokenizer::{PatchConfig, TokenizedSample};
use tracto_nn::checkpoint::Checkpoint;
use tracto_nn::model::{Batch, Model, ModelConfig, Objective};
use tracto_nn::optim::{cosine_lr, AdamW, AdamWConfig};
use tracto_nn::train::{batch_gradients, train_step};

use crate::config::PipelineConfig;
use crate::data::{sample_points, stream_seed, tokenize_sample, Prepared, SampleRef, Split, Subject};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }

    fn objective(self) -> Objective {
        match self {
            Stage::Pretrain => Objective::Pretrain,
            Stage::Finetune => Objective::Finetune,
        }
    }

    fn id(self) -> u64 {
        match self {
            Stage::Pretrain => 2,
            Stage::Finetune => 3,
        }
    }

    /// Validation loss for pretraining, macro accuracy for fine-tuning.
    fn improves(self, new: f64, best: Option<f64>) -> bool {
        match (self, best) {
            (_, None) => true,
            (Stage::Pretrain, Some(b)) => new < b,
            (Stage::Finetune, Some(b)) => new > b,
        }
    }

    fn max_epochs(self, cfg: &PipelineConfig) -> usize {
        match self {
            Stage::Pretrain => cfg.train.pretrain_epochs,
            Stage::Finetune => cfg.train.max_epochs,
        }
    }
}

pub fn best_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.ckpt", stage.name()))
}

pub fn last_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}_last.ckpt", stage.name()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub stopped_early: bool,
}

/// Tokenizes the samples in parallel; results are in input order.
pub fn tokenize_refs(refs: &[&SampleRef], subjects: &[Subject], patch: PatchConfig, seed_of: impl Fn(usize) -> (u64, Option<u64>) + Sync) -> Result<Vec<TokenizedSample>> {
    refs.par_iter()
        .enumerate()
        .map(|(i, r)| {
            let (draw, augment) = seed_of(i);
            let pts = sample_points(&r.source, &subjects[r.subject].tractogram, draw)?;
            tokenize_sample(&pts, patch, augment)
        })
        .collect()
}

fn shards(model_cfg: &ModelConfig, toks: &[TokenizedSample], labels: &[usize], n_shards: usize) -> Result<Vec<Batch>> {
    let per = toks.len().div_ceil(n_shards.max(1)).max(1);
    toks.chunks(per)
        .zip(labels.chunks(per))
        .map(|(t, l)| Ok(Batch::new(model_cfg, &t.iter().collect::<Vec<_>>(), l.to_vec())?))
        .collect()
}

/// Argmax class per sample, evaluated in parallel chunks.
pub fn predict(model: &Model, toks: &[TokenizedSample], chunk: usize) -> Result<Vec<usize>> {
    let parts: Vec<Result<Vec<usize>>> = toks
        .par_chunks(chunk.max(1))
        .map(|c| {
            let batch = Batch::new(&model.config, &c.iter().collect::<Vec<_>>(), Vec::new())?;
            Ok(model.logits(&batch)?.iter().map(|row| argmax(row)).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(toks.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean per-class recall over classes present in `truth`.
pub fn macro_accuracy(pred: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    let mut hit = vec![0usize; n_classes];
    let mut tot = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        tot[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    let present: Vec<f64> = (0..n_classes).filter(|&c| tot[c] > 0).map(|c| hit[c] as f64 / tot[c] as f64).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

fn validation_metric(stage: Stage, model: &Model, cfg: &PipelineConfig, toks: &[TokenizedSample], labels: &[usize]) -> Result<f64> {
    match stage {
        Stage::Finetune => Ok(macro_accuracy(&predict(model, toks, cfg.train.batch_size)?, labels, model.config.n_classes)),
        Stage::Pretrain => {
            let chunk = cfg.train.batch_size.max(1);
            let losses: Vec<Result<(f64, usize)>> = toks
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| {
                    let batch = Batch::new(&model.config, &c.iter().collect::<Vec<_>>(), Vec::new())?;
                    let mut b = model.binder(false);
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, 9, i as u64]));
                    let l = model.loss(&mut b, &batch, Objective::Pretrain, &mut rng)?;
                    Ok((b.graph.value(l).item() * c.len() as f64, c.len()))
                })
                .collect();
            let (mut sum, mut n) = (0.0, 0);
            for l in losses {
                let (s, k) = l?;
                sum += s;
                n += k;
            }
            Ok(sum / n.max(1) as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from `<stage>_last.ckpt`.
    pub resume: bool,
    /// Stop once this many epochs (counted from the start of the schedule)
    /// are done, leaving the rest for a resumed run.
    pub stop_after: Option<usize>,
}

/// Runs one training stage, writing `<stage>_last.ckpt` every epoch and
/// `<stage>.ckpt` whenever the validation metric improves.
///
/// `init` seeds the model (the pretrained checkpoint for fine-tuning).
pub fn run_stage(cfg: &PipelineConfig, prepared: &Prepared, subjects: &[Subject], stage: Stage, init: Option<Checkpoint>, out: &Path, opts: RunOptions) -> Result<StageOutcome> {
    let resume = opts.resume;
    let classes = &prepared.manifest.class_names;
    let rep = cfg.representation()?;
    if prepared.manifest.representation != rep.to_string() {
        bail!("prepared samples are for the {} representation, config asks for {rep}", prepared.manifest.representation);
    }
    let model_cfg = cfg.model_config(classes.len())?;
    let patch = cfg.patch_config()?;
    let train: Vec<&SampleRef> = prepared.split(Split::Train);
    if train.is_empty() {
        bail!("the prepared store has no training samples");
    }
    let mut val: Vec<&SampleRef> = prepared.split(Split::Val);
    if val.is_empty() {
        warn!("no validation samples; selecting on the training set");
        val = train.clone();
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let adam = AdamWConfig { weight_decay: cfg.train.weight_decay, ..AdamWConfig::default() };
    let (mut model, mut opt, start, mut best, mut stale) = if resume {
        let path = last_path(out, stage);
        let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
        if ck.model.config != model_cfg || &ck.class_names != classes {
            bail!("{} was written for a different model or class list", path.display());
        }
        let opt = ck.optimizer.clone().unwrap_or_else(|| AdamW::new(&ck.model.params, adam));
        (ck.model, opt, ck.epoch + 1, ck.best_metric, ck.stale_epochs)
    } else {
        let model = match init {
            Some(ck) => {
                if &ck.class_names != classes {
                    bail!("checkpoint classes {:?} differ from the prepared classes {:?}", ck.class_names, classes);
                }
                if ck.representation != rep.to_string() {
                    bail!("checkpoint was trained on the {} representation, not {rep}", ck.representation);
                }
                let mut m = Model::new(model_cfg.clone(), cfg.seed)?;
                m.params.load(ck.model.params.named().map(|(n, t)| (n.to_string(), t.clone())).collect())
                    .context("pretrained parameters do not fit the configured model")?;
                m
            }
            None => Model::new(model_cfg.clone(), cfg.seed)?,
        };
        let opt = AdamW::new(&model.params, adam);
        (model, opt, 0, None, 0)
    };

    let val_toks = tokenize_refs(&val, subjects, patch, |i| (stream_seed(&[cfg.seed, 7, i as u64]), None))?;
    let val_labels: Vec<usize> = val.iter().map(|r| r.label).collect();
    let bs = cfg.train.batch_size;
    let steps_per_epoch = train.len().div_ceil(bs);
    let max_epochs = stage.max_epochs(cfg);
    let total_steps = max_epochs * steps_per_epoch;
    let mut outcome = StageOutcome { history: Vec::new(), best_epoch: None, best_metric: best, stopped_early: false };

    let end = opts.stop_after.map_or(max_epochs, |n| n.min(max_epochs));
    for epoch in start..end {
        if stale >= cfg.train.patience {
            outcome.stopped_early = true;
            break;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, stage.id(), epoch as u64])));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (bi, idx) in order.chunks(bs).enumerate() {
            let refs: Vec<&SampleRef> = idx.iter().map(|&i| train[i]).collect();
            let augment = cfg.train.augment;
            let toks = tokenize_refs(&refs, subjects, patch, |j| {
                let s = stream_seed(&[cfg.seed, stage.id(), epoch as u64, idx[j] as u64]);
                (s, augment.then_some(s ^ 0xA5A5))
            })?;
            let labels: Vec<usize> = refs.iter().map(|r| r.label).collect();
            let batch_shards = shards(&model_cfg, &toks, &labels, cfg.train.shards)?;
            let step = epoch * steps_per_epoch + bi;
            let lr = cosine_lr(step, total_steps, cfg.train.lr0);
            let loss = train_step(&mut model, &mut opt, &batch_shards, stage.objective(), lr, stream_seed(&[cfg.seed, stage.id(), epoch as u64, bi as u64, 1]))?;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let train_loss = loss_sum / seen as f64;
        let metric = validation_metric(stage, &model, cfg, &val_toks, &val_labels)?;
        let improved = stage.improves(metric, best);
        if improved {
            best = Some(metric);
            stale = 0;
            outcome.best_epoch = Some(epoch);
        } else {
            stale += 1;
        }
        outcome.best_metric = best;
        info!(
            "{} epoch {}/{}: train loss {:.5}, validation {} {:.5}{}",
            stage.name(),
            epoch + 1,
            max_epochs,
            train_loss,
            if stage == Stage::Pretrain { "loss" } else { "macro accuracy" },
            metric,
            if improved { " (best)" } else { "" }
        );
        outcome.history.push(EpochLog { epoch, train_loss, val_metric: metric });
        let mut ck = Checkpoint {
            model: model.clone(),
            optimizer: Some(opt.clone()),
            epoch,
            representation: rep.to_string(),
            class_names: classes.clone(),
            best_metric: best,
            stale_epochs: stale,
        };
        ck.save(&last_path(out, stage))?;
        if improved {
            ck.optimizer = None;
            ck.save(&best_path(out, stage))?;
        }
    }
    if !best_path(out, stage).exists() {
        bail!("{} produced no checkpoint (max epochs is 0?)", stage.name());
    }
    Ok(outcome)
}

/// Loss of the first training batch of `epoch` without updating anything;
/// used to check that a resumed run continues exactly.
pub fn probe_batch_loss(cfg: &PipelineConfig, prepared: &Prepared, subjects: &[Subject], stage: Stage, model: &Model, epoch: usize) -> Result<f64> {
    let train = prepared.split(Split::Train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, stage.id(), epoch as u64])));
    let idx = &order[..cfg.train.batch_size.min(order.len())];
    let refs: Vec<&SampleRef> = idx.iter().map(|&i| train[i]).collect();
    let augment = cfg.train.augment;
    let toks = tokenize_refs(&refs, subjects, cfg.patch_config()?, |j| {
        let s = stream_seed(&[cfg.seed, stage.id(), epoch as u64, idx[j] as u64]);
        (s, augment.then_some(s ^ 0xA5A5))
    })?;
    let labels: Vec<usize> = refs.iter().map(|r| r.label).collect();
    let b = shards(&model.config, &toks, &labels, cfg.train.shards)?;
    Ok(batch_gradients(model, &b, stage.objective(), stream_seed(&[cfg.seed, stage.id(), epoch as u64, 0, 1]))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_accuracy_by_hand() {
        // class 0: 2/2, class 1: 1/3 → (1 + 1/3) / 2
        let acc = macro_accuracy(&[0, 0, 1, 0, 0], &[0, 0, 1, 1, 1], 3);
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
