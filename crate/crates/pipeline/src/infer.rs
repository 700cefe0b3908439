//! Labels every streamline of a tractogram with a trained checkpoint.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use tracto_core::qbx::{quickbundlesx, sample_clusters_move_up, MoveUpOptions};
use tracto_core::representation::Representation;
use tracto_core::streamline::{mdf_points, resample};
use tracto_core::tokenizer::{PatchConfig, TokenizedSample};
use tracto_core::{Streamline, Tractogram};
use tracto_nn::checkpoint::Checkpoint;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::data::{fusion_neighbors, labeled, move_up_clusters, sample_points, stream_seed, tokenize_sample, write_labeled_tractogram, Source};
use crate::training::predict;

/// Label index per streamline, each in `0..class_names.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub labels: Vec<usize>,
    /// Streamlines labeled through the nearest-centroid fallback.
    pub fallback: usize,
}

fn tokenize_sources(sources: &[Source], t: &Tractogram, patch: PatchConfig, seed: u64) -> Result<Vec<TokenizedSample>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| tokenize_sample(&sample_points(s, t, stream_seed(&[seed, 11, i as u64]))?, patch, None))
        .collect()
}

pub fn infer(ck: &Checkpoint, cfg: &PipelineConfig, t: &Tractogram) -> Result<Inference> {
    let rep: Representation = ck.representation.parse().map_err(|e: tracto_core::Error| anyhow!(e))?;
    if cfg.representation()? != rep {
        bail!("representation mismatch: checkpoint is {rep}, config asks for {}", cfg.representation);
    }
    if t.is_empty() {
        return Ok(Inference { labels: Vec::new(), fallback: 0 });
    }
    let model = &ck.model;
    let patch = PatchConfig { n_patches: model.config.n_patches, patch_size: model.config.patch_size };
    let chunk = cfg.train.batch_size.max(1);
    match rep {
        Representation::Streamline => {
            let sources: Vec<Source> = (0..t.len()).map(Source::Streamline).collect();
            let toks = tokenize_sources(&sources, t, patch, cfg.seed)?;
            Ok(Inference { labels: predict(model, &toks, chunk)?, fallback: 0 })
        }
        Representation::Fusion => {
            let clusters = move_up_clusters(t, &cfg.sampling, cfg.sampling.min_members, None)?;
            let sources: Vec<Source> = fusion_neighbors(t.len(), &clusters)
                .into_iter()
                .enumerate()
                .map(|(index, neighbors)| Source::Fusion { index, neighbors })
                .collect();
            let toks = tokenize_sources(&sources, t, patch, cfg.seed)?;
            Ok(Inference { labels: predict(model, &toks, chunk)?, fallback: 0 })
        }
        Representation::Cluster => {
            let s = &cfg.sampling;
            let tree = quickbundlesx(t, &s.thresholds, s.n_resample)?;
            let mut clusters = sample_clusters_move_up(&tree, MoveUpOptions { min_members: s.infer_min_members, require_pure: false }, None)?;
            // finer clusters claim their members first
            clusters.sort_by(|a, b| a.level_radius_mm.total_cmp(&b.level_radius_mm));
            let sources: Vec<Source> = clusters.iter().map(|c| Source::Cluster(c.member_indices.clone())).collect();
            let toks = tokenize_sources(&sources, t, patch, cfg.seed)?;
            let cluster_labels = predict(model, &toks, chunk)?;
            let mut labels: Vec<Option<usize>> = vec![None; t.len()];
            for (c, &l) in clusters.iter().zip(&cluster_labels) {
                for &m in &c.member_indices {
                    labels[m].get_or_insert(l);
                }
            }
            let centroids: Vec<(&[tracto_core::Point], usize)> =
                clusters.iter().zip(&cluster_labels).map(|(c, &l)| (tree.nodes[c.node.0][c.node.1].centroid.as_slice(), l)).collect();
            let mut fallback = 0;
            for (i, slot) in labels.iter_mut().enumerate() {
                if slot.is_some() {
                    continue;
                }
                if centroids.is_empty() {
                    bail!("no clusters were accepted; cannot label streamline {i}");
                }
                let r = resample(&t.streamlines[i], s.n_resample)?;
                let mut best = (f64::INFINITY, 0);
                for &(c, l) in &centroids {
                    let d = mdf_points(r.points(), c)?;
                    if d < best.0 {
                        best = (d, l);
                    }
                }
                *slot = Some(best.1);
                fallback += 1;
            }
            Ok(Inference { labels: labels.into_iter().map(|l| l.expect("every streamline labeled")).collect(), fallback })
        }
    }
}

/// Writes `predicted.tck` (+ labels) and one `classes/<name>.tck` per class
/// that received at least one streamline.
pub fn write_outputs(t: &Tractogram, inf: &Inference, class_names: &[String], out: &Path) -> Result<Tractogram> {
    std::fs::create_dir_all(out.join("classes")).with_context(|| format!("creating {}", out.display()))?;
    let result = labeled(t.streamlines.clone(), class_names, inf.labels.clone())?;
    write_labeled_tractogram(&result, &out.join("predicted.tck"))?;
    for (c, name) in class_names.iter().enumerate() {
        let members: Vec<Streamline> = t.streamlines.iter().zip(&inf.labels).filter(|(_, &l)| l == c).map(|(s, _)| s.clone()).collect();
        if members.is_empty() {
            log::info!("class {name}: no streamlines, nothing exported");
            continue;
        }
        let sub = Tractogram::new(members);
        let bytes = tracto_core::tck::write_tck(&sub, tracto_core::tck::Datatype::Float32LE)?;
        std::fs::write(out.join("classes").join(format!("{name}.tck")), bytes)?;
    }
    Ok(result)
}
