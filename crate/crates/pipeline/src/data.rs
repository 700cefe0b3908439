//! Labeled subject loading, balanced sample selection and the prepared
//! sample store.
//!
//! The store keeps sample references (subject, label, source streamline
//! indices), not point clouds; clouds are rebuilt deterministically from the
//! tractograms whenever a sample is used.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracto_core::qbx::{quickbundlesx, sample_clusters_move_up, MoveUpOptions, SampledCluster};
use tracto_core::representation::{build_cluster_sample, build_fusion_sample, build_streamline_sample, Representation};
use tracto_core::tck::{read_labeled, read_tck, write_labeled, Datatype};
use tracto_core::tokenizer::{tokenize, PatchConfig, TokenizedSample};
use tracto_core::{Labels, Point, Streamline, Tractogram};
use tracto_nn::model::train_transforms;

use crate::config::{PipelineConfig, SamplingConfig};

pub fn labels_path(tck: &Path) -> PathBuf {
    tck.with_extension("labels")
}

pub fn read_tractogram(path: &Path) -> Result<Tractogram> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let lp = labels_path(path);
    if lp.exists() {
        let text = std::fs::read_to_string(&lp).with_context(|| format!("reading {}", lp.display()))?;
        read_labeled(&bytes, &text).with_context(|| format!("loading {}", path.display()))
    } else {
        read_tck(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

pub fn read_labeled_tractogram(path: &Path) -> Result<Tractogram> {
    let t = read_tractogram(path)?;
    if t.labels.is_none() {
        bail!("{} has no label file {}", path.display(), labels_path(path).display());
    }
    Ok(t)
}

pub fn write_labeled_tractogram(t: &Tractogram, path: &Path) -> Result<()> {
    let (bytes, labels) = write_labeled(t, Datatype::Float32LE)?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    std::fs::write(labels_path(path), labels).with_context(|| format!("writing {}", labels_path(path).display()))?;
    Ok(())
}

/// Per-streamline class indices of `t` expressed in the `classes` vocabulary,
/// extending it with names it has not seen yet.
pub fn remap_labels(t: &Tractogram, classes: &mut Vec<String>) -> Result<Vec<usize>> {
    let l = t.labels.as_ref().ok_or_else(|| anyhow!("tractogram is not labeled"))?;
    let map: Vec<usize> = l
        .class_names
        .iter()
        .map(|n| match classes.iter().position(|c| c == n) {
            Some(i) => i,
            None => {
                classes.push(n.clone());
                classes.len() - 1
            }
        })
        .collect();
    Ok(l.indices.iter().map(|&i| map[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Streamline(usize),
    Cluster(Vec<usize>),
    /// A streamline plus the other members of its cluster.
    Fusion { index: usize, neighbors: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRef {
    pub split: Split,
    pub subject: usize,
    pub label: usize,
    pub source: Source,
}

/// One loaded subject with labels mapped into the run's class vocabulary.
#[derive(Debug, Clone)]
pub struct Subject {
    pub path: PathBuf,
    pub split: Split,
    pub tractogram: Tractogram,
    pub labels: Vec<usize>,
}

pub fn load_subjects(cfg: &PipelineConfig) -> Result<(Vec<Subject>, Vec<String>)> {
    if cfg.data.train.is_empty() {
        bail!("config lists no training tractograms");
    }
    let mut classes = Vec::new();
    let mut out = Vec::new();
    let paths = cfg.data.train.iter().map(|p| (p, Split::Train)).chain(cfg.data.val.iter().map(|p| (p, Split::Val)));
    for (path, split) in paths {
        let t = read_labeled_tractogram(path)?;
        let labels = remap_labels(&t, &mut classes)?;
        out.push(Subject { path: path.clone(), split, tractogram: t, labels });
    }
    Ok((out, classes))
}

/// Clusters accepted by move-up; `labels` enables majority labels and the
/// purity rule.
pub fn move_up_clusters(t: &Tractogram, s: &SamplingConfig, min_members: usize, labels: Option<&[usize]>) -> Result<Vec<SampledCluster>> {
    let tree = quickbundlesx(t, &s.thresholds, s.n_resample)?;
    Ok(sample_clusters_move_up(&tree, MoveUpOptions { min_members, require_pure: labels.is_some() }, labels)?)
}

/// For each streamline, the other members of the accepted cluster that
/// contains it (empty when no accepted cluster does).
pub fn fusion_neighbors(n: usize, clusters: &[SampledCluster]) -> Vec<Vec<usize>> {
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (ci, c) in clusters.iter().enumerate() {
        for &m in &c.member_indices {
            owner[m].get_or_insert(ci);
        }
    }
    (0..n)
        .map(|i| match owner[i] {
            Some(ci) => clusters[ci].member_indices.iter().copied().filter(|&m| m != i).collect(),
            None => Vec::new(),
        })
        .collect()
}

/// Candidate sources per class for one subject.
fn candidates(rep: Representation, subj: &Subject, s: &SamplingConfig, n_classes: usize) -> Result<Vec<Vec<Source>>> {
    let mut per_class: Vec<Vec<Source>> = vec![Vec::new(); n_classes];
    match rep {
        Representation::Streamline => {
            for (i, &l) in subj.labels.iter().enumerate() {
                per_class[l].push(Source::Streamline(i));
            }
        }
        Representation::Cluster => {
            for c in move_up_clusters(&subj.tractogram, s, s.min_members, Some(&subj.labels))? {
                per_class[c.class_label.expect("labeled")].push(Source::Cluster(c.member_indices));
            }
        }
        Representation::Fusion => {
            let clusters = move_up_clusters(&subj.tractogram, s, s.min_members, None)?;
            let neigh = fusion_neighbors(subj.tractogram.len(), &clusters);
            for (i, (&l, nb)) in subj.labels.iter().zip(neigh).enumerate() {
                per_class[l].push(Source::Fusion { index: i, neighbors: nb });
            }
        }
    }
    Ok(per_class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub path: PathBuf,
    pub split: Split,
    pub streamlines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub representation: String,
    pub seed: u64,
    pub quota: usize,
    pub val_quota: usize,
    pub class_names: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
    /// split → class → sample count
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub manifest: Manifest,
    pub samples: Vec<SampleRef>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| mix(acc, p))
}

/// Picks exactly `quota` candidates per subject per class (all of them,
/// with a warning, when fewer exist).
pub fn prepare(cfg: &PipelineConfig, subjects: &[Subject], class_names: &[String]) -> Result<Prepared> {
    let rep = cfg.representation()?;
    let per_subject: Vec<Vec<Vec<Source>>> = subjects
        .par_iter()
        .map(|s| candidates(rep, s, &cfg.sampling, class_names.len()))
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (si, (subj, per_class)) in subjects.iter().zip(per_subject).enumerate() {
        let quota = match subj.split {
            Split::Train => cfg.sampling.quota,
            Split::Val => cfg.sampling.val_quota,
        };
        for (class, mut cands) in per_class.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, 1, si as u64, class as u64]));
            if cands.len() < quota && subj.labels.contains(&class) {
                let w = format!(
                    "{}: class {} has {} {} candidates, fewer than the quota {quota}",
                    subj.path.display(),
                    class_names[class],
                    cands.len(),
                    rep
                );
                warn!("{w}");
                warnings.push(w);
            }
            let chosen: Vec<Source> = if cands.len() > quota {
                let mut idx = sample(&mut rng, cands.len(), quota).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| std::mem::replace(&mut cands[i], Source::Streamline(0))).collect()
            } else {
                cands
            };
            *counts.entry(subj.split.as_str().to_string()).or_default().entry(class_names[class].clone()).or_default() += chosen.len();
            samples.extend(chosen.into_iter().map(|source| SampleRef { split: subj.split, subject: si, label: class, source }));
        }
    }
    let manifest = Manifest {
        representation: rep.to_string(),
        seed: cfg.seed,
        quota: cfg.sampling.quota,
        val_quota: cfg.sampling.val_quota,
        class_names: class_names.to_vec(),
        subjects: subjects.iter().map(|s| SubjectEntry { path: s.path.clone(), split: s.split, streamlines: s.tractogram.len() }).collect(),
        counts,
        warnings,
    };
    Ok(Prepared { manifest, samples })
}

fn join(v: &[usize]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{x}").expect("string write");
    }
    s
}

fn split_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| x.parse::<usize>().map_err(|e| anyhow!("bad index {x:?}: {e}"))).collect()
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SAMPLES_FILE: &str = "samples.tsv";

impl Prepared {
    /// One line per sample: split, subject, label, kind, then indices.
    pub fn samples_text(&self) -> String {
        let mut out = String::from("split\tsubject\tlabel\tkind\tindex\tmembers\n");
        for s in &self.samples {
            let (kind, index, members) = match &s.source {
                Source::Streamline(i) => ("streamline", i.to_string(), String::new()),
                Source::Cluster(m) => ("cluster", String::new(), join(m)),
                Source::Fusion { index, neighbors } => ("fusion", index.to_string(), join(neighbors)),
            };
            writeln!(out, "{}\t{}\t{}\t{kind}\t{index}\t{members}", s.split.as_str(), s.subject, s.label).expect("string write");
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join(MANIFEST_FILE), toml::to_string(&self.manifest)?)?;
        std::fs::write(dir.join(SAMPLES_FILE), self.samples_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).with_context(|| format!("reading {} (run `prepare` first)", mpath.display()))?;
        let manifest: Manifest = toml::from_str(&text).with_context(|| format!("parsing {}", mpath.display()))?;
        let spath = dir.join(SAMPLES_FILE);
        let text = std::fs::read_to_string(&spath).with_context(|| format!("reading {}", spath.display()))?;
        let mut samples = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || anyhow!("{}: line {}: malformed sample", spath.display(), ln + 1);
            if f.len() != 6 {
                return Err(bad());
            }
            let split = match f[0] {
                "train" => Split::Train,
                "val" => Split::Val,
                _ => return Err(bad()),
            };
            let subject: usize = f[1].parse().map_err(|_| bad())?;
            let label: usize = f[2].parse().map_err(|_| bad())?;
            let source = match f[3] {
                "streamline" => Source::Streamline(f[4].parse().map_err(|_| bad())?),
                "cluster" => Source::Cluster(split_list(f[5])?),
                "fusion" => Source::Fusion { index: f[4].parse().map_err(|_| bad())?, neighbors: split_list(f[5])? },
                _ => return Err(bad()),
            };
            if subject >= manifest.subjects.len() || label >= manifest.class_names.len() {
                return Err(bad());
            }
            samples.push(SampleRef { split, subject, label, source });
        }
        Ok(Self { manifest, samples })
    }

    /// Reloads the subjects listed in the manifest.
    pub fn load_subjects(&self) -> Result<Vec<Subject>> {
        let mut classes = self.manifest.class_names.clone();
        let subjects = self
            .manifest
            .subjects
            .iter()
            .map(|e| {
                let t = read_labeled_tractogram(&e.path)?;
                if t.len() != e.streamlines {
                    bail!("{} changed since prepare: {} streamlines, manifest says {}", e.path.display(), t.len(), e.streamlines);
                }
                let labels = remap_labels(&t, &mut classes)?;
                Ok(Subject { path: e.path.clone(), split: e.split, tractogram: t, labels })
            })
            .collect::<Result<Vec<_>>>()?;
        if classes.len() != self.manifest.class_names.len() {
            bail!("subject label files declare classes missing from the manifest");
        }
        Ok(subjects)
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRef> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

/// Raw point cloud for a sample. `rng_seed` drives point drawing for the
/// cluster and fusion representations.
pub fn sample_points(source: &Source, t: &Tractogram, rng_seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let get = |i: usize| -> Result<&Streamline> { t.streamlines.get(i).ok_or_else(|| anyhow!("streamline index {i} out of range")) };
    Ok(match source {
        Source::Streamline(i) => build_streamline_sample(get(*i)?, None, *i)?.points,
        Source::Cluster(members) => {
            let c = SampledCluster { member_indices: members.clone(), level_radius_mm: 0.0, node: (0, 0), class_label: None };
            build_cluster_sample(&c, t, &mut rng)?.points
        }
        Source::Fusion { index, neighbors } => {
            let nb = neighbors.iter().map(|&i| get(i)).collect::<Result<Vec<_>>>()?;
            build_fusion_sample(get(*index)?, &nb, None, *index, &mut rng)?.points
        }
    })
}

/// Point cloud → (optionally augmented) tokens.
pub fn tokenize_sample(points: &[Point], patch: PatchConfig, augment_seed: Option<u64>) -> Result<TokenizedSample> {
    let pts = match augment_seed {
        Some(seed) => train_transforms(points, &mut ChaCha8Rng::seed_from_u64(seed), true),
        None => points.to_vec(),
    };
    Ok(tokenize(&pts, patch)?)
}

/// Attaches labels to a tractogram built from `names`.
pub fn labeled(streamlines: Vec<Streamline>, names: &[String], indices: Vec<usize>) -> Result<Tractogram> {
    Ok(Tractogram::with_labels(streamlines, Labels::new(names.to_vec(), indices)?)?)
}
