use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tracto_core::qbx::DEFAULT_THRESHOLDS;
use tracto_core::representation::Representation;
use tracto_core::tokenizer::PatchConfig;
use tracto_nn::model::ModelConfig;

/// A whole run, read from one TOML file. Relative data paths resolve
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub representation: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub patch: PatchSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled tractograms (`x.tck` with a `x.labels` sidecar).
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub val: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Training samples per subject per class.
    pub quota: usize,
    /// Validation samples per subject per class.
    pub val_quota: usize,
    /// Minimum members for a training cluster after move-up.
    pub min_members: usize,
    /// Minimum members for clusters built at inference time.
    pub infer_min_members: usize,
    pub thresholds: Vec<f64>,
    pub n_resample: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            quota: 500,
            val_quota: 100,
            min_members: 10,
            infer_min_members: 1,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            n_resample: tracto_core::qbx::DEFAULT_RESAMPLE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    pub n_patches: Option<usize>,
    pub patch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub extractor_depth: usize,
    pub generator_depth: usize,
    pub n_heads: usize,
    pub intermittent_ratio: f64,
    pub mlp_ratio: f64,
    pub pe_scale: f64,
    pub patch_scale_mm: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 64, 8);
        Self {
            embed_dim: m.embed_dim,
            extractor_depth: m.extractor_depth,
            generator_depth: m.generator_depth,
            n_heads: m.n_heads,
            intermittent_ratio: m.intermittent_ratio,
            mlp_ratio: m.mlp_ratio,
            pe_scale: m.pe_scale,
            patch_scale_mm: m.patch_scale_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Gradient shards per batch. Results depend on this value, not on the
    /// number of threads.
    pub shards: usize,
    pub pretrain_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            weight_decay: 0.05,
            batch_size: 16,
            shards: 1,
            pretrain_epochs: 150,
            max_epochs: 150,
            patience: 15,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub voxel_size_mm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { voxel_size_mm: 1.0 }
    }
}

impl PipelineConfig {
    pub fn new(representation: Representation) -> Self {
        Self {
            representation: representation.to_string(),
            seed: 0,
            data: DataConfig::default(),
            sampling: SamplingConfig::default(),
            patch: PatchSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.data.train.iter_mut().chain(cfg.data.val.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn representation(&self) -> Result<Representation> {
        self.representation.parse().map_err(|e: tracto_core::Error| anyhow::anyhow!(e))
    }

    pub fn patch_config(&self) -> Result<PatchConfig> {
        let d = PatchConfig::for_representation(self.representation()?);
        let p = PatchConfig { n_patches: self.patch.n_patches.unwrap_or(d.n_patches), patch_size: self.patch.patch_size.unwrap_or(d.patch_size) };
        p.validate()?;
        Ok(p)
    }

    pub fn model_config(&self, n_classes: usize) -> Result<ModelConfig> {
        let p = self.patch_config()?;
        let m = &self.model;
        let cfg = ModelConfig {
            embed_dim: m.embed_dim,
            extractor_depth: m.extractor_depth,
            generator_depth: m.generator_depth,
            n_heads: m.n_heads,
            n_classes,
            intermittent_ratio: m.intermittent_ratio,
            n_patches: p.n_patches,
            patch_size: p.patch_size,
            mlp_ratio: m.mlp_ratio,
            pe_scale: m.pe_scale,
            patch_scale_mm: m.patch_scale_mm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.representation()?;
        self.patch_config()?;
        self.model_config(1)?;
        let s = &self.sampling;
        if s.quota == 0 {
            bail!("sampling.quota must be at least 1");
        }
        if s.min_members == 0 || s.infer_min_members == 0 {
            bail!("sampling.min_members and sampling.infer_min_members must be at least 1");
        }
        let t = &self.train;
        if t.batch_size == 0 || t.shards == 0 {
            bail!("train.batch_size and train.shards must be at least 1");
        }
        if !(t.lr0 > 0.0 && t.weight_decay >= 0.0) {
            bail!("train.lr0 must be positive and train.weight_decay non-negative");
        }
        if !(self.eval.voxel_size_mm > 0.0) {
            bail!("eval.voxel_size_mm must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg: PipelineConfig = toml::from_str("representation = \"cluster\"\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sampling.quota, 500);
        assert_eq!(cfg.train.max_epochs, 150);
        assert_eq!(cfg.train.lr0, 1e-4);
        assert_eq!(cfg.patch_config().unwrap(), PatchConfig { n_patches: 64, patch_size: 32 });
    }

    #[test]
    fn round_trip_and_rejections() {
        let cfg = PipelineConfig::new(Representation::Fusion);
        let back: PipelineConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<PipelineConfig>("representation = \"voxel\"\n").unwrap().validate().is_err());
        assert!(toml::from_str::<PipelineConfig>("representation = \"fusion\"\nbogus = 1\n").is_err());
        let mut bad = cfg;
        bad.sampling.quota = 0;
        assert!(bad.validate().is_err());
    }
}
