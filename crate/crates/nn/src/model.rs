//! Point-patch GPT: PointNet patch encoder, causal transformer extractor,
//! shallower generator with relative-direction prompts, next-patch
//! prediction head and classification head.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracto_core::tokenizer::TokenizedSample;
use tracto_core::Point;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::loss::{chamfer_loss, cross_entropy};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const ENC_H1: usize = 64;
const ENC_H2: usize = 128;

fn default_mlp_ratio() -> f64 {
    2.0
}
fn default_pe_scale() -> f64 {
    100.0
}
fn default_patch_scale_mm() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub extractor_depth: usize,
    pub generator_depth: usize,
    pub n_heads: usize,
    pub n_classes: usize,
    pub intermittent_ratio: f64,
    pub n_patches: usize,
    pub patch_size: usize,
    /// Hidden width of the transformer MLP as a multiple of `embed_dim`.
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    /// Unit-cube positions are multiplied by this before the sinusoidal
    /// encoding so that nearby centers get distinguishable codes.
    #[serde(default = "default_pe_scale")]
    pub pe_scale: f64,
    /// Relative patch coordinates (mm) are divided by this on the way in and
    /// predictions are compared in the same units.
    #[serde(default = "default_patch_scale_mm")]
    pub patch_scale_mm: f64,
}

impl ModelConfig {
    pub fn new(n_classes: usize, n_patches: usize, patch_size: usize) -> Self {
        Self {
            embed_dim: 192,
            extractor_depth: 4,
            generator_depth: 2,
            n_heads: 6,
            n_classes,
            intermittent_ratio: 0.1,
            n_patches,
            patch_size,
            mlp_ratio: default_mlp_ratio(),
            pe_scale: default_pe_scale(),
            patch_scale_mm: default_patch_scale_mm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(6) {
            return bad(format!("embed_dim {} must be a positive multiple of 6", self.embed_dim));
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!("embed_dim {} not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        if self.generator_depth >= self.extractor_depth {
            return bad(format!(
                "generator_depth {} must be smaller than extractor_depth {}",
                self.generator_depth, self.extractor_depth
            ));
        }
        if !(0.0..1.0).contains(&self.intermittent_ratio) {
            return bad(format!("intermittent_ratio {} outside [0, 1)", self.intermittent_ratio));
        }
        if self.n_classes == 0 || self.n_patches < 2 || self.patch_size == 0 {
            return bad("n_classes, n_patches >= 2 and patch_size must be positive".into());
        }
        if !(self.mlp_ratio > 0.0 && self.pe_scale > 0.0 && self.patch_scale_mm > 0.0) {
            return bad("mlp_ratio, pe_scale and patch_scale_mm must be positive".into());
        }
        Ok(())
    }

    fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    enc1: Linear,
    enc2: Linear,
    /// The second encoder MLP takes `[point ‖ pooled]`; its first layer is
    /// stored as two blocks of rows so the concatenation is never formed.
    enc3_point: ParamId,
    enc3_pooled: ParamId,
    enc3_b: ParamId,
    enc4: Linear,
    extractor: Vec<Block>,
    extractor_ln: Norm,
    direction: Linear,
    generator: Vec<Block>,
    generator_ln: Norm,
    pred1: Linear,
    pred2: Linear,
    cls1: Linear,
    cls2: Linear,
}

/// Model inputs for a batch of tokenized samples, already in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    /// `(n, P, 3)` unit-cube centers.
    pub centers: Tensor,
    /// `(n·P, K, 3)` relative patch coordinates in model units.
    pub patches: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(cfg: &ModelConfig, samples: &[&TokenizedSample], labels: Vec<usize>) -> Result<Self> {
        let (p, k) = (cfg.n_patches, cfg.patch_size);
        if !labels.is_empty() && labels.len() != samples.len() {
            return Err(Error::InvalidArgument(format!("{} labels for {} samples", labels.len(), samples.len())));
        }
        let mut centers = Vec::with_capacity(samples.len() * p * 3);
        let mut patches = Vec::with_capacity(samples.len() * p * k * 3);
        for s in samples {
            if s.centers.len() != p || s.patches.iter().any(|q| q.len() != k) {
                return Err(Error::Shape(format!("sample tokenized with {} patches, model expects {p}x{k}", s.centers.len())));
            }
            for c in s.sequence_centers() {
                centers.extend_from_slice(&c);
            }
            for patch in s.sequence_patches() {
                for q in patch {
                    patches.extend(q.iter().map(|v| v / cfg.patch_scale_mm));
                }
            }
        }
        let n = samples.len();
        Ok(Self {
            n,
            centers: Tensor::new(&[n, p, 3], centers)?,
            patches: Tensor::new(&[n * p, k, 3], patches)?,
            labels,
        })
    }

    /// Next-patch targets: row `(b, i)` holds patch `i + 1`; the last
    /// position of each sample is unsupervised.
    fn shifted_targets(&self, p: usize) -> (Tensor, Vec<bool>) {
        let row = self.patches.len() / (self.n * p).max(1);
        let src = self.patches.data();
        let mut out = vec![0.0; src.len()];
        let mut sup = vec![false; self.n * p];
        for b in 0..self.n {
            for i in 0..p - 1 {
                let dst = (b * p + i) * row;
                let from = (b * p + i + 1) * row;
                out[dst..dst + row].copy_from_slice(&src[from..from + row]);
                sup[b * p + i] = true;
            }
        }
        (Tensor::new(self.patches.shape(), out).expect("same shape"), sup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Next-patch reconstruction, 0.5·CD_L1 + 0.5·CD_L2.
    Pretrain,
    /// CE + 3·(CD_L1 + CD_L2), no intermittent masking.
    Finetune,
}

/// Forward results for a batch.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `(n, P, D)`
    pub latents: Var,
    /// `(n·P, K, 3)` next-patch predictions.
    pub predictions: Option<Var>,
    /// `(n, C)`
    pub logits: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

fn linear<R: Rng>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
    Linear { w: ps.add_linear_weight(format!("{name}.weight"), fan_in, fan_out, rng), b: ps.add_bias(format!("{name}.bias"), fan_out) }
}

fn norm(ps: &mut ParamStore, name: &str, d: usize) -> Norm {
    Norm { gain: ps.add(format!("{name}.gain"), Tensor::filled(&[d], 1.0), false), bias: ps.add_bias(format!("{name}.bias"), d) }
}

fn block<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut R) -> Block {
    Block {
        ln1: norm(ps, &format!("{name}.ln1"), d),
        q: linear(ps, &format!("{name}.attn.q"), d, d, rng),
        k: linear(ps, &format!("{name}.attn.k"), d, d, rng),
        v: linear(ps, &format!("{name}.attn.v"), d, d, rng),
        o: linear(ps, &format!("{name}.attn.out"), d, d, rng),
        ln2: norm(ps, &format!("{name}.ln2"), d),
        fc1: linear(ps, &format!("{name}.mlp.fc1"), d, hidden, rng),
        fc2: linear(ps, &format!("{name}.mlp.fc2"), hidden, d, rng),
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let d = config.embed_dim;
        let h = config.mlp_hidden();
        let mut ps = ParamStore::new();
        let enc1 = linear(&mut ps, "encoder.mlp1", 3, ENC_H1, rng);
        let enc2 = linear(&mut ps, "encoder.mlp2", ENC_H1, ENC_H2, rng);
        // one weight matrix of fan-in 2·ENC_H2, stored as two row blocks
        let bound = 1.0 / ((2 * ENC_H2) as f64).sqrt();
        let mut half = |name: &str, ps: &mut ParamStore| {
            let data = (0..ENC_H2 * d).map(|_| rng.gen_range(-bound..bound)).collect();
            ps.add(name, Tensor::new(&[ENC_H2, d], data).expect("sized"), true)
        };
        let enc3_point = half("encoder.mlp3.weight_point", &mut ps);
        let enc3_pooled = half("encoder.mlp3.weight_pooled", &mut ps);
        let enc3_b = ps.add_bias("encoder.mlp3.bias", d);
        let enc4 = linear(&mut ps, "encoder.mlp4", d, d, rng);
        let extractor = (0..config.extractor_depth).map(|i| block(&mut ps, &format!("extractor.{i}"), d, h, rng)).collect();
        let extractor_ln = norm(&mut ps, "extractor.ln", d);
        let direction = linear(&mut ps, "generator.direction", 3, d, rng);
        let generator = (0..config.generator_depth).map(|i| block(&mut ps, &format!("generator.{i}"), d, h, rng)).collect();
        let generator_ln = norm(&mut ps, "generator.ln", d);
        let pred1 = linear(&mut ps, "head.predict1", d, d, rng);
        let pred2 = linear(&mut ps, "head.predict2", d, config.patch_size * 3, rng);
        let cls1 = linear(&mut ps, "head.class1", 2 * d, d, rng);
        let cls2 = linear(&mut ps, "head.class2", d, config.n_classes, rng);
        let layout = Layout {
            enc1,
            enc2,
            enc3_point,
            enc3_pooled,
            enc3_b,
            enc4,
            extractor,
            extractor_ln,
            direction,
            generator,
            generator_ln,
            pred1,
            pred2,
            cls1,
            cls2,
        };
        Ok(Self { config, params: ps, layout })
    }

    pub fn binder(&self, trainable: bool) -> Binder<'_> {
        Binder::new(&self.params, trainable)
    }

    fn linear(&self, b: &mut Binder, x: Var, l: Linear) -> Result<Var> {
        let w = b.p(l.w)?;
        let bias = b.p(l.b)?;
        let y = b.graph.matmul(x, w)?;
        b.graph.add(y, bias)
    }

    fn norm(&self, b: &mut Binder, x: Var, n: Norm) -> Result<Var> {
        let g = b.p(n.gain)?;
        let beta = b.p(n.bias)?;
        let y = b.graph.layer_norm(x, LN_EPS)?;
        let y = b.graph.mul(y, g)?;
        b.graph.add(y, beta)
    }

    /// Encodes `(N, K, 3)` patches into `(N, D)` tokens.
    pub fn encode_patches(&self, b: &mut Binder, patches: Var) -> Result<Var> {
        let sh = b.graph.shape(patches).to_vec();
        if sh.len() != 3 || sh[1] != self.config.patch_size || sh[2] != 3 {
            return Err(Error::Shape(format!("patches {sh:?}, expected (N, {}, 3)", self.config.patch_size)));
        }
        let (n, d) = (sh[0], self.config.embed_dim);
        let l = &self.layout;
        let h = self.linear(b, patches, l.enc1)?;
        let h = b.graph.relu(h)?;
        let h = self.linear(b, h, l.enc2)?;
        let pooled = b.graph.max(h, 1)?;
        let wp = b.p(l.enc3_point)?;
        let wg = b.p(l.enc3_pooled)?;
        let bias = b.p(l.enc3_b)?;
        let point_part = b.graph.matmul(h, wp)?;
        let pooled_part = b.graph.matmul(pooled, wg)?;
        let pooled_part = b.graph.reshape(pooled_part, &[n, 1, d])?;
        let f = b.graph.add(point_part, pooled_part)?;
        let f = b.graph.add(f, bias)?;
        let f = b.graph.relu(f)?;
        let f = self.linear(b, f, l.enc4)?;
        b.graph.max(f, 1)
    }

    fn block(&self, b: &mut Binder, x: Var, blk: &Block, mask: &Tensor) -> Result<Var> {
        let sh = b.graph.shape(x).to_vec();
        let (n, p, d) = (sh[0], sh[1], sh[2]);
        let heads = self.config.n_heads;
        let dh = d / heads;
        let h = self.norm(b, x, blk.ln1)?;
        let split = |b: &mut Binder, l: Linear| -> Result<Var> {
            let y = self.linear(b, h, l)?;
            let y = b.graph.reshape(y, &[n, p, heads, dh])?;
            b.graph.permute(y, &[0, 2, 1, 3])
        };
        let q = split(b, blk.q)?;
        let k = split(b, blk.k)?;
        let v = split(b, blk.v)?;
        let scores = b.graph.matmul_t(q, k, false, true)?;
        let scores = b.graph.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = b.graph.softmax(scores, Some(mask))?;
        let ctx = b.graph.matmul(att, v)?;
        let ctx = b.graph.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = b.graph.reshape(ctx, &[n, p, d])?;
        let o = self.linear(b, ctx, blk.o)?;
        let x = b.graph.add(x, o)?;
        let h = self.norm(b, x, blk.ln2)?;
        let h = self.linear(b, h, blk.fc1)?;
        let h = b.graph.gelu(h)?;
        let h = self.linear(b, h, blk.fc2)?;
        b.graph.add(x, h)
    }

    /// Tokens `(n, P, D)` plus positional encoding through the extractor.
    pub fn extractor_forward(&self, b: &mut Binder, tokens: Var, centers: &Tensor, mask: &Tensor) -> Result<Var> {
        let pe = sinusoidal_pe(centers, self.config.embed_dim, self.config.pe_scale)?;
        let pe = b.graph.constant(pe)?;
        let mut x = b.graph.add(tokens, pe)?;
        for blk in &self.layout.extractor {
            x = self.block(b, x, blk, mask)?;
        }
        self.norm(b, x, self.layout.extractor_ln)
    }

    pub fn generator_forward(&self, b: &mut Binder, latents: Var, centers: &Tensor, mask: &Tensor) -> Result<Var> {
        let dirs = b.graph.constant(relative_directions(centers)?)?;
        let dirs = self.linear(b, dirs, self.layout.direction)?;
        let mut x = b.graph.add(latents, dirs)?;
        for blk in &self.layout.generator {
            x = self.block(b, x, blk, mask)?;
        }
        self.norm(b, x, self.layout.generator_ln)
    }

    /// `(n, P, D)` → `(n·P, K, 3)`.
    pub fn prediction_head(&self, b: &mut Binder, gen_out: Var) -> Result<Var> {
        let sh = b.graph.shape(gen_out).to_vec();
        let h = self.linear(b, gen_out, self.layout.pred1)?;
        let h = b.graph.relu(h)?;
        let y = self.linear(b, h, self.layout.pred2)?;
        b.graph.reshape(y, &[sh[0] * sh[1], self.config.patch_size, 3])
    }

    /// `(n, P, D)` → `(n, C)`.
    pub fn classification_head(&self, b: &mut Binder, latents: Var) -> Result<Var> {
        let mean = b.graph.mean(latents, 1)?;
        let max = b.graph.max(latents, 1)?;
        let pooled = b.graph.concat(&[mean, max], 1)?;
        let h = self.linear(b, pooled, self.layout.cls1)?;
        let h = b.graph.relu(h)?;
        self.linear(b, h, self.layout.cls2)
    }

    /// Full forward pass under `mask` (`(P,P)` or `(n,1,P,P)`).
    pub fn forward(&self, b: &mut Binder, batch: &Batch, mask: &Tensor, predict: bool, classify: bool) -> Result<Outputs> {
        let (p, d) = (self.config.n_patches, self.config.embed_dim);
        let patches = b.graph.constant(batch.patches.clone())?;
        let tokens = self.encode_patches(b, patches)?;
        let tokens = b.graph.reshape(tokens, &[batch.n, p, d])?;
        let latents = self.extractor_forward(b, tokens, &batch.centers, mask)?;
        let predictions = if predict {
            let g = self.generator_forward(b, latents, &batch.centers, mask)?;
            Some(self.prediction_head(b, g)?)
        } else {
            None
        };
        let logits = if classify { Some(self.classification_head(b, latents)?) } else { None };
        Ok(Outputs { latents, predictions, logits })
    }

    /// Scalar training loss for `batch`. Pretraining draws a fresh dual mask
    /// per sample from `rng`.
    pub fn loss<R: Rng>(&self, b: &mut Binder, batch: &Batch, objective: Objective, rng: &mut R) -> Result<Var> {
        let p = self.config.n_patches;
        let (target, sup) = batch.shifted_targets(p);
        match objective {
            Objective::Pretrain => {
                let mask = batch_dual_mask(batch.n, p, self.config.intermittent_ratio, rng);
                let out = self.forward(b, batch, &mask, true, false)?;
                chamfer_loss(&mut b.graph, out.predictions.expect("requested"), &target, &sup, 0.5, 0.5)
            }
            Objective::Finetune => {
                let mask = dual_mask(p, 0.0, rng);
                let out = self.forward(b, batch, &mask, true, true)?;
                let ce = cross_entropy(&mut b.graph, out.logits.expect("requested"), &batch.labels)?;
                let cd = chamfer_loss(&mut b.graph, out.predictions.expect("requested"), &target, &sup, 1.0, 1.0)?;
                finetune_loss(&mut b.graph, ce, cd)
            }
        }
    }

    /// Class logits, one row per sample, without gradient bookkeeping.
    pub fn logits(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut b = self.binder(false);
        let mask = causal_mask(self.config.n_patches);
        let out = self.forward(&mut b, batch, &mask, false, true)?;
        let t = b.graph.value(out.logits.expect("requested"));
        Ok(t.data().chunks(self.config.n_classes).map(<[f64]>::to_vec).collect())
    }
}

/// `ce + 3·chamfer_term`.
pub fn finetune_loss(g: &mut crate::graph::Graph, ce: Var, chamfer_term: Var) -> Result<Var> {
    let c = g.scale(chamfer_term, 3.0)?;
    g.add(ce, c)
}

/// Sinusoidal encoding of `(.., 3)` unit-cube centers into `(.., D)`:
/// `D/3` interleaved sin/cos channels per axis, concatenated x‖y‖z.
pub fn sinusoidal_pe(centers: &Tensor, d: usize, scale: f64) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(6) {
        return Err(Error::Config(format!("positional encoding width {d} must be a positive multiple of 6")));
    }
    let sh = centers.shape();
    if sh.last() != Some(&3) {
        return Err(Error::Shape(format!("centers {sh:?} must end in 3")));
    }
    let per_axis = d / 3;
    let pairs = per_axis / 2;
    let freqs: Vec<f64> = (0..pairs).map(|j| 10000f64.powf(-(2.0 * j as f64) / per_axis as f64)).collect();
    let mut out = Vec::with_capacity(centers.len() / 3 * d);
    for c in centers.data().chunks_exact(3) {
        for &x in c {
            for &f in &freqs {
                let a = x * scale * f;
                out.push(a.sin());
                out.push(a.cos());
            }
        }
    }
    let mut shape = sh.to_vec();
    *shape.last_mut().expect("nonempty") = d;
    Tensor::new(&shape, out)
}

/// Unit direction from the previous center, `(.., P, 3)` → same shape;
/// zero at position 0 and where consecutive centers coincide.
pub fn relative_directions(centers: &Tensor) -> Result<Tensor> {
    let sh = centers.shape();
    if sh.len() < 2 || sh[sh.len() - 1] != 3 {
        return Err(Error::Shape(format!("centers {sh:?} must be (.., P, 3)")));
    }
    let p = sh[sh.len() - 2];
    let c = centers.data();
    let mut out = vec![0.0; c.len()];
    for (s, chunk) in out.chunks_mut(p * 3).enumerate() {
        let base = s * p * 3;
        for i in 1..p {
            let mut v = [0.0; 3];
            for k in 0..3 {
                v[k] = c[base + i * 3 + k] - c[base + (i - 1) * 3 + k];
            }
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.0 {
                for k in 0..3 {
                    chunk[i * 3 + k] = v[k] / n;
                }
            }
        }
    }
    Tensor::new(sh, out)
}

pub fn causal_mask(p: usize) -> Tensor {
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        for j in i + 1..p {
            m[i * p + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::new(&[p, p], m).expect("sized")
}

/// Causal mask with, in each row `i`, a random `⌊ρ·i⌋` subset of the
/// preceding positions also masked. The diagonal stays visible.
pub fn dual_mask<R: Rng>(p: usize, ratio: f64, rng: &mut R) -> Tensor {
    let mut m = causal_mask(p);
    if ratio > 0.0 {
        let data = m.data_mut();
        for i in 1..p {
            let count = (ratio * i as f64).floor() as usize;
            for j in sample(rng, i, count.min(i)) {
                data[i * p + j] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

/// Independent dual masks stacked as `(n, 1, P, P)`.
pub fn batch_dual_mask<R: Rng>(n: usize, p: usize, ratio: f64, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(n * p * p);
    for _ in 0..n {
        data.extend_from_slice(dual_mask(p, ratio, rng).data());
    }
    Tensor::new(&[n, 1, p, p], data).expect("sized")
}

/// Training-time augmentation: rotation about z by up to ±15°, isotropic
/// scale in [0.9, 1.1] about the centroid, then a point shuffle. Identity
/// when `train` is false.
pub fn train_transforms<R: Rng>(points: &[Point], rng: &mut R, train: bool) -> Vec<Point> {
    if !train || points.is_empty() {
        return points.to_vec();
    }
    let angle = rng.gen_range(-15.0f64..=15.0).to_radians();
    let s = rng.gen_range(0.9..=1.1);
    let mut out = transform_points(points, angle, s);
    use rand::seq::SliceRandom;
    out.shuffle(rng);
    out
}

/// Rotates about the z axis through the centroid and scales about it.
pub fn transform_points(points: &[Point], angle: f64, scale: f64) -> Vec<Point> {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let (sin, cos) = angle.sin_cos();
    points
        .iter()
        .map(|p| {
            let (x, y, z) = (p[0] - c[0], p[1] - c[1], p[2] - c[2]);
            [c[0] + scale * (cos * x - sin * y), c[1] + scale * (sin * x + cos * y), c[2] + scale * z]
        })
        .collect()
}
