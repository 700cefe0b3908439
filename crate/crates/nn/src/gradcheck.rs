//! Central finite-difference checks of every graph op and both model heads.
//!
//! Each case builds a scalar `Σ w ⊙ f(inputs)` with fixed random `w`, then
//! compares the taped gradient of every input element with
//! `(L(x + h) − L(x − h)) / 2h`. The relative error of one element is
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::loss::{chamfer_loss, cross_entropy};
use crate::model::{Model, ModelConfig};
use crate::params::Binder;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const DENOM_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: String,
    pub cases: usize,
    pub max_rel_error: f64,
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

fn weighted(g: &mut Graph, out: Var, w: &Tensor) -> Result<Var> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let wv = g.constant(w.clone())?;
    let p = g.mul(out, wv)?;
    g.sum(p)
}

fn eval(inputs: &[Tensor], build: &Build, w: &mut Option<Tensor>, rng: &mut ChaCha8Rng) -> Result<(Graph, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    if w.is_none() {
        let sh = g.shape(out).to_vec();
        *w = Some(rand_t(rng, &sh));
    }
    let loss = weighted(&mut g, out, w.as_ref().expect("set"))?;
    Ok((g, vars, loss))
}

/// Max relative error over every element of every input.
pub fn check(inputs: Vec<Tensor>, build: Build, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut w = None;
    let (mut g, vars, loss) = eval(&inputs, &build, &mut w, rng)?;
    g.backward(loss)?;
    let value = |probe: &[Tensor], w: &mut Option<Tensor>, rng: &mut ChaCha8Rng| -> Result<f64> {
        let (g, _, l) = eval(probe, &build, w, rng)?;
        Ok(g.value(l).item())
    };
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()])).collect();
    let mut worst = 0.0f64;
    let mut probe = inputs.clone();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let x = t.data()[j];
            probe[i].data_mut()[j] = x + STEP;
            let lp = value(&probe, &mut w, rng)?;
            probe[i].data_mut()[j] = x - STEP;
            let lm = value(&probe, &mut w, rng)?;
            probe[i].data_mut()[j] = x;
            worst = worst.max(rel(analytic[i][j], (lp - lm) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

fn dims(rng: &mut ChaCha8Rng, rank: std::ops::RangeInclusive<usize>, lo: usize, hi: usize) -> Vec<usize> {
    let n = rng.gen_range(rank);
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// Values at least `gap` away from zero, for ops with a kink there.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("sized")
}

/// Distinct values in random order with pairwise gaps of at least `1/n`,
/// so argmax never changes under a finite-difference step.
fn rand_distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| (i as f64 + rng.gen_range(0.2..0.8)) / n as f64 * 2.0 - 1.0).collect();
    data.shuffle(rng);
    Tensor::new(shape, data).expect("sized")
}

/// Drops a suffix of leading dims so `small` broadcasts into `big`, then
/// sets random dims to 1.
fn broadcastable(rng: &mut ChaCha8Rng, big: &[usize]) -> Vec<usize> {
    let keep = rng.gen_range(1..=big.len());
    big[big.len() - keep..].iter().map(|&d| if rng.gen_bool(0.3) { 1 } else { d }).collect()
}

type Case = (Vec<Tensor>, Build);

fn case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    match op {
        "matmul" => {
            let (ta, tb) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
            let lead = dims(rng, 0..=2, 1, 3);
            let (m, k, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
            let mut ash = lead.clone();
            ash.extend(if ta { [k, m] } else { [m, k] });
            let shared = rng.gen_bool(0.5);
            let mut bsh = if shared { Vec::new() } else { lead };
            bsh.extend(if tb { [n, k] } else { [k, n] });
            (vec![rand_t(rng, &ash), rand_t(rng, &bsh)], Box::new(move |g: &mut Graph, v: &[Var]| g.matmul_t(v[0], v[1], ta, tb)))
        }
        "add" | "mul" => {
            let big = dims(rng, 1..=4, 1, 4);
            let small = broadcastable(rng, &big);
            let is_add = op == "add";
            (
                vec![rand_t(rng, &big), rand_t(rng, &small)],
                Box::new(move |g: &mut Graph, v: &[Var]| if is_add { g.add(v[0], v[1]) } else { g.mul(v[0], v[1]) }),
            )
        }
        "scale" => {
            let s = rng.gen_range(-3.0..3.0);
            let sh = dims(rng, 1..=3, 1, 5);
            (vec![rand_t(rng, &sh)], Box::new(move |g: &mut Graph, v: &[Var]| g.scale(v[0], s)))
        }
        "relu" => {
            let sh = dims(rng, 1..=3, 1, 5);
            (vec![rand_away_from_zero(rng, &sh, 1e-3)], Box::new(|g: &mut Graph, v: &[Var]| g.relu(v[0])))
        }
        "gelu" => {
            let sh = dims(rng, 1..=3, 1, 5);
            let t = Tensor::new(&sh, rand_t(rng, &sh).data().iter().map(|x| x * 3.0).collect()).expect("sized");
            (vec![t], Box::new(|g: &mut Graph, v: &[Var]| g.gelu(v[0])))
        }
        "softmax" => {
            let sh = dims(rng, 1..=3, 1, 6);
            let last = *sh.last().expect("nonempty");
            // mask some entries of each row except the first
            let mask = if rng.gen_bool(0.5) && last > 1 {
                let data = (0..last).map(|j| if j > 0 && rng.gen_bool(0.3) { f64::NEG_INFINITY } else { 0.0 }).collect();
                Some(Tensor::new(&[last], data).expect("sized"))
            } else {
                None
            };
            (vec![rand_t(rng, &sh)], Box::new(move |g: &mut Graph, v: &[Var]| g.softmax(v[0], mask.as_ref())))
        }
        "layer_norm" => {
            let mut sh = dims(rng, 0..=2, 1, 4);
            sh.push(rng.gen_range(2..=8));
            (vec![rand_t(rng, &sh)], Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], 1e-5)))
        }
        "embedding" => {
            let (vocab, dim) = (rng.gen_range(1..=6), rng.gen_range(1..=5));
            let idx: Vec<usize> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(0..vocab)).collect();
            (vec![rand_t(rng, &[vocab, dim])], Box::new(move |g: &mut Graph, v: &[Var]| g.embedding(v[0], &idx)))
        }
        "concat" => {
            let base = dims(rng, 1..=3, 1, 4);
            let axis = rng.gen_range(0..base.len());
            let parts = rng.gen_range(1..=3);
            let inputs = (0..parts)
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = rng.gen_range(1..=3);
                    rand_t(rng, &s)
                })
                .collect();
            (inputs, Box::new(move |g: &mut Graph, v: &[Var]| g.concat(v, axis)))
        }
        "mean" | "max" => {
            let sh = dims(rng, 1..=3, 1, 5);
            let axis = rng.gen_range(0..sh.len());
            let is_mean = op == "mean";
            (
                vec![rand_distinct(rng, &sh)],
                Box::new(move |g: &mut Graph, v: &[Var]| if is_mean { g.mean(v[0], axis) } else { g.max(v[0], axis) }),
            )
        }
        "permute" => {
            let sh = dims(rng, 1..=4, 1, 4);
            let mut perm: Vec<usize> = (0..sh.len()).collect();
            perm.shuffle(rng);
            (vec![rand_t(rng, &sh)], Box::new(move |g: &mut Graph, v: &[Var]| g.permute(v[0], &perm)))
        }
        "reshape" => {
            let sh = dims(rng, 1..=3, 1, 4);
            let n: usize = sh.iter().product();
            (vec![rand_t(rng, &sh)], Box::new(move |g: &mut Graph, v: &[Var]| g.reshape(v[0], &[n])))
        }
        "sum" => {
            let sh = dims(rng, 0..=3, 1, 4);
            (vec![rand_t(rng, &sh)], Box::new(|g: &mut Graph, v: &[Var]| g.sum(v[0])))
        }
        "chamfer" => {
            let (n, k, kt) = (rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5));
            // coordinates on a lattice offset by distinct fractions keep
            // nearest neighbours unique and L1 terms away from their kink
            let pred = rand_distinct(rng, &[n, k, 3]);
            let target = Tensor::new(&[n, kt, 3], rand_distinct(rng, &[n * kt * 3]).data().iter().map(|v| v * 1.37 + 0.011).collect()).expect("sized");
            let sup: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.7)).collect();
            let (w1, w2) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
            (vec![pred], Box::new(move |g: &mut Graph, v: &[Var]| chamfer_loss(g, v[0], &target, &sup, w1, w2)))
        }
        "cross_entropy" => {
            let (n, c) = (rng.gen_range(1..=5), rng.gen_range(2..=6));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let logits = Tensor::new(&[n, c], rand_t(rng, &[n, c]).data().iter().map(|v| v * 3.0).collect()).expect("sized");
            (vec![logits], Box::new(move |g: &mut Graph, v: &[Var]| cross_entropy(g, v[0], &labels)))
        }
        other => panic!("no gradient case for {other}"),
    }
}

pub const OPS: &[&str] = &[
    "matmul",
    "add",
    "mul",
    "scale",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "embedding",
    "concat",
    "mean",
    "max",
    "permute",
    "reshape",
    "sum",
    "chamfer",
    "cross_entropy",
];

pub fn check_op(op: &str, cases: usize, seed: u64) -> Result<OpReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (inputs, build) = case(op, &mut rng);
        worst = worst.max(check(inputs, build, &mut rng)?);
    }
    Ok(OpReport { op: op.to_string(), cases, max_rel_error: worst })
}

fn random_tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = rng.gen_range(1..=2);
    let d = 6 * rng.gen_range(1..=2) * heads;
    ModelConfig {
        embed_dim: d,
        extractor_depth: 2,
        generator_depth: 1,
        n_heads: heads,
        n_classes: rng.gen_range(2..=4),
        intermittent_ratio: 0.0,
        n_patches: rng.gen_range(2..=4),
        patch_size: rng.gen_range(1..=3),
        mlp_ratio: 2.0,
        pe_scale: 100.0,
        patch_scale_mm: 1.0,
    }
}

/// Finite-difference check of one head with respect to its input latents
/// and every parameter it owns.
fn check_head(classify: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = random_tiny_config(rng);
    let mut model = Model::new(cfg.clone(), rng.gen())?;
    let n = rng.gen_range(1..=3);
    // pooling inputs need distinct values to keep max stable
    let latents = rand_distinct(rng, &[n, cfg.n_patches, cfg.embed_dim]);
    let prefix = if classify { "head.class" } else { "head.predict" };
    let head_ids: Vec<_> = model.params.ids().filter(|&id| model.params.name(id).starts_with(prefix)).collect();
    let mut w: Option<Tensor> = None;
    let run = |model: &Model, lat: &Tensor, w: &mut Option<Tensor>, rng: &mut ChaCha8Rng, back: bool| -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
        let mut b: Binder = model.binder(true);
        let x = b.graph.input(lat.clone())?;
        let out = if classify { model.classification_head(&mut b, x)? } else { model.prediction_head(&mut b, x)? };
        if w.is_none() {
            let sh = b.graph.shape(out).to_vec();
            *w = Some(rand_t(rng, &sh));
        }
        let loss = weighted(&mut b.graph, out, w.as_ref().expect("set"))?;
        let v = b.graph.value(loss).item();
        if !back {
            return Ok((v, Vec::new(), Vec::new()));
        }
        b.graph.backward(loss)?;
        let gx = b.graph.grad(x).map(<[f64]>::to_vec).unwrap_or_default();
        Ok((v, b.grads(), gx))
    };
    let (_, pgrads, xgrad) = run(&model, &latents, &mut w, rng, true)?;
    let mut worst = 0.0f64;
    let mut lat = latents.clone();
    for j in 0..lat.len() {
        let x = lat.data()[j];
        lat.data_mut()[j] = x + STEP;
        let lp = run(&model, &lat, &mut w, rng, false)?.0;
        lat.data_mut()[j] = x - STEP;
        let lm = run(&model, &lat, &mut w, rng, false)?.0;
        lat.data_mut()[j] = x;
        worst = worst.max(rel(xgrad[j], (lp - lm) / (2.0 * STEP)));
    }
    for id in head_ids {
        for j in 0..model.params.get(id).len() {
            let x = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = x + STEP;
            let lp = run(&model, &latents, &mut w, rng, false)?.0;
            model.params.get_mut(id).data_mut()[j] = x - STEP;
            let lm = run(&model, &latents, &mut w, rng, false)?.0;
            model.params.get_mut(id).data_mut()[j] = x;
            worst = worst.max(rel(pgrads[id.0][j], (lp - lm) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

pub fn check_heads(cases: usize, seed: u64) -> Result<Vec<OpReport>> {
    let mut out = Vec::new();
    for (name, classify) in [("prediction_head", false), ("classification_head", true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            worst = worst.max(check_head(classify, &mut rng)?);
        }
        out.push(OpReport { op: name.to_string(), cases, max_rel_error: worst });
    }
    Ok(out)
}

/// Every op plus both heads.
pub fn full_suite(cases: usize, seed: u64) -> Result<Vec<OpReport>> {
    let mut out = OPS.iter().enumerate().map(|(i, op)| check_op(op, cases, seed + i as u64)).collect::<Result<Vec<_>>>()?;
    out.extend(check_heads(cases, seed)?);
    Ok(out)
}
