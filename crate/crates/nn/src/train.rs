//! Data-parallel gradient computation over batch shards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{Batch, Model, Objective};
use crate::optim::AdamW;

/// Loss and parameter gradients for one batch split into `shards`. Each
/// shard gets its own graph and RNG stream (`seed + shard index`); shard
/// losses are weighted by shard size so the result equals the full-batch
/// mean. Gradients are summed in shard order, so the result does not depend
/// on thread scheduling.
pub fn batch_gradients(model: &Model, shards: &[Batch], objective: Objective, seed: u64) -> Result<(f64, Vec<Vec<f64>>)> {
    let total: usize = shards.iter().map(|s| s.n).sum();
    let parts: Vec<Result<(f64, Vec<Vec<f64>>)>> = shards
        .par_iter()
        .enumerate()
        .map(|(i, shard)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut b = model.binder(true);
            let loss = model.loss(&mut b, shard, objective, &mut rng)?;
            let loss = b.graph.scale(loss, shard.n as f64 / total as f64)?;
            b.graph.backward(loss)?;
            Ok((b.graph.value(loss).item(), b.grads()))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Vec<f64>>> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
    }
    let grads = grads.unwrap_or_else(|| model.params.ids().map(|id| vec![0.0; model.params.get(id).len()]).collect());
    Ok((loss, grads))
}

/// One optimizer step; returns the batch loss before the update.
pub fn train_step(model: &mut Model, opt: &mut AdamW, shards: &[Batch], objective: Objective, lr: f64, seed: u64) -> Result<f64> {
    let (loss, grads) = batch_gradients(model, shards, objective, seed)?;
    opt.update(&mut model.params, &grads, lr);
    Ok(loss)
}
