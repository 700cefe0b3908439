//! Chamfer reconstruction loss and softmax cross-entropy, registered on the
//! tape as fused scalar ops.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    /// Manhattan distance.
    L1,
    /// Squared Euclidean distance.
    L2,
}

#[inline]
fn point_dist(a: &[f64], b: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs(),
        Norm::L2 => {
            let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
            x * x + y * y + z * z
        }
    }
}

/// Index of the nearest point of `set` (flat xyz triples) to `p`; ties go to
/// the lowest index.
fn nearest(p: &[f64], set: &[f64], norm: Norm) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in set.chunks_exact(3).enumerate() {
        let d = point_dist(p, q, norm);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Symmetric Chamfer distance between two point sets given as flat xyz
/// triples: mean nearest distance from `a` to `b` plus from `b` to `a`.
pub fn chamfer(a: &[f64], b: &[f64], norm: Norm) -> Result<f64> {
    if a.is_empty() || b.is_empty() || !a.len().is_multiple_of(3) || !b.len().is_multiple_of(3) {
        return Err(Error::InvalidArgument("chamfer needs two nonempty xyz sets".into()));
    }
    let fwd: f64 = a.chunks_exact(3).map(|p| nearest(p, b, norm).1).sum();
    let bwd: f64 = b.chunks_exact(3).map(|q| nearest(q, a, norm).1).sum();
    Ok(fwd / (a.len() / 3) as f64 + bwd / (b.len() / 3) as f64)
}

/// Adds `scale · d/da chamfer(a, b)` into `grad`.
fn chamfer_grad(a: &[f64], b: &[f64], norm: Norm, scale: f64, grad: &mut [f64]) {
    let na = (a.len() / 3) as f64;
    let nb = (b.len() / 3) as f64;
    let mut push = |ai: usize, bj: usize, w: f64| {
        for k in 0..3 {
            let diff = a[ai * 3 + k] - b[bj * 3 + k];
            let d = match norm {
                Norm::L1 => {
                    if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Norm::L2 => 2.0 * diff,
            };
            grad[ai * 3 + k] += w * d;
        }
    };
    for (i, p) in a.chunks_exact(3).enumerate() {
        let (j, _) = nearest(p, b, norm);
        push(i, j, scale / na);
    }
    for (j, q) in b.chunks_exact(3).enumerate() {
        let (i, _) = nearest(q, a, norm);
        push(i, j, scale / nb);
    }
}

/// Weighted Chamfer loss between predicted patches `pred` (`[n, k, 3]`, on
/// the tape) and constant `target` patches (`[n, k', 3]`), averaged over the
/// rows where `supervised` is true:
/// `mean_rows(w_l1 · CD_L1 + w_l2 · CD_L2)`.
pub fn chamfer_loss(g: &mut Graph, pred: Var, target: &Tensor, supervised: &[bool], w_l1: f64, w_l2: f64) -> Result<Var> {
    let ps = g.shape(pred).to_vec();
    let ts = target.shape();
    if ps.len() != 3 || ts.len() != 3 || ps[2] != 3 || ts[2] != 3 || ps[0] != ts[0] || supervised.len() != ps[0] {
        return Err(Error::Shape(format!("chamfer_loss: pred {ps:?}, target {ts:?}, mask {}", supervised.len())));
    }
    let rows = supervised.iter().filter(|&&s| s).count();
    if rows == 0 {
        return Err(Error::InvalidArgument("chamfer_loss with no supervised rows".into()));
    }
    let (pk, tk) = (ps[1] * 3, ts[1] * 3);
    let pv = g.value(pred).data();
    let tv = target.data();
    let mut total = 0.0;
    let mut grad = vec![0.0; pv.len()];
    let inv = 1.0 / rows as f64;
    for (r, _) in supervised.iter().enumerate().filter(|(_, &s)| s) {
        let a = &pv[r * pk..(r + 1) * pk];
        let b = &tv[r * tk..(r + 1) * tk];
        let gr = &mut grad[r * pk..(r + 1) * pk];
        if w_l1 != 0.0 {
            total += w_l1 * chamfer(a, b, Norm::L1)?;
            chamfer_grad(a, b, Norm::L1, w_l1 * inv, gr);
        }
        if w_l2 != 0.0 {
            total += w_l2 * chamfer(a, b, Norm::L2)?;
            chamfer_grad(a, b, Norm::L2, w_l2 * inv, gr);
        }
    }
    g.fused_scalar(pred, total * inv, grad, "chamfer")
}

/// Mean softmax cross-entropy of `logits` (`[n, classes]`) against integer
/// labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let sh = g.shape(logits).to_vec();
    if sh.len() != 2 || sh[0] != labels.len() {
        return Err(Error::Shape(format!("cross_entropy: logits {sh:?} with {} labels", labels.len())));
    }
    let c = sh[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {c})")));
    }
    let lv = g.value(logits).data();
    let n = labels.len() as f64;
    let mut grad = vec![0.0; lv.len()];
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &lv[r * c..(r + 1) * c];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        total += lse - row[label];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grad[r * c + j] = (p - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    g.fused_scalar(logits, total / n, grad, "cross_entropy")
}
