//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation as a node holding its output
//! value. [`Graph::backward`] walks the tape in reverse, applying each op's
//! vector-Jacobian product. Graphs are single-threaded; data-parallel
//! training builds one graph per shard and sums parameter gradients.

use crate::error::{Error, Result};
use crate::tensor::{broadcast_strides, for_each_broadcast_row, gemm, strides, Tensor, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    Relu { a: Var },
    Gelu { a: Var },
    /// softmax over the last axis; the node value is the probability table
    Softmax { a: Var },
    /// normalization over the last axis; the node value is the normalized output
    LayerNorm { a: Var, rstd: Vec<f64> },
    Gather { table: Var, idx: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Mean { a: Var, axis: usize },
    Max { a: Var, arg: Vec<usize> },
    Permute { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    Sum { a: Var },
    /// scalar loss with its gradient w.r.t. `a` precomputed during forward
    Fused { a: Var, local_grad: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool, name: &str) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: name.to_string(), index: i });
        }
        self.nodes.push(Node { value, grad: None, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Input that records a gradient (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "input")
    }

    /// Parameter leaf tagged with its store id.
    pub fn param(&mut self, id: usize, t: Tensor) -> Result<Var> {
        self.push(t, Op::Param(id), true, "param")
    }

    /// Gradients of every parameter leaf, as `(store id, gradient)`.
    pub fn param_grads(&self) -> Vec<(usize, &[f64])> {
        self.nodes
            .iter()
            .filter_map(|n| match (&n.op, &n.grad) {
                (Op::Param(id), Some(g)) => Some((*id, g.as_slice())),
                _ => None,
            })
            .collect()
    }

    /// Batched matrix product of `a` (`[.., m, k]`, or `[.., k, m]` when
    /// `ta`) with `b`, which is either a shared 2-D matrix or carries the same
    /// leading dims as `a`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::Shape(format!("matmul: {ash:?}{} x {bsh:?}{}", if ta { "ᵀ" } else { "" }, if tb { "ᵀ" } else { "" }));
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(bad());
        }
        let (ra, ca) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (rb, cb) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if tb { (cb, rb) } else { (rb, cb) };
        let batch_dims = &ash[..ash.len() - 2];
        let shared = bsh.len() == 2;
        if k != kb || (!shared && &bsh[..bsh.len() - 2] != batch_dims) {
            return Err(bad());
        }
        let batch: usize = batch_dims.iter().product();
        let mut out_shape = batch_dims.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            if shared && !ta {
                gemm(batch * m, k, n, av, View::rm(0, ca, false), bv, View::rm(0, cb, tb), 0.0, &mut out, View::rm(0, n, false));
            } else {
                for i in 0..batch {
                    let boff = if shared { 0 } else { i * rb * cb };
                    gemm(m, k, n, av, View::rm(i * ra * ca, ca, ta), bv, View::rm(boff, cb, tb), 0.0, &mut out, View::rm(i * m * n, n, false));
                }
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(&out_shape, out)?, Op::MatMul { a, b, ta, tb }, tracked, "matmul")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ash, bsh) = (self.shape(a), self.shape(b));
        let bs = broadcast_strides(ash, bsh).ok_or_else(|| Error::Shape(format!("{name}: {ash:?} with {bsh:?}")))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; av.len()];
        for_each_broadcast_row(ash, &bs, |o, bo, st, len| {
            for j in 0..len {
                out[o + j] = f(av[o + j], bv[bo + j * st]);
            }
        });
        Tensor::new(ash, out)
    }

    /// Elementwise `a + b`, with `b` broadcast into `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(out, Op::Add { a, b }, tracked, "add")
    }

    /// Elementwise `a * b`, with `b` broadcast into `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(out, Op::Mul { a, b }, tracked, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|x| x * s).collect())?;
        let tracked = self.tracked(a);
        self.push(out, Op::Scale { a, s }, tracked, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&x| x.max(0.0)).collect())?;
        let tracked = self.tracked(a);
        self.push(out, Op::Relu { a }, tracked, "relu")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&x| gelu(x)).collect())?;
        let tracked = self.tracked(a);
        self.push(out, Op::Gelu { a }, tracked, "gelu")
    }

    /// Softmax over the last axis after adding an optional constant mask
    /// (broadcast into `a`). Mask entries of `-inf` exclude a position.
    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let ash = self.shape(a).to_vec();
        let mut x = self.value(a).data().to_vec();
        if let Some(m) = mask {
            let bs = broadcast_strides(&ash, m.shape())
                .ok_or_else(|| Error::Shape(format!("softmax mask {:?} into {ash:?}", m.shape())))?;
            let md = m.data();
            for_each_broadcast_row(&ash, &bs, |o, bo, st, len| {
                for j in 0..len {
                    x[o + j] += md[bo + j * st];
                }
            });
        }
        let last = *ash.last().ok_or_else(|| Error::Shape("softmax of a scalar".into()))?;
        for row in x.chunks_mut(last) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(&ash, x)?, Op::Softmax { a }, tracked, "softmax")
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let last = *t.shape().last().ok_or_else(|| Error::Shape("layer_norm of a scalar".into()))?;
        let mut out = t.data().to_vec();
        let mut rstd = Vec::with_capacity(out.len() / last.max(1));
        for row in out.chunks_mut(last) {
            let mean = row.iter().sum::<f64>() / last as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let shape = t.shape().to_vec();
        let tracked = self.tracked(a);
        self.push(Tensor::new(&shape, out)?, Op::LayerNorm { a, rstd }, tracked, "layer_norm")
    }

    /// Row lookup in a `(vocab, dim)` table.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let sh = self.shape(table).to_vec();
        if sh.len() != 2 {
            return Err(Error::Shape(format!("embedding table must be 2-D, got {sh:?}")));
        }
        let (vocab, dim) = (sh[0], sh[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vocab) {
            return Err(Error::Shape(format!("embedding index {bad} >= vocab {vocab}")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let tracked = self.tracked(table);
        self.push(Tensor::new(&[idx.len(), dim], out)?, Op::Gather { table, idx: idx.to_vec() }, tracked, "embedding")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(Error::Shape(format!("concat: {first:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, tracked, "concat")
    }

    fn reduce_dims(&self, a: Var, axis: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
        let sh = self.shape(a);
        if axis >= sh.len() {
            return Err(Error::Shape(format!("reduce axis {axis} out of range for {sh:?}")));
        }
        let outer = sh[..axis].iter().product();
        let inner = sh[axis + 1..].iter().product();
        let mut out_shape = sh.to_vec();
        out_shape.remove(axis);
        Ok((outer, sh[axis], inner, out_shape))
    }

    /// Mean over `axis`, which is removed.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner, shape) = self.reduce_dims(a, axis)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for v in &mut out {
            *v /= len as f64;
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(&shape, out)?, Op::Mean { a, axis }, tracked, "mean")
    }

    /// Max over `axis`, which is removed. Ties route the gradient to the
    /// first maximal element.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner, shape) = self.reduce_dims(a, axis)?;
        let x = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let v = x[base + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = base + i;
                    }
                }
            }
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(&shape, out)?, Op::Max { a, arg }, tracked, "max")
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sh = self.shape(a).to_vec();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..sh.len()).collect::<Vec<_>>() {
            return Err(Error::Shape(format!("permute {perm:?} of {sh:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| sh[p]).collect();
        let out = permute_data(self.value(a).data(), &sh, perm);
        let tracked = self.tracked(a);
        self.push(Tensor::new(&out_shape, out)?, Op::Permute { a, perm: perm.to_vec() }, tracked, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).len();
        if n < 2 {
            return Err(Error::Shape("transpose needs >= 2 dims".into()));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 1, n - 2);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let tracked = self.tracked(a);
        self.push(t, Op::Reshape { a }, tracked, "reshape")
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, tracked, "sum")
    }

    /// Registers a scalar computed outside the tape together with its
    /// gradient with respect to `a`.
    pub(crate) fn fused_scalar(&mut self, a: Var, value: f64, local_grad: Vec<f64>, name: &str) -> Result<Var> {
        debug_assert_eq!(local_grad.len(), self.value(a).len());
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(value), Op::Fused { a, local_grad }, tracked, name)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.apply_vjp(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[f64])) {
        if !self.tracked(v) {
            return;
        }
        let mut buf = self.nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(&mut buf, self.nodes[v.0].value.data());
        self.nodes[v.0].grad = Some(buf);
    }

    fn apply_vjp(&mut self, i: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, ta, tb } => self.vjp_matmul(*a, *b, *ta, *tb, g),
            Op::Add { a, b } => {
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let ash = self.shape(*a).to_vec();
                let bs = broadcast_strides(&ash, self.shape(*b)).unwrap();
                self.accumulate(*b, |gb, _| {
                    for_each_broadcast_row(&ash, &bs, |o, bo, st, len| {
                        for j in 0..len {
                            gb[bo + j * st] += g[o + j];
                        }
                    })
                });
            }
            Op::Mul { a, b } => {
                let ash = self.shape(*a).to_vec();
                let bs = broadcast_strides(&ash, self.shape(*b)).unwrap();
                if self.tracked(*a) {
                    let mut ga = self.take_grad(*a);
                    let bval = self.nodes[b.0].value.data();
                    for_each_broadcast_row(&ash, &bs, |o, bo, st, len| {
                        for j in 0..len {
                            ga[o + j] += g[o + j] * bval[bo + j * st];
                        }
                    });
                    self.nodes[a.0].grad = Some(ga);
                }
                if self.tracked(*b) {
                    let mut gb = self.take_grad(*b);
                    let aval = self.nodes[a.0].value.data();
                    for_each_broadcast_row(&ash, &bs, |o, bo, st, len| {
                        for j in 0..len {
                            gb[bo + j * st] += g[o + j] * aval[o + j];
                        }
                    });
                    self.nodes[b.0].grad = Some(gb);
                }
            }
            Op::Scale { a, s } => self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            Op::Relu { a } => self.accumulate(*a, |ga, x| {
                for ((d, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *d += gi;
                    }
                }
            }),
            Op::Gelu { a } => self.accumulate(*a, |ga, x| {
                for ((d, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    *d += gi * gelu_grad(xi);
                }
            }),
            Op::Softmax { a } => {
                let y = self.nodes[i].value.data().to_vec();
                let last = *self.nodes[i].value.shape().last().unwrap();
                self.accumulate(*a, |ga, _| {
                    for ((gr, yr), dr) in g.chunks(last).zip(y.chunks(last)).zip(ga.chunks_mut(last)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..last {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, rstd } => {
                let y = self.nodes[i].value.data().to_vec();
                let last = *self.nodes[i].value.shape().last().unwrap();
                self.accumulate(*a, |ga, _| {
                    for (r, ((gr, yr), dr)) in g.chunks(last).zip(y.chunks(last)).zip(ga.chunks_mut(last)).enumerate() {
                        let n = last as f64;
                        let mg = gr.iter().sum::<f64>() / n;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..last {
                            dr[j] += rstd[r] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                });
            }
            Op::Gather { table, idx } => {
                let dim = self.shape(*table)[1];
                self.accumulate(*table, |gt, _| {
                    for (row, &k) in idx.iter().enumerate() {
                        for j in 0..dim {
                            gt[k * dim + j] += g[row * dim + j];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let shape = self.nodes[i].value.shape().to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    self.accumulate(p, |gp, _| {
                        for o in 0..outer {
                            for j in 0..len {
                                gp[o * len + j] += g[o * total + start + j];
                            }
                        }
                    });
                    start += len;
                }
            }
            Op::Mean { a, axis } => {
                let (outer, len, inner, _) = self.reduce_dims(*a, *axis).unwrap();
                let w = 1.0 / len as f64;
                self.accumulate(*a, |ga, _| {
                    for o in 0..outer {
                        for l in 0..len {
                            for k in 0..inner {
                                ga[(o * len + l) * inner + k] += w * g[o * inner + k];
                            }
                        }
                    }
                });
            }
            Op::Max { a, arg, .. } => self.accumulate(*a, |ga, _| {
                for (&src, &gi) in arg.iter().zip(g) {
                    ga[src] += gi;
                }
            }),
            Op::Permute { a, perm } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let mut inverse = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inverse[p] = k;
                }
                let back = permute_data(g, &out_shape, &inverse);
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(&back).for_each(|(x, y)| *x += y));
            }
            Op::Reshape { a } => self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Sum { a } => self.accumulate(*a, |ga, _| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Fused { a, local_grad } => {
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(local_grad).for_each(|(x, y)| *x += g[0] * y))
            }
        }
    }

    fn vjp_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool, g: &[f64]) {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        let (ra, ca) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (rb, cb) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let n = if tb { rb } else { cb };
        let batch: usize = ash[..ash.len() - 2].iter().product();
        let shared = bsh.len() == 2;

        if self.tracked(a) {
            // d op(A) = G · op(B)ᵀ
            let mut ga = self.take_grad(a);
            let bv = self.nodes[b.0].value.data();
            if shared && !ta {
                gemm(batch * m, n, k, g, View::rm(0, n, false), bv, View::rm(0, cb, tb).t(), 1.0, &mut ga, View::rm(0, ca, false));
            } else {
                for i in 0..batch {
                    let boff = if shared { 0 } else { i * rb * cb };
                    gemm(m, n, k, g, View::rm(i * m * n, n, false), bv, View::rm(boff, cb, tb).t(), 1.0, &mut ga, View::rm(i * ra * ca, ca, ta));
                }
            }
            self.nodes[a.0].grad = Some(ga);
        }
        if self.tracked(b) {
            // d op(B) = op(A)ᵀ · G
            let mut gb = self.take_grad(b);
            let av = self.nodes[a.0].value.data();
            if shared && !ta {
                gemm(k, batch * m, n, av, View::rm(0, ca, false).t(), g, View::rm(0, n, false), 1.0, &mut gb, View::rm(0, cb, tb));
            } else {
                for i in 0..batch {
                    let boff = if shared { 0 } else { i * rb * cb };
                    gemm(k, m, n, av, View::rm(i * ra * ca, ca, ta).t(), g, View::rm(i * m * n, n, false), 1.0, &mut gb, View::rm(boff, cb, tb));
                }
            }
            self.nodes[b.0].grad = Some(gb);
        }
    }

    fn take_grad(&mut self, v: Var) -> Vec<f64> {
        let n = self.nodes[v.0].value.len();
        self.nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; n])
    }
}

fn permute_data(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(x[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
