use crate::error::{Error, Result};

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Checks that `small` broadcasts into `big` (right-aligned, each dim equal
/// or 1) and returns `small`'s strides aligned to `big`'s dims, zero where
/// broadcast.
pub(crate) fn broadcast_strides(big: &[usize], small: &[usize]) -> Option<Vec<usize>> {
    if small.len() > big.len() {
        return None;
    }
    let pad = big.len() - small.len();
    let st = strides(small);
    let mut out = vec![0; big.len()];
    for (i, &d) in small.iter().enumerate() {
        let b = big[pad + i];
        if d == b {
            out[pad + i] = if d == 1 { 0 } else { st[i] };
        } else if d != 1 {
            return None;
        }
    }
    Some(out)
}

/// Calls `f(out_offset, small_offset, small_inner_stride, len)` for every
/// last-axis row of `big`.
pub(crate) fn for_each_broadcast_row(big: &[usize], bstrides: &[usize], mut f: impl FnMut(usize, usize, usize, usize)) {
    if big.is_empty() {
        f(0, 0, 0, 1);
        return;
    }
    let nd = big.len();
    let inner = big[nd - 1];
    let inner_stride = bstrides[nd - 1];
    let rows: usize = big[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd - 1];
    let mut boff = 0usize;
    for r in 0..rows {
        f(r * inner, boff, inner_stride, inner);
        // advance the multi-index over leading dims
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            boff += bstrides[d];
            if idx[d] < big[d] {
                break;
            }
            boff -= bstrides[d] * big[d];
            idx[d] = 0;
        }
    }
}

/// Strided view of a matrix inside a flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub off: usize,
    pub rs: isize,
    pub cs: isize,
}

impl View {
    /// Row-major `(rows, cols)` matrix, optionally viewed transposed.
    pub fn rm(off: usize, cols: usize, transposed: bool) -> Self {
        if transposed {
            Self { off, rs: 1, cs: cols as isize }
        } else {
            Self { off, rs: cols as isize, cs: 1 }
        }
    }

    pub fn t(self) -> Self {
        Self { off: self.off, rs: self.cs, cs: self.rs }
    }
}

/// c = a·b + beta·c for an (m,k)·(k,n) product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |v: View, r: usize, c: usize| -> usize {
        if r == 0 || c == 0 {
            v.off
        } else {
            v.off + (r - 1) * v.rs as usize + (c - 1) * v.cs as usize
        }
    };
    assert!(span(av, m, k) < a.len().max(1) || k == 0);
    assert!(span(bv, k, n) < b.len().max(1) || k == 0);
    assert!(span(cv, m, n) < c.len());
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.off),
            av.rs,
            av.cs,
            b.as_ptr().add(bv.off),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs,
            cv.cs,
        );
    }
}
