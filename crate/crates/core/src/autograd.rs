//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients for every node that transitively
//! depends on a leaf created with [`Graph::input`].

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRows(Var, Var),
    Silu(Var),
    Softplus(Var),
    Square(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        kernel: usize,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Cosine {
        a: Var,
        b: Var,
        na: f64,
        nb: f64,
    },
    LogSumExp(Var),
    Stack(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        s => panic!("expected a 2-d tensor, got {s:?}"),
    }
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    match t.shape() {
        [c, h, w] => (*c, *h, *w),
        s => panic!("expected a 3-d tensor, got {s:?}"),
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    /// Adds the single row `b` (`1 x d` or `d`) to every row of `a` (`n x d`).
    pub fn add_rows(&mut self, a: Var, b: Var) -> Var {
        let (n, d) = dims2(self.value(a));
        assert_eq!(self.value(b).len(), d, "row broadcast width mismatch");
        let mut out = self.value(a).clone();
        let row = self.value(b).data().to_vec();
        for r in 0..n {
            for (o, x) in out.data_mut()[r * d..(r + 1) * d].iter_mut().zip(&row) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::AddRows(a, b), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    /// 2-d convolution of a `C x H x W` input with `O x C x k x k` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (c, h, wd) = dims3(self.value(x));
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be 4-d");
        let (o, kernel) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv channel mismatch");
        let ho = (h + 2 * pad - kernel) / stride + 1;
        let wo = (wd + 2 * pad - kernel) / stride + 1;
        let ckk = c * kernel * kernel;
        let hw = ho * wo;
        let mut cols = vec![0.0; ckk * hw];
        {
            let xd = self.value(x).data();
            for ci in 0..c {
                for ki in 0..kernel {
                    for kj in 0..kernel {
                        let row = (ci * kernel + ki) * kernel + kj;
                        let dst = &mut cols[row * hw..(row + 1) * hw];
                        for oy in 0..ho {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &xd[(ci * h + iy as usize) * wd..(ci * h + iy as usize + 1) * wd];
                            for ox in 0..wo {
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    dst[oy * wo + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; o * hw];
        let bias = self.value(b).data();
        for (oi, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(bias[oi]);
        }
        gemm(o, ckk, hw, self.value(w).data(), false, &cols, false, &mut out, 1.0);
        let value = Tensor::new(vec![o, ho, wo], out).expect("conv output shape");
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                kernel,
                cols,
            },
            ng,
        )
    }

    /// Transposed convolution with `kernel == stride` and no padding; weights
    /// are `C x O x k x k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (c, h, wd) = dims3(self.value(x));
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "transposed conv weight must be 4-d");
        assert_eq!(ws[0], c, "transposed conv channel mismatch");
        let (o, kernel) = (ws[1], ws[2]);
        let okk = o * kernel * kernel;
        let hw = h * wd;
        let mut y = vec![0.0; okk * hw];
        gemm(okk, c, hw, self.value(w).data(), true, self.value(x).data(), false, &mut y, 0.0);
        let (ho, wo) = (h * kernel, wd * kernel);
        let mut out = vec![0.0; o * ho * wo];
        let bias = self.value(b).data();
        for oi in 0..o {
            for a in 0..kernel {
                for bb in 0..kernel {
                    let row = &y[((oi * kernel + a) * kernel + bb) * hw..][..hw];
                    for i in 0..h {
                        let dst = &mut out[(oi * ho + i * kernel + a) * wo..][..wo];
                        for j in 0..wd {
                            dst[j * kernel + bb] = row[i * wd + j] + bias[oi];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![o, ho, wo], out).expect("transposed conv shape");
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(value, Op::ConvTranspose2d { x, w, b, kernel }, ng)
    }

    /// Matrix product `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (ar, ac) = dims2(self.value(a));
        let (br, bc) = dims2(self.value(b));
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out).expect("matmul shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = dims2(t);
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::new(vec![c, r], out).unwrap(), Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .clone()
            .reshaped(shape)
            .expect("reshape element count");
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = dims2(self.value(a));
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::new(vec![r, c], out).unwrap(), Op::SoftmaxRows(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let (_, c) = dims2(self.value(parts[0]));
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = dims2(self.value(p));
            assert_eq!(pc, c, "concat width mismatch");
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::new(vec![rows, c], out).unwrap(),
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Cosine similarity of the flattened values of `a` and `b`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::Shape(format!(
                "cosine of {} vs {} values",
                ta.len(),
                tb.len()
            )));
        }
        let (na, nb) = (ta.norm(), tb.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
        }
        let c = ta.dot(tb) / (na * nb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine { a, b, na, nb }, ng))
    }

    pub fn logsumexp(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let mx = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = d.iter().map(|v| (v - mx).exp()).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(mx + s.ln()), Op::LogSumExp(a), ng)
    }

    /// Stacks one-element tensors into a vector.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().map(|&p| self.value(p).item()).collect();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::new(vec![parts.len()], data).unwrap(),
            Op::Stack(parts.to_vec()),
            ng,
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::AddRows(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*b) {
                    let (_, d) = dims2(g);
                    let mut row = vec![0.0; d];
                    for chunk in g.data().chunks(d) {
                        for (r, x) in row.iter_mut().zip(chunk) {
                            *r += x;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(shape, row).unwrap());
                }
            }
            Op::Silu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| {
                    let s = sigmoid(x);
                    gy * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| gy * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| 2.0 * gy * x);
                self.accumulate(grads, *a, ga);
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                kernel,
                cols,
            } => {
                let (o, ho, wo) = dims3(&node.value);
                let hw = ho * wo;
                let (c, h, wd) = dims3(self.value(*x));
                let ckk = c * kernel * kernel;
                if self.ng(*b) {
                    let db: Vec<f64> = g.data().chunks(hw).map(|r| r.iter().sum()).collect();
                    self.accumulate(grads, *b, Tensor::new(vec![o], db).unwrap());
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; o * ckk];
                    gemm(o, hw, ckk, g.data(), false, cols, true, &mut dw, 0.0);
                    let shape = self.value(*w).shape().to_vec();
                    self.accumulate(grads, *w, Tensor::new(shape, dw).unwrap());
                }
                if self.ng(*x) {
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(ckk, o, hw, self.value(*w).data(), true, g.data(), false, &mut dcols, 0.0);
                    let mut dx = vec![0.0; c * h * wd];
                    for ci in 0..c {
                        for ki in 0..*kernel {
                            for kj in 0..*kernel {
                                let row = (ci * kernel + ki) * kernel + kj;
                                let srcrow = &dcols[row * hw..(row + 1) * hw];
                                for oy in 0..ho {
                                    let iy = (oy * stride + ki) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let base = (ci * h + iy as usize) * wd;
                                    for ox in 0..wo {
                                        let ix = (ox * stride + kj) as isize - *pad as isize;
                                        if ix >= 0 && ix < wd as isize {
                                            dx[base + ix as usize] += srcrow[oy * wo + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![c, h, wd], dx).unwrap());
                }
            }
            Op::ConvTranspose2d { x, w, b, kernel } => {
                let (o, ho, wo) = dims3(&node.value);
                let (c, h, wd) = dims3(self.value(*x));
                let k = *kernel;
                let okk = o * k * k;
                let hw = h * wd;
                let gd = g.data();
                if self.ng(*b) {
                    let db: Vec<f64> = gd.chunks(ho * wo).map(|r| r.iter().sum()).collect();
                    self.accumulate(grads, *b, Tensor::new(vec![o], db).unwrap());
                }
                let mut dy = vec![0.0; okk * hw];
                for oi in 0..o {
                    for a in 0..k {
                        for bb in 0..k {
                            let row = &mut dy[((oi * k + a) * k + bb) * hw..][..hw];
                            for i in 0..h {
                                let src = &gd[(oi * ho + i * k + a) * wo..][..wo];
                                for j in 0..wd {
                                    row[i * wd + j] = src[j * k + bb];
                                }
                            }
                        }
                    }
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; c * okk];
                    gemm(c, hw, okk, self.value(*x).data(), false, &dy, true, &mut dw, 0.0);
                    let shape = self.value(*w).shape().to_vec();
                    self.accumulate(grads, *w, Tensor::new(shape, dw).unwrap());
                }
                if self.ng(*x) {
                    let mut dx = vec![0.0; c * hw];
                    gemm(c, okk, hw, self.value(*w).data(), false, &dy, false, &mut dx, 0.0);
                    self.accumulate(grads, *x, Tensor::new(vec![c, h, wd], dx).unwrap());
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (m, n) = dims2(g);
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = if *ta { dims2(av).0 } else { dims2(av).1 };
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    if !*ta {
                        gemm(m, n, k, g.data(), false, bv.data(), !*tb, &mut da, 0.0);
                    } else {
                        gemm(k, n, m, bv.data(), *tb, g.data(), true, &mut da, 0.0);
                    }
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    if !*tb {
                        gemm(k, m, n, av.data(), !*ta, g.data(), false, &mut db, 0.0);
                    } else {
                        gemm(n, m, k, g.data(), true, av.data(), *ta, &mut db, 0.0);
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims2(g);
                let src = g.data();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = src[i * c + j];
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![c, r], out).unwrap());
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(&shape).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let (_, c) = dims2(g);
                let y = node.value.data();
                let mut out = vec![0.0; y.len()];
                for ((orow, yrow), grow) in out.chunks_mut(c).zip(y.chunks(c)).zip(g.data().chunks(c)) {
                    let dotp: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o = yv * (gv - dotp);
                    }
                }
                let shape = node.value.shape().to_vec();
                self.accumulate(grads, *a, Tensor::new(shape, out).unwrap());
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.ng(p) {
                        let shape = self.value(p).shape().to_vec();
                        let slice = g.data()[offset..offset + n].to_vec();
                        self.accumulate(grads, p, Tensor::new(shape, slice).unwrap());
                    }
                    offset += n;
                }
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let shape = t.shape().to_vec();
                let v = g.item() / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(&shape, v));
            }
            Op::Cosine { a, b, na, nb } => {
                let c = node.value.item();
                let gy = g.item();
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let ga = bv.zip_map(av, |bx, ax| gy * (bx / (na * nb) - c * ax / (na * na)));
                    self.accumulate(grads, *a, ga.reshaped(av.shape()).unwrap());
                }
                if self.ng(*b) {
                    let gb = av.zip_map(bv, |ax, bx| gy * (ax / (na * nb) - c * bx / (nb * nb)));
                    self.accumulate(grads, *b, gb.reshaped(bv.shape()).unwrap());
                }
            }
            Op::LogSumExp(a) => {
                let lse = node.value.item();
                let ga = self.value(*a).map(|x| g.item() * (x - lse).exp());
                self.accumulate(grads, *a, ga);
            }
            Op::Stack(parts) => {
                for (i, &p) in parts.iter().enumerate() {
                    let shape = self.value(p).shape().to_vec();
                    self.accumulate(grads, p, Tensor::full(&shape, g.data()[i]));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks d(loss)/d(input) against central differences for a graph
    /// builder `f` applied to one input tensor.
    fn check(input: Tensor, f: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let loss = f(&mut g, x);
        let grads = g.backward(loss);
        let analytic = grads.get(x).expect("gradient").clone();
        let h = 1e-5;
        let mut max_err: f64 = 0.0;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut t = input.clone();
                t.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.input(t);
                let l = f(&mut g, x);
                g.value(l).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / (1e-8 + a.abs().max(fd.abs()));
            max_err = max_err.max(err.min((a - fd).abs() * 1e3));
        }
        assert!(max_err < 1e-5, "max relative error {max_err}");
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let x = random(&[2, 5, 6], &mut rng);
        let w2 = w.clone();
        check(x.clone(), move |g, x| {
            let w = g.constant(w2.clone());
            let b = g.constant(b.clone());
            let y = g.conv2d(x, w, b, 2, 1);
            let y = g.square(y);
            g.sum(y)
        });
        check(w, move |g, w| {
            let xv = g.constant(x.clone());
            let b = g.constant(Tensor::zeros(&[3]));
            let y = g.conv2d(xv, w, b, 1, 1);
            let y = g.silu(y);
            g.sum(y)
        });
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(&[3, 2, 2, 2], &mut rng);
        let x = random(&[3, 3, 4], &mut rng);
        let w2 = w.clone();
        check(x.clone(), move |g, x| {
            let w = g.constant(w2.clone());
            let b = g.constant(Tensor::full(&[2], 0.3));
            let y = g.conv_transpose2d(x, w, b);
            let y = g.square(y);
            g.mean(y)
        });
        check(w, move |g, w| {
            let xv = g.constant(x.clone());
            let b = g.constant(Tensor::zeros(&[2]));
            let y = g.conv_transpose2d(xv, w, b);
            let y = g.softplus(y);
            g.sum(y)
        });
    }

    #[test]
    fn matmul_softmax_gradients_all_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for ta in [false, true] {
            for tb in [false, true] {
                let a = random(if ta { &[4, 3] } else { &[3, 4] }, &mut rng);
                let b = random(if tb { &[5, 4] } else { &[4, 5] }, &mut rng);
                let b2 = b.clone();
                check(a.clone(), move |g, a| {
                    let b = g.constant(b2.clone());
                    let c = g.matmul_t(a, b, ta, tb);
                    let s = g.softmax_rows(c);
                    let s = g.square(s);
                    g.sum(s)
                });
                check(b, move |g, b| {
                    let av = g.constant(a.clone());
                    let c = g.matmul_t(av, b, ta, tb);
                    let c = g.transpose(c);
                    let c = g.square(c);
                    g.sum(c)
                });
            }
        }
    }

    #[test]
    fn cosine_logsumexp_stack_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let other = random(&[6], &mut rng);
        let x = random(&[2, 3], &mut rng);
        check(x, move |g, x| {
            let o = g.constant(other.clone().reshaped(&[2, 3]).unwrap());
            let c1 = g.cosine(x, o).unwrap();
            let sq = g.square(x);
            let c2 = g.cosine(x, sq).unwrap();
            let s = g.stack(&[c1, c2]);
            let s = g.scale(s, 3.0);
            g.logsumexp(s)
        });
    }

    #[test]
    fn concat_rows_and_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let row = random(&[1, 3], &mut rng);
        let x = random(&[2, 3], &mut rng);
        check(x, move |g, x| {
            let r = g.input(row.clone());
            let y = g.add_rows(x, r);
            let c = g.concat_rows(&[x, y, r]);
            let c = g.add_scalar(c, 0.5);
            let c = g.mul(c, c);
            let d = g.sub(c, c);
            let e = g.add(c, d);
            g.mean(e)
        });
    }

    #[test]
    fn zero_norm_cosine_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[3]));
        let b = g.constant(Tensor::full(&[3], 1.0));
        assert!(g.cosine(a, b).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[2], 1.0));
        let b = g.input(Tensor::full(&[2], 2.0));
        let c = g.mul(a, b);
        let s = g.sum(c);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
    }
}
