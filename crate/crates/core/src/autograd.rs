//! Reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! read in place from a borrowed [`ParamStore`]; their gradients are collected
//! into a [`Grads`] by [`Tape::backward`]. A tape is single-threaded; callers
//! that want data parallelism build one tape per sample and merge gradients.

use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Mat;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, rstd: Vec<f64> },
    BatchNorm { x: Var, gain: Var, bias: Var, xhat: Mat, rstd: Vec<f64> },
    ColMax { x: Var, arg: Vec<usize> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    VStack(Vec<Var>),
    RowSelect { a: Var, b: Var, take_a: Vec<bool> },
    Conv { x: Var, kernel: Var, pad_left: usize },
}

struct Node {
    op: Op,
    value: Mat,
    needs_grad: bool,
}

/// Batch statistics observed by a batch-norm node, for running-average updates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Output of [`Tape::backward`].
pub struct Gradients {
    pub params: Grads,
    leaves: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient reaching a leaf created with [`Tape::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new() }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Leaf => true,
            Op::Param(id) => self.store.is_trainable(*id),
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant: no gradient flows into it.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Input, value)
    }

    /// An external value whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Mat::zeros(0, 0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols()), r.shape(), "add_row expects a 1 x {} row", x.cols());
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        crate::kinks::note_signs(self.value(a).as_slice());
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked out for `j > i`.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let width = if causal { (i + 1).min(x.cols()) } else { x.cols() };
            softmax_into(&x.row(i)[..width], &mut v.row_mut(i)[..width]);
        }
        self.push(Op::Softmax(a), v)
    }

    /// Per-row normalization followed by a `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *o = (v - mean) * s;
            }
            rstd.push(s);
        }
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        self.push(Op::LayerNorm { x, gain, bias, xhat, rstd }, out)
    }

    /// Per-column normalization with batch statistics (biased variance), then
    /// gain and bias. Returns the statistics for running-average bookkeeping.
    pub fn batch_norm(&mut self, x: Var, gain: Var, bias: Var) -> (Var, BatchStats) {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mean = xv.col_means();
        let mut var_b = vec![0.0; cols];
        for r in xv.iter_rows() {
            for j in 0..cols {
                var_b[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let n = rows as f64;
        let rstd: Vec<f64> = var_b.iter().map(|s| 1.0 / (s / n + NORM_EPS).sqrt()).collect();
        let mut xhat = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                xhat[(i, j)] = (xv[(i, j)] - mean[j]) * rstd[j];
            }
        }
        let stats = BatchStats { mean, var: var_b.iter().map(|s| s / (n - 1.0).max(1.0)).collect() };
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        (self.push(Op::BatchNorm { x, gain, bias, xhat, rstd }, out), stats)
    }

    /// Per-column maximum over rows, as a `1 x c` row. Ties pick the first row.
    pub fn col_max(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut arg = vec![0usize; xv.cols()];
        let mut best = xv.row(0).to_vec();
        for i in 1..xv.rows() {
            for (j, v) in xv.row(i).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    arg[j] = i;
                }
            }
        }
        crate::kinks::note_choices(&arg);
        self.push(Op::ColMax { x, arg }, Mat::row_vector(&best))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let v = Mat::hstack(&parts.iter().map(|p| self.value(*p)).collect::<Vec<_>>());
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_cols(start, len);
        self.push(Op::SliceCols { x, start }, v)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let v = Mat::vstack(&parts.iter().map(|p| self.value(*p)).collect::<Vec<_>>());
        self.push(Op::VStack(parts.to_vec()), v)
    }

    /// Row `i` is taken from `a` where `take_a[i]`, otherwise from `b`.
    pub fn row_select(&mut self, a: Var, b: Var, take_a: Vec<bool>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_select shape mismatch");
        assert_eq!(take_a.len(), av.rows());
        let mut v = bv.clone();
        for (i, &t) in take_a.iter().enumerate() {
            if t {
                v.row_mut(i).copy_from_slice(av.row(i));
            }
        }
        self.push(Op::RowSelect { a, b, take_a }, v)
    }

    /// Depthwise 1-D convolution along rows. `kernel` is `k x c`; the input is
    /// zero-padded with `pad_left` rows before and `k - 1 - pad_left` after.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var, pad_left: usize) -> Var {
        let (xv, kv) = (self.value(x), self.value(kernel));
        assert_eq!(xv.cols(), kv.cols(), "conv channel mismatch");
        let (len, ch) = xv.shape();
        let k = kv.rows();
        let mut v = Mat::zeros(len, ch);
        for i in 0..len {
            for m in 0..k {
                let Some(j) = (i + m).checked_sub(pad_left) else { continue };
                if j >= len {
                    continue;
                }
                let (src, w) = (xv.row(j), kv.row(m));
                for (c, o) in v.row_mut(i).iter_mut().enumerate() {
                    *o += w[c] * src[c];
                }
            }
        }
        self.push(Op::Conv { x, kernel, pad_left }, v)
    }

    /// Back-propagates from one or more seed gradients.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        let mut params = Grads::new(self.store);
        let mut leaves: Vec<Option<Mat>> = vec![None; n];
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape mismatch");
            self.acc(&mut grads, *v, g.clone());
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Leaf => leaves[i] = Some(g),
                Op::Param(id) => params.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.matmul_nt(self.value(*b)));
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, self.value(*a).matmul_tn(&g));
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.matmul(self.value(*b)));
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g.matmul_tn(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *b, g.clone());
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *b, g.scale(-1.0));
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => self.acc(&mut grads, *a, g.scale(*s)),
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let sums = column_sums(&g);
                        self.acc(&mut grads, *row, Mat::row_vector(&sums));
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                    self.acc(&mut grads, *a, da);
                }
                Op::Transpose(a) => self.acc(&mut grads, *a, g.transpose()),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut da = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (o, (p, q)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = p * (q - dot);
                        }
                    }
                    self.acc(&mut grads, *a, da);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    if self.needs(*gain) {
                        self.acc(&mut grads, *gain, Mat::row_vector(&column_sums(&g.zip_map(xhat, |d, h| d * h))));
                    }
                    if self.needs(*bias) {
                        self.acc(&mut grads, *bias, Mat::row_vector(&column_sums(&g)));
                    }
                    if self.needs(*x) {
                        let (rows, cols) = g.shape();
                        let mut dx = Mat::zeros(rows, cols);
                        for i in 0..rows {
                            let (gr, hr) = (g.row(i), xhat.row(i));
                            let dh: Vec<f64> = gr.iter().zip(gv.as_slice()).map(|(d, w)| d * w).collect();
                            let m1 = dh.iter().sum::<f64>() / cols as f64;
                            let m2 = dh.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / cols as f64;
                            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                                *o = rstd[i] * (dh[j] - m1 - hr[j] * m2);
                            }
                        }
                        self.acc(&mut grads, *x, dx);
                    }
                }
                Op::BatchNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    if self.needs(*gain) {
                        self.acc(&mut grads, *gain, Mat::row_vector(&column_sums(&g.zip_map(xhat, |d, h| d * h))));
                    }
                    if self.needs(*bias) {
                        self.acc(&mut grads, *bias, Mat::row_vector(&column_sums(&g)));
                    }
                    if self.needs(*x) {
                        let (rows, cols) = g.shape();
                        let n = rows as f64;
                        let mut dx = Mat::zeros(rows, cols);
                        for j in 0..cols {
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for i in 0..rows {
                                let dh = g[(i, j)] * gv.as_slice()[j];
                                m1 += dh;
                                m2 += dh * xhat[(i, j)];
                            }
                            m1 /= n;
                            m2 /= n;
                            for i in 0..rows {
                                let dh = g[(i, j)] * gv.as_slice()[j];
                                dx[(i, j)] = rstd[j] * (dh - m1 - xhat[(i, j)] * m2);
                            }
                        }
                        self.acc(&mut grads, *x, dx);
                    }
                }
                Op::ColMax { x, arg } => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    for (j, &r) in arg.iter().enumerate() {
                        dx[(r, j)] = g.as_slice()[j];
                    }
                    self.acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.needs(*p) {
                            self.acc(&mut grads, *p, g.slice_cols(off, w));
                        }
                        off += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs(*x) {
                        let xv = self.value(*x);
                        let mut dx = Mat::zeros(xv.rows(), xv.cols());
                        for i in 0..g.rows() {
                            dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                        }
                        self.acc(&mut grads, *x, dx);
                    }
                }
                Op::VStack(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        if self.needs(*p) {
                            let block = Mat::from_vec(r, g.cols(), g.as_slice()[off * g.cols()..(off + r) * g.cols()].to_vec());
                            self.acc(&mut grads, *p, block);
                        }
                        off += r;
                    }
                }
                Op::RowSelect { a, b, take_a } => {
                    let mut ga = Mat::zeros(g.rows(), g.cols());
                    let mut gb = g;
                    for (i, &t) in take_a.iter().enumerate() {
                        if t {
                            ga.row_mut(i).copy_from_slice(gb.row(i));
                            gb.row_mut(i).fill(0.0);
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                    self.acc(&mut grads, *b, gb);
                }
                Op::Conv { x, kernel, pad_left } => {
                    let (xv, kv) = (self.value(*x), self.value(*kernel));
                    let (len, ch) = xv.shape();
                    let k = kv.rows();
                    let mut dx = Mat::zeros(len, ch);
                    let mut dk = Mat::zeros(k, ch);
                    for i in 0..len {
                        for m in 0..k {
                            let Some(j) = (i + m).checked_sub(*pad_left) else { continue };
                            if j >= len {
                                continue;
                            }
                            for c in 0..ch {
                                let d = g[(i, c)];
                                dx[(j, c)] += kv[(m, c)] * d;
                                dk[(m, c)] += xv[(j, c)] * d;
                            }
                        }
                    }
                    self.acc(&mut grads, *x, dx);
                    self.acc(&mut grads, *kernel, dk);
                }
            }
        }
        Gradients { params, leaves }
    }

    #[inline]
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Input | Op::Leaf | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::MatMulNT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _) | Op::Relu(a) | Op::Transpose(a) | Op::Softmax(a) => vec![*a],
        Op::LayerNorm { x, gain, bias, .. } | Op::BatchNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::ColMax { x, .. } | Op::SliceCols { x, .. } => vec![*x],
        Op::ConcatCols(p) | Op::VStack(p) => p.clone(),
        Op::RowSelect { a, b, .. } => vec![*a, *b],
        Op::Conv { x, kernel, .. } => vec![*x, *kernel],
    }
}

fn column_sums(m: &Mat) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (acc, v) in s.iter_mut().zip(r) {
            *acc += v;
        }
    }
    s
}

fn affine_cols(xhat: &Mat, gain: &Mat, bias: &Mat) -> Mat {
    let mut out = xhat.clone();
    for i in 0..out.rows() {
        for ((o, g), b) in out.row_mut(i).iter_mut().zip(gain.as_slice()).zip(bias.as_slice()) {
            *o = *o * g + b;
        }
    }
    out
}

/// Numerically stable softmax of `x` written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
