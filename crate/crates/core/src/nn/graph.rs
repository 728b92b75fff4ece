//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Ops are coarse (matmul, layer norm, fused causal attention, cross-entropy)
//! so that a transformer forward pass records a few dozen nodes per layer.
//! Parameters are read from a borrowed [`ParamStore`]; gradients for them
//! are returned by [`Graph::backward`].

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Operation counters gathered while recording a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Attention score-matrix entries materialized, summed over layers
    /// (one `len × len` matrix per attention segment, independent of heads).
    pub attn_pairs: u64,
    /// Number of attention calls.
    pub attn_calls: u64,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu { x: Var, th: Vec<f64> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, segment: usize, probs: Vec<f64> },
    Gather { src: Var, bags: Vec<Vec<usize>> },
    Scatter { src: Var, rows: Vec<usize> },
    ConcatRows(Var, Var),
    CrossEntropy { logits: Var, rows: Vec<(usize, usize)>, probs: Vec<f64> },
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    counters: OpCounters,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `tanh` through one `exp`; libm's tanh dominates GELU otherwise.
fn tanh(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        return u - u * u * u / 3.0;
    }
    let e = (2.0 * u.clamp(-20.0, 20.0)).exp();
    1.0 - 2.0 / (e + 1.0)
}
const GEMM_ATTN_MIN: usize = 24;

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_nodes: vec![None; store.len()], counters: OpCounters::default() }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.shape().len() != 2 || tb.rows() != k {
            bail!(Shape, "matmul {:?} x {:?}", ta.shape(), tb.shape());
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.cols() != tb.cols() {
            bail!(Shape, "add {:?} + {:?}", ta.shape(), tb.shape());
        }
        let mut t = ta.clone();
        t.add_assign(tb);
        Ok(self.push(Op::Add(a, b), t))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.len() != tx.cols() {
            bail!(Shape, "bias {:?} for {:?}", tb.shape(), tx.shape());
        }
        let mut t = tx.clone();
        let c = tx.cols();
        for row in t.data_mut().chunks_mut(c) {
            for (a, b) in row.iter_mut().zip(tb.data()) {
                *a += b;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), t))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut t = self.value(x).clone();
        t.scale_assign(c);
        self.push(Op::Scale(x, c), t)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let th: Vec<f64> = tx.data().iter().map(|&v| tanh(GELU_C * (v + 0.044715 * v * v * v))).collect();
        let data = tx.data().iter().zip(&th).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Gelu { x, th }, t)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        if tg.len() != c || tb.len() != c {
            bail!(Shape, "layer norm gain {:?} for {:?}", tg.shape(), tx.shape());
        }
        let rows = tx.rows();
        let mut out = vec![0.0; rows * c];
        let mut xhat = vec![0.0; rows * c];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, xhat, rstd }, t))
    }

    /// Multi-head causal attention over packed `q`, `k`, `v` (`n × D`).
    ///
    /// The sequence is cut into independent segments of `segment` rows;
    /// row `i` attends to rows `j <= i` of its own segment only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, segment: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (tq.rows(), tq.cols());
        if tk.rows() != n || tv.rows() != n || tk.cols() != d || tv.cols() != d {
            bail!(Shape, "attention q {:?} k {:?} v {:?}", tq.shape(), tk.shape(), tv.shape());
        }
        if heads == 0 || d % heads != 0 {
            bail!(Shape, "width {d} not divisible by {heads} heads");
        }
        if segment == 0 || n % segment != 0 {
            bail!(Shape, "sequence of {n} rows not divisible into segments of {segment}");
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nseg = n / segment;
        let ss = segment * segment;
        let mut probs = vec![0.0; nseg * heads * ss];
        let mut out = vec![0.0; n * d];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for s in 0..nseg {
            let base = s * segment;
            for h in 0..heads {
                let p = &mut probs[(s * heads + h) * ss..(s * heads + h + 1) * ss];
                let off = base * d + h * dh;
                if segment >= GEMM_ATTN_MIN {
                    // scores = Q_h · K_hᵀ over the whole square; the upper triangle is discarded
                    unsafe {
                        matrixmultiply::dgemm(
                            segment, dh, segment, scale,
                            qd.as_ptr().add(off), d as isize, 1,
                            kd.as_ptr().add(off), 1, d as isize,
                            0.0, p.as_mut_ptr(), segment as isize, 1,
                        );
                    }
                } else {
                    for i in 0..segment {
                        let qi = &qd[off + i * d..off + i * d + dh];
                        for j in 0..=i {
                            let kj = &kd[off + j * d..off + j * d + dh];
                            p[i * segment + j] = scale * dot(qi, kj);
                        }
                    }
                }
                for i in 0..segment {
                    let row = &mut p[i * segment..(i + 1) * segment];
                    let max = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in row[..=i].iter_mut() {
                        *x = (*x - max).exp();
                        z += *x;
                    }
                    for x in row[..=i].iter_mut() {
                        *x /= z;
                    }
                    row[i + 1..].iter_mut().for_each(|x| *x = 0.0);
                }
                if segment >= GEMM_ATTN_MIN {
                    unsafe {
                        matrixmultiply::dgemm(
                            segment, segment, dh, 1.0,
                            p.as_ptr(), segment as isize, 1,
                            vd.as_ptr().add(off), d as isize, 1,
                            0.0, out.as_mut_ptr().add(off), d as isize, 1,
                        );
                    }
                } else {
                    for i in 0..segment {
                        let o = off + i * d;
                        for j in 0..=i {
                            let w = p[i * segment + j];
                            let vj = &vd[off + j * d..off + j * d + dh];
                            for (a, b) in out[o..o + dh].iter_mut().zip(vj) {
                                *a += w * b;
                            }
                        }
                    }
                }
            }
        }
        self.counters.attn_pairs += (nseg * ss) as u64;
        self.counters.attn_calls += 1;
        let t = Tensor::matrix(n, d, out)?;
        Ok(self.push(Op::Attention { q, k, v, heads, segment, probs }, t))
    }

    /// Each output row is the sum of the listed rows of `src`.
    pub fn gather(&mut self, src: Var, bags: Vec<Vec<usize>>) -> Result<Var> {
        let ts = self.value(src);
        let (r, c) = (ts.rows(), ts.cols());
        let mut out = vec![0.0; bags.len() * c];
        for (i, bag) in bags.iter().enumerate() {
            for &j in bag {
                if j >= r {
                    bail!(OutOfRange, "row {j} of {r}");
                }
                for (a, b) in out[i * c..(i + 1) * c].iter_mut().zip(ts.row(j)) {
                    *a += b;
                }
            }
        }
        let t = Tensor::matrix(bags.len(), c, out)?;
        Ok(self.push(Op::Gather { src, bags }, t))
    }

    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        self.gather(src, rows.iter().map(|&r| vec![r]).collect())
    }

    /// Places row `i` of `src` at row `rows[i]` of an `n`-row zero matrix.
    pub fn scatter_rows(&mut self, src: Var, rows: Vec<usize>, n: usize) -> Result<Var> {
        let ts = self.value(src);
        let c = ts.cols();
        if rows.len() != ts.rows() && !(rows.is_empty() && ts.is_empty()) {
            bail!(Shape, "scatter of {} rows with {} targets", ts.rows(), rows.len());
        }
        let mut out = vec![0.0; n * c];
        for (i, &r) in rows.iter().enumerate() {
            if r >= n {
                bail!(OutOfRange, "scatter row {r} of {n}");
            }
            for (a, b) in out[r * c..(r + 1) * c].iter_mut().zip(ts.row(i)) {
                *a += b;
            }
        }
        let t = Tensor::matrix(n, c, out)?;
        Ok(self.push(Op::Scatter { src, rows }, t))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            bail!(Shape, "concat {:?} with {:?}", ta.shape(), tb.shape());
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let t = Tensor::matrix(ta.rows() + tb.rows(), ta.cols(), data)?;
        Ok(self.push(Op::ConcatRows(a, b), t))
    }

    /// Mean negative log-likelihood of `targets` over rows where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let tl = self.value(logits);
        let (n, v) = (tl.rows(), tl.cols());
        if targets.len() != n || mask.len() != n {
            bail!(Shape, "{} logit rows, {} targets, {} mask entries", n, targets.len(), mask.len());
        }
        let rows: Vec<(usize, usize)> = targets
            .iter()
            .zip(mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(|(i, (&t, _))| (i, t))
            .collect();
        if rows.is_empty() {
            bail!(Input, "cross-entropy mask selects no positions");
        }
        let mut probs = vec![0.0; rows.len() * v];
        let mut total = 0.0;
        for (r, &(i, t)) in rows.iter().enumerate() {
            if t >= v {
                bail!(OutOfRange, "target {t} outside vocabulary of {v}");
            }
            let row = tl.row(i);
            let p = &mut probs[r * v..(r + 1) * v];
            let lse = log_softmax_into(row, p);
            total += lse - row[t];
        }
        let loss = total / rows.len() as f64;
        if !loss.is_finite() {
            bail!(NonFinite, "cross-entropy loss");
        }
        Ok(self.push(Op::CrossEntropy { logits, rows, probs }, Tensor::scalar(loss)))
    }

    /// Reverse pass from a scalar `root`; returns parameter gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let rt = self.value(root);
        if rt.len() != 1 {
            bail!(Shape, "backward root must be scalar, got {:?}", rt.shape());
        }
        grads[root.0] = Some(Tensor::full(rt.shape(), 1.0));
        let mut out = Gradients::empty(self.store.len());

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate_owned(*id, g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, 0.0);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, 0.0);
                    acc(&mut grads, *a, Tensor::new(ta.shape().to_vec(), ga)?);
                    acc(&mut grads, *b, Tensor::new(tb.shape().to_vec(), gb)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, reshape_like(&g, self.value(*b)));
                    acc(&mut grads, *a, g);
                }
                Op::AddBias(x, bias) => {
                    let tb = self.value(*bias);
                    let c = tb.len();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (a, b) in gb.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    acc(&mut grads, *bias, Tensor::new(tb.shape().to_vec(), gb)?);
                    acc(&mut grads, *x, g);
                }
                Op::Scale(x, c) => {
                    let mut g = g;
                    g.scale_assign(*c);
                    acc(&mut grads, *x, g);
                }
                Op::Gelu { x, th } => {
                    let tx = self.value(*x);
                    let mut g = g;
                    for ((gv, &v), &th) in g.data_mut().iter_mut().zip(tx.data()).zip(th) {
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        *gv *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                    }
                    acc(&mut grads, *x, g);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let tg = self.value(*gain);
                    let c = tg.len();
                    let rows = rstd.len();
                    let mut gx = vec![0.0; rows * c];
                    let mut gg = vec![0.0; c];
                    let mut gbias = vec![0.0; c];
                    let mut dxhat = vec![0.0; c];
                    for r in 0..rows {
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let xh = &xhat[r * c..(r + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            gg[j] += gr[j] * xh[j];
                            gbias[j] += gr[j];
                            dxhat[j] = gr[j] * tg.data()[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xh[j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            gx[r * c + j] = rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    let shape_x = self.value(*x).shape().to_vec();
                    acc(&mut grads, *gain, Tensor::new(tg.shape().to_vec(), gg)?);
                    acc(&mut grads, *bias, Tensor::new(self.value(*bias).shape().to_vec(), gbias)?);
                    acc(&mut grads, *x, Tensor::new(shape_x, gx)?);
                }
                Op::Attention { q, k, v, heads, segment, probs } => {
                    let (gq, gk, gv) = attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *heads,
                        *segment,
                        probs,
                        &g,
                    )?;
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::Gather { src, bags } => {
                    let ts = self.value(*src);
                    let c = ts.cols();
                    let mut gs = vec![0.0; ts.len()];
                    for (i, bag) in bags.iter().enumerate() {
                        let gr = &g.data()[i * c..(i + 1) * c];
                        for &j in bag {
                            for (a, b) in gs[j * c..(j + 1) * c].iter_mut().zip(gr) {
                                *a += b;
                            }
                        }
                    }
                    acc(&mut grads, *src, Tensor::new(ts.shape().to_vec(), gs)?);
                }
                Op::Scatter { src, rows } => {
                    let ts = self.value(*src);
                    let c = ts.cols();
                    let mut gs = vec![0.0; ts.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        gs[i * c..(i + 1) * c].copy_from_slice(&g.data()[r * c..(r + 1) * c]);
                    }
                    acc(&mut grads, *src, Tensor::new(ts.shape().to_vec(), gs)?);
                }
                Op::ConcatRows(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let split = ta.len();
                    let ga = Tensor::new(ta.shape().to_vec(), g.data()[..split].to_vec())?;
                    let gb = Tensor::new(tb.shape().to_vec(), g.data()[split..].to_vec())?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::CrossEntropy { logits, rows, probs } => {
                    let tl = self.value(*logits);
                    let v = tl.cols();
                    let upstream = g.item() / rows.len() as f64;
                    let mut gl = vec![0.0; tl.len()];
                    for (r, &(i, t)) in rows.iter().enumerate() {
                        let dst = &mut gl[i * v..(i + 1) * v];
                        for (a, p) in dst.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *a = upstream * p;
                        }
                        dst[t] -= upstream;
                    }
                    acc(&mut grads, *logits, Tensor::new(tl.shape().to_vec(), gl)?);
                }
            }
        }
        if !out.is_finite() {
            bail!(NonFinite, "gradient");
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reshape_like(g: &Tensor, like: &Tensor) -> Tensor {
    Tensor::new(like.shape().to_vec(), g.data().to_vec()).expect("same length")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes softmax(row) into `p` and returns logsumexp(row).
pub(crate) fn log_softmax_into(row: &[f64], p: &mut [f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (pi, &x) in p.iter_mut().zip(row) {
        *pi = (x - max).exp();
        z += *pi;
    }
    for pi in p.iter_mut() {
        *pi /= z;
    }
    max + z.ln()
}

fn attention_backward(
    tq: &Tensor,
    tk: &Tensor,
    tv: &Tensor,
    heads: usize,
    segment: usize,
    probs: &[f64],
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d) = (tq.rows(), tq.cols());
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let nseg = n / segment;
    let ss = segment * segment;
    let (qd, kd, vd, gd) = (tq.data(), tk.data(), tv.data(), g.data());
    let mut gq = vec![0.0; n * d];
    let mut gk = vec![0.0; n * d];
    let mut gv = vec![0.0; n * d];
    let mut dp = vec![0.0; ss];
    for s in 0..nseg {
        let base = s * segment;
        for h in 0..heads {
            let p = &probs[(s * heads + h) * ss..(s * heads + h + 1) * ss];
            let off = base * d + h * dh;
            if segment >= GEMM_ATTN_MIN {
                unsafe {
                    // dV = Pᵀ · dO
                    matrixmultiply::dgemm(
                        segment, segment, dh, 1.0,
                        p.as_ptr(), 1, segment as isize,
                        gd.as_ptr().add(off), d as isize, 1,
                        1.0, gv.as_mut_ptr().add(off), d as isize, 1,
                    );
                    // dP = dO · Vᵀ
                    matrixmultiply::dgemm(
                        segment, dh, segment, 1.0,
                        gd.as_ptr().add(off), d as isize, 1,
                        vd.as_ptr().add(off), 1, d as isize,
                        0.0, dp.as_mut_ptr(), segment as isize, 1,
                    );
                }
            } else {
                for i in 0..segment {
                    let gi = &gd[off + i * d..off + i * d + dh];
                    for j in 0..=i {
                        let w = p[i * segment + j];
                        let vj = &vd[off + j * d..off + j * d + dh];
                        dp[i * segment + j] = dot(gi, vj);
                        for (a, b) in gv[off + j * d..off + j * d + dh].iter_mut().zip(gi) {
                            *a += w * b;
                        }
                    }
                }
            }
            // dS = P ⊙ (dP − rowsum(P ⊙ dP)), scaled
            for i in 0..segment {
                let pr = &p[i * segment..(i + 1) * segment];
                let dr = &mut dp[i * segment..(i + 1) * segment];
                let sum: f64 = (0..=i).map(|j| pr[j] * dr[j]).sum();
                for j in 0..=i {
                    dr[j] = scale * pr[j] * (dr[j] - sum);
                }
                dr[i + 1..].iter_mut().for_each(|x| *x = 0.0);
            }
            if segment >= GEMM_ATTN_MIN {
                unsafe {
                    // dQ = dS · K
                    matrixmultiply::dgemm(
                        segment, segment, dh, 1.0,
                        dp.as_ptr(), segment as isize, 1,
                        kd.as_ptr().add(off), d as isize, 1,
                        1.0, gq.as_mut_ptr().add(off), d as isize, 1,
                    );
                    // dK = dSᵀ · Q
                    matrixmultiply::dgemm(
                        segment, segment, dh, 1.0,
                        dp.as_ptr(), 1, segment as isize,
                        qd.as_ptr().add(off), d as isize, 1,
                        1.0, gk.as_mut_ptr().add(off), d as isize, 1,
                    );
                }
            } else {
                for i in 0..segment {
                    for j in 0..=i {
                        let w = dp[i * segment + j];
                        for x in 0..dh {
                            gq[off + i * d + x] += w * kd[off + j * d + x];
                            gk[off + j * d + x] += w * qd[off + i * d + x];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::matrix(n, d, gq)?,
        Tensor::matrix(n, d, gk)?,
        Tensor::matrix(n, d, gv)?,
    ))
}
