// SPDX-License-Identifier: MIT OR Apache-2.0

//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes only reference earlier nodes, so a
//! single reverse sweep over the list visits each node once in a valid
//! topological order.

use super::{gemm, Gradients, MatRef, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYERNORM_EPS: f64 = 1e-5;

const GELU_COEF: f64 = 0.044_715;

enum Value<F> {
    Owned(Tensor<F>),
    Param(ParamId),
}

enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: F,
    },
    Sum {
        x: Var,
    },
    Gelu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    CausalSoftmax {
        x: Var,
    },
    MaskHeads {
        x: Var,
        keep: Vec<bool>,
    },
    SplitHeads {
        x: Var,
        offset: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<F>,
        count: usize,
    },
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recording of one forward pass over parameters borrowed from a store.
pub struct Tape<'p, F> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    check_finite: bool,
}

impl<'p, F: Scalar> Tape<'p, F> {
    /// NaN/Inf checking follows `debug_assertions`.
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives gradients through `id`.
    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(id.0 < self.params.len(), "parameter id from another store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m×k] · [n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::dim("matmul", format!("inner dimensions {k} and {kb} disagree")));
        }
        let mut out = vec![F::zero(); m * n];
        let am = MatRef::new(self.value(a).data(), m, k);
        let bm = MatRef::new(self.value(b).data(), br, bc);
        let bm = if trans_b { bm.t() } else { bm };
        gemm(F::one(), am, bm, F::zero(), &mut out);
        self.push(
            "matmul",
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, trans_b },
            &[a, b],
        )
    }

    /// Batched `[B×m×k] · [B×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    /// Batched `[B×m×k] · [B×n×k]ᵀ`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ba, m, k) = self.value(a).dims3()?;
        let (bb, br, bc) = self.value(b).dims3()?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if ba != bb || k != kb {
            return Err(Error::dim(
                "bmm",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = vec![F::zero(); ba * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..ba {
            let am = MatRef::new(&ad[i * m * k..(i + 1) * m * k], m, k);
            let bm = MatRef::new(&bd[i * br * bc..(i + 1) * br * bc], br, bc);
            let bm = if trans_b { bm.t() } else { bm };
            gemm(F::one(), am, bm, F::zero(), &mut out[i * m * n..(i + 1) * m * n]);
        }
        self.push(
            "bmm",
            Tensor::from_parts(vec![ba, m, n], out),
            Op::BatchMatMul { a, b, trans_b },
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push("add", out, Op::Add { a, b }, &[a, b])
    }

    /// Adds a `[d]` vector to every trailing-dimension row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.last_dim();
        if tb.shape() != [d] {
            return Err(Error::dim("add_bias", format!("bias {:?} for rows of {d}", tb.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("add_bias", out, Op::AddBias { x, bias }, &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum { x }, &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu_fwd);
        self.push("gelu", out, Op::Gelu { x }, &[x])
    }

    /// Normalizes each trailing-dimension vector, then applies `gain`/`bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.last_dim();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(Error::dim(
                "layernorm",
                format!("gain {:?} / bias {:?} for rows of {d}", tg.shape(), tb.shape()),
            ));
        }
        let eps = F::lit(LAYERNORM_EPS);
        let inv_d = F::one() / F::lit(d as f64);
        let rows = tx.numel() / d;
        let mut xhat = vec![F::zero(); tx.numel()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); tx.numel()];
        for r in 0..rows {
            let xs = &tx.data()[r * d..(r + 1) * d];
            let mean = xs.iter().copied().sum::<F>() * inv_d;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xs[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), out);
        self.push(
            "layernorm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Row softmax over the trailing `T×T` matrices with every entry above
    /// the diagonal forced to exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2] {
            return Err(Error::dim(
                "causal_softmax",
                format!("non-square trailing dims {shape:?}"),
            ));
        }
        let t = tx.last_dim();
        let mut out = vec![F::zero(); tx.numel()];
        for (r, (src, dst)) in tx.data().chunks_exact(t).zip(out.chunks_exact_mut(t)).enumerate() {
            let visible = r % t + 1;
            let max = src[..visible].iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for j in 0..visible {
                let e = (src[j] - max).exp();
                dst[j] = e;
                total += e;
            }
            let inv = F::one() / total;
            for v in &mut dst[..visible] {
                *v *= inv;
            }
        }
        let out = Tensor::from_parts(shape.to_vec(), out);
        self.push("causal_softmax", out, Op::CausalSoftmax { x }, &[x])
    }

    /// Zeroes every leading-dimension slice `h` with `keep[h] == false`.
    pub fn mask_heads(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape()[0] != keep.len() {
            return Err(Error::dim(
                "mask_heads",
                format!("{} heads, {} mask entries", tx.shape()[0], keep.len()),
            ));
        }
        let per = tx.numel() / keep.len();
        let mut data = tx.data().to_vec();
        for (chunk, &k) in data.chunks_exact_mut(per).zip(keep) {
            if !k {
                chunk.fill(F::zero());
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("mask_heads", out, Op::MaskHeads { x, keep: keep.to_vec() }, &[x])
    }

    /// Takes columns `offset .. offset + heads*d_head` of a `[T×C]` matrix
    /// and lays them out as `[heads×T×d_head]`.
    pub fn split_heads(&mut self, x: Var, offset: usize, heads: usize, d_head: usize) -> Result<Var> {
        let (t, c) = self.value(x).dims2()?;
        if heads == 0 || offset + heads * d_head > c {
            return Err(Error::dim(
                "split_heads",
                format!("{heads}×{d_head} at {offset} of {c}"),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![F::zero(); heads * t * d_head];
        for h in 0..heads {
            for i in 0..t {
                let from = i * c + offset + h * d_head;
                let to = (h * t + i) * d_head;
                out[to..to + d_head].copy_from_slice(&src[from..from + d_head]);
            }
        }
        let out = Tensor::from_parts(vec![heads, t, d_head], out);
        self.push("split_heads", out, Op::SplitHeads { x, offset, heads }, &[x])
    }

    /// `[H×T×d_head]` → `[T×(H·d_head)]`, heads concatenated in order.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let (h, t, dh) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut out = vec![F::zero(); h * t * dh];
        for hh in 0..h {
            for i in 0..t {
                let from = (hh * t + i) * dh;
                let to = i * h * dh + hh * dh;
                out[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
        let out = Tensor::from_parts(vec![t, h * dh], out);
        self.push("merge_heads", out, Op::MergeHeads { x }, &[x])
    }

    /// Rows `ids` of a `[V×d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::dim("gather", "empty id list"));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("row {id} of a {v}-row table")));
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_parts(vec![ids.len(), d], out);
        self.push(
            "gather",
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Mean next-token cross-entropy of `[T×V]` logits; `None` targets are
    /// excluded from both the sum and the count.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (t, v) = self.value(logits).dims2()?;
        if targets.len() != t {
            return Err(Error::dim(
                "cross_entropy",
                format!("{t} logit rows, {} targets", targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&y| y >= v) {
            return Err(Error::Index(format!("target id {bad} with vocabulary {v}")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![F::zero(); t * v];
        let mut total = F::zero();
        let mut count = 0usize;
        for (i, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z = row.iter().map(|&l| (l - max).exp()).sum::<F>();
            let log_z = z.ln() + max;
            total += log_z - row[y];
            let p = &mut probs[i * v..(i + 1) * v];
            for (pj, &l) in p.iter_mut().zip(row) {
                *pj = (l - log_z).exp();
            }
            count += 1;
        }
        let loss = if count > 0 {
            total / F::lit(count as f64)
        } else {
            F::zero()
        };
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Gradient of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut out = Gradients::empty(self.params.len());
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |v: Var, t: Tensor<F>| {
                if self.requires_grad(v) {
                    match &mut grads[v.0] {
                        Some(e) => e.add_assign(&t),
                        slot @ None => *slot = Some(t),
                    }
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        out.accumulate(id, g);
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2()?;
                    let (br, bc) = tb.dims2()?;
                    let n = if *trans_b { br } else { bc };
                    let gm = MatRef::new(g.data(), m, n);
                    let am = MatRef::new(ta.data(), m, k);
                    let bm = MatRef::new(tb.data(), br, bc);
                    if self.requires_grad(*a) {
                        let mut da = vec![F::zero(); m * k];
                        // C = A·B → dA = dC·Bᵀ ;  C = A·Bᵀ → dA = dC·B
                        let rhs = if *trans_b { bm } else { bm.t() };
                        gemm(F::one(), gm, rhs, F::zero(), &mut da);
                        acc(*a, Tensor::from_parts(vec![m, k], da));
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![F::zero(); br * bc];
                        if *trans_b {
                            gemm(F::one(), gm.t(), am, F::zero(), &mut db);
                        } else {
                            gemm(F::one(), am.t(), gm, F::zero(), &mut db);
                        }
                        acc(*b, Tensor::from_parts(vec![br, bc], db));
                    }
                }
                Op::BatchMatMul { a, b, trans_b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (nb, m, k) = ta.dims3()?;
                    let (_, br, bc) = tb.dims3()?;
                    let n = if *trans_b { br } else { bc };
                    let need_a = self.requires_grad(*a);
                    let need_b = self.requires_grad(*b);
                    let mut da = vec![F::zero(); if need_a { nb * m * k } else { 0 }];
                    let mut db = vec![F::zero(); if need_b { nb * br * bc } else { 0 }];
                    for i in 0..nb {
                        let gm = MatRef::new(&g.data()[i * m * n..(i + 1) * m * n], m, n);
                        let am = MatRef::new(&ta.data()[i * m * k..(i + 1) * m * k], m, k);
                        let bm = MatRef::new(&tb.data()[i * br * bc..(i + 1) * br * bc], br, bc);
                        if need_a {
                            let rhs = if *trans_b { bm } else { bm.t() };
                            gemm(F::one(), gm, rhs, F::zero(), &mut da[i * m * k..(i + 1) * m * k]);
                        }
                        if need_b {
                            let dst = &mut db[i * br * bc..(i + 1) * br * bc];
                            if *trans_b {
                                gemm(F::one(), gm.t(), am, F::zero(), dst);
                            } else {
                                gemm(F::one(), am.t(), gm, F::zero(), dst);
                            }
                        }
                    }
                    if need_a {
                        acc(*a, Tensor::from_parts(vec![nb, m, k], da));
                    }
                    if need_b {
                        acc(*b, Tensor::from_parts(vec![nb, br, bc], db));
                    }
                }
                Op::Add { a, b } => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddBias { x, bias } => {
                    let d = g.last_dim();
                    let mut db = vec![F::zero(); d];
                    for row in g.data().chunks_exact(d) {
                        for (s, &v) in db.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(*bias, Tensor::from_parts(vec![d], db));
                    acc(*x, g);
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    acc(*x, g.map(|v| v * f));
                }
                Op::Sum { x } => {
                    let s = g.data()[0];
                    acc(*x, Tensor::full(self.value(*x).shape().to_vec(), s));
                }
                Op::Gelu { x } => {
                    let tx = self.value(*x);
                    let data = tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * gelu_grad(v))
                        .collect();
                    acc(*x, Tensor::from_parts(tx.shape().to_vec(), data));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let d = g.last_dim();
                    let tg = self.value(*gain).data();
                    let mut dgain = vec![F::zero(); d];
                    let mut dbias = vec![F::zero(); d];
                    let mut dx = vec![F::zero(); g.numel()];
                    let inv_d = F::one() / F::lit(d as f64);
                    for (r, grow) in g.data().chunks_exact(d).enumerate() {
                        let h = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = F::zero();
                        let mut mean_dh_h = F::zero();
                        for j in 0..d {
                            dgain[j] += grow[j] * h[j];
                            dbias[j] += grow[j];
                            let dh = grow[j] * tg[j];
                            mean_dh += dh;
                            mean_dh_h += dh * h[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            let dh = grow[j] * tg[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                    acc(*gain, Tensor::from_parts(vec![d], dgain));
                    acc(*bias, Tensor::from_parts(vec![d], dbias));
                    acc(*x, Tensor::from_parts(g.shape().to_vec(), dx));
                }
                Op::CausalSoftmax { x } => {
                    let y = self.value(Var(i));
                    let t = y.last_dim();
                    let mut dx = vec![F::zero(); y.numel()];
                    for (r, ((yr, gr), dr)) in y
                        .data()
                        .chunks_exact(t)
                        .zip(g.data().chunks_exact(t))
                        .zip(dx.chunks_exact_mut(t))
                        .enumerate()
                    {
                        let visible = r % t + 1;
                        let dot: F = (0..visible).map(|j| yr[j] * gr[j]).sum();
                        for j in 0..visible {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*x, Tensor::from_parts(y.shape().to_vec(), dx));
                }
                Op::MaskHeads { x, keep } => {
                    let mut g = g;
                    let per = g.numel() / keep.len();
                    for (chunk, &k) in g.data_mut().chunks_exact_mut(per).zip(keep) {
                        if !k {
                            chunk.fill(F::zero());
                        }
                    }
                    acc(*x, g);
                }
                Op::SplitHeads { x, offset, heads } => {
                    let (t, c) = self.value(*x).dims2()?;
                    let dh = g.last_dim();
                    let mut dx = vec![F::zero(); t * c];
                    for h in 0..*heads {
                        for r in 0..t {
                            let from = (h * t + r) * dh;
                            let to = r * c + offset + h * dh;
                            dx[to..to + dh].copy_from_slice(&g.data()[from..from + dh]);
                        }
                    }
                    acc(*x, Tensor::from_parts(vec![t, c], dx));
                }
                Op::MergeHeads { x } => {
                    let (h, t, dh) = self.value(*x).dims3()?;
                    let mut dx = vec![F::zero(); h * t * dh];
                    for hh in 0..h {
                        for r in 0..t {
                            let to = (hh * t + r) * dh;
                            let from = r * h * dh + hh * dh;
                            dx[to..to + dh].copy_from_slice(&g.data()[from..from + dh]);
                        }
                    }
                    acc(*x, Tensor::from_parts(vec![h, t, dh], dx));
                }
                Op::Gather { table, ids } => {
                    let (v, d) = self.value(*table).dims2()?;
                    let mut dt = vec![F::zero(); v * d];
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, &gv) in dt[id * d..(id + 1) * d].iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *s += gv;
                        }
                    }
                    acc(*table, Tensor::from_parts(vec![v, d], dt));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let (t, v) = self.value(*logits).dims2()?;
                    let mut dl = vec![F::zero(); t * v];
                    if *count > 0 {
                        let scale = g.data()[0] / F::lit(*count as f64);
                        for (r, target) in targets.iter().enumerate() {
                            let Some(y) = *target else { continue };
                            for j in 0..v {
                                dl[r * v + j] = probs[r * v + j] * scale;
                            }
                            dl[r * v + y] -= scale;
                        }
                    }
                    acc(*logits, Tensor::from_parts(vec![t, v], dl));
                }
            }
        }
        Ok(out)
    }
}

fn gelu_fwd<F: Scalar>(x: F) -> F {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = F::lit(0.5);
    half * x * (F::one() + (c * (x + F::lit(GELU_COEF) * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = F::lit(0.5);
    let k = F::lit(GELU_COEF);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * k * x * x)
}
