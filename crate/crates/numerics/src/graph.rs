//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradients of all nodes that require them. Parameter leaves are created on
//! demand from a borrowed [`ParamStore`], once per graph, so a weight shared by
//! every sample in a batch accumulates into a single gradient buffer.
//!
//! Broadcasting in `add`, `sub`, `mul` and `div` follows the right-aligned
//! rule documented on [`broadcast_shape`]. `matmul` is strictly 2-D.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{invalid, shape_err, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{broadcast_shape, Bcast, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Gelu,
    Silu,
    Sigmoid,
    Tanh,
    Abs,
    Exp,
    Log,
    Sqrt,
    Square,
    Neg,
}

/// Precomputed rotation angles for rotary embeddings: one `(cos, sin)` pair per
/// token and per rotated channel pair within a head.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    pub tokens: usize,
    pub pairs: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Scalar> RopeTable<T> {
    pub fn from_angles(tokens: usize, pairs: usize, angles: &[f64]) -> Self {
        assert_eq!(angles.len(), tokens * pairs);
        Self {
            tokens,
            pairs,
            cos: angles.iter().map(|a| T::lit(a.cos())).collect(),
            sin: angles.iter().map(|a| T::lit(a.sin())).collect(),
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast, Bcast),
    Sub(Var, Var, Bcast, Bcast),
    Mul(Var, Var, Bcast, Bcast),
    Div(Var, Var, Bcast, Bcast),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Rope {
        x: Var,
        heads: usize,
        table: Arc<RopeTable<T>>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<ParamId, Var>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    /// Parameter gradients in parameter order.
    pub fn params(&self) -> Vec<(ParamId, &[T])> {
        let mut out: Vec<(ParamId, &[T])> = self
            .params
            .iter()
            .filter_map(|(p, v)| self.wrt(*v).map(|g| (*p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

fn acc_slot<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    /// A graph with no parameter store, for operating on plain inputs.
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Leaf holding a constant; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (used for inputs under test).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies the current value of `v` into a fresh constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.param_leaves.insert(id, v);
        v
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: fn(Var, Var, Bcast, Bcast) -> Op<T>,
    ) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(op, &sa, &sb)?;
        let ba = Bcast::plan(&sa, &out_shape);
        let bb = Bcast::plan(&sb, &out_shape);
        let da = self.data(a);
        let db = self.data(b);
        let n: usize = out_shape.iter().product();
        let data: Vec<T> = match (&ba, &bb) {
            (Bcast::Same, Bcast::Same) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            (Bcast::Same, Bcast::Cycle(p)) => {
                let p = *p;
                let mut out = Vec::with_capacity(n);
                for chunk in da.chunks(p) {
                    out.extend(chunk.iter().zip(db).map(|(&x, &y)| f(x, y)));
                }
                out
            }
            _ => (0..n).map(|i| f(da[ba.index(i)], db[bb.index(i)])).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&out_shape, data)?, make(a, b, ba, bb), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(t.shape(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x + s).collect();
        let t = Tensor::new(t.shape(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let t = self.value(a);
        let f: fn(T) -> T = match kind {
            Unary::Gelu => kernels::gelu,
            Unary::Silu => |x| x * kernels::sigmoid(x),
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Tanh => |x| x.tanh(),
            Unary::Abs => |x| x.abs(),
            Unary::Exp => |x| x.exp(),
            Unary::Log => |x| x.ln(),
            Unary::Sqrt => |x| x.sqrt(),
            Unary::Square => |x| x * x,
            Unary::Neg => |x| -x,
        };
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(t.shape(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Unary(a, kind), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = *t.shape().last().unwrap_or(&1);
        let mut out = vec![T::zero(); t.len()];
        kernels::softmax_rows(t.data(), &mut out, cols);
        let t = Tensor::new(t.shape(), out).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Layer normalization over the last dimension (ε = 1e-5) with optional
    /// elementwise affine `gamma`, `beta` of that dimension's extent.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().unwrap_or(&1);
        for p in [gamma, beta].into_iter().flatten() {
            if self.value(p).len() != cols {
                return Err(shape_err("layer_norm", &shape, self.shape(p)));
            }
        }
        let (xhat, rstd) = kernels::layer_norm_rows(self.data(x), cols);
        let mut out = xhat.clone();
        if let Some(gm) = gamma {
            let gd = self.data(gm);
            for row in out.chunks_mut(cols) {
                for (o, &gv) in row.iter_mut().zip(gd) {
                    *o *= gv;
                }
            }
        }
        if let Some(bt) = beta {
            let bd = self.data(bt);
            for row in out.chunks_mut(cols) {
                for (o, &bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(x) || gamma.is_some_and(|v| self.rg(v)) || beta.is_some_and(|v| self.rg(v));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = T::zero();
        for &x in self.data(a) {
            s += x;
        }
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let mut s = T::zero();
        for &x in self.data(a) {
            s += x;
        }
        s /= T::lit(n as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let d = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > c {
            return Err(invalid(
                "slice_cols",
                format!("columns {start}..{} out of range for {c}", start + len),
            ));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[r, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat_rows", "no inputs"))?;
        let (_, c) = self.value(*first).dims2()?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(shape_err("concat_rows", self.shape(*first), self.shape(p)));
            }
            out.extend_from_slice(self.data(p));
            rows += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[rows, c], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat_cols", "no inputs"))?;
        let (r, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(shape_err("concat_cols", self.shape(*first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row gather: output row `i` is input row `idx[i]`. Doubles as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(invalid("gather_rows", format!("row {bad} out of range for {r} rows")));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[idx.len(), c], out)?,
            Op::GatherRows { x, idx: idx.to_vec() },
            rg,
        ))
    }

    /// Scaled dot-product attention split over `heads`. `mask[j] == false`
    /// removes key `j` for every query; a query with no visible key outputs zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Option<&[bool]>) -> Result<Var> {
        let (tq, dim) = self.value(q).dims2()?;
        let (tk, dk) = self.value(k).dims2()?;
        let (tv, dv) = self.value(v).dims2()?;
        if dk != dim || dv != dim || tv != tk {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(invalid(
                "attention",
                format!("dimension {dim} is not divisible by {heads} heads"),
            ));
        }
        if let Some(m) = mask {
            if m.len() != tk {
                return Err(invalid("attention", format!("mask has {} entries for {tk} keys", m.len())));
            }
        }
        let (out, probs) = kernels::attention(self.data(q), self.data(k), self.data(v), tq, tk, dim, heads, mask);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(Tensor::new(&[tq, dim], out)?, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// Attention probabilities `[heads, tq, tk]` recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Rotates adjacent channel pairs `(2p, 2p+1)` of every head by the angles in `table`.
    pub fn rope(&mut self, x: Var, heads: usize, table: Arc<RopeTable<T>>) -> Result<Var> {
        let (t, dim) = self.value(x).dims2()?;
        if heads == 0
            || dim % heads != 0
            || !(dim / heads).is_multiple_of(2)
            || table.pairs * 2 != dim / heads
            || table.tokens != t
        {
            return Err(invalid(
                "rope",
                format!(
                    "input [{t}, {dim}] with {heads} heads does not fit a table of {} tokens x {} pairs",
                    table.tokens, table.pairs
                ),
            ));
        }
        let out = rope_apply(self.data(x), t, dim, heads, &table, false);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[t, dim], out)?, Op::Rope { x, heads, table }, rg))
    }

    /// Mean binary cross-entropy of `logits` against constant targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let d = self.data(logits);
        if d.len() != targets.len() {
            return Err(shape_err("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        let mut s = T::zero();
        for (&x, &y) in d.iter().zip(targets) {
            s += kernels::bce_with_logits(x, y);
        }
        s /= T::lit(d.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(s),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared difference against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("mse", self.shape(pred), target.shape()));
        }
        let t = self.constant(target.clone());
        let d = self.sub(pred, t)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.backprop_node(i, g, lo);
        }
        let params = self.param_leaves.iter().map(|(&p, &v)| (p, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[T], lo: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let len_of = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let da = acc_slot(&mut lo[a.0], m * k);
                    kernels::matmul_grad_a(g, self.data(*b), da, m, k, n);
                }
                if self.rg(*b) {
                    let db = acc_slot(&mut lo[b.0], k * n);
                    kernels::matmul_grad_b(self.data(*a), g, db, m, k, n);
                }
            }
            Op::Add(a, b, ba, bb) | Op::Sub(a, b, ba, bb) => {
                let neg = matches!(node.op, Op::Sub(..));
                if self.rg(*a) {
                    let da = acc_slot(&mut lo[a.0], len_of(*a));
                    for (j, &gv) in g.iter().enumerate() {
                        da[ba.index(j)] += gv;
                    }
                }
                if self.rg(*b) {
                    let db = acc_slot(&mut lo[b.0], len_of(*b));
                    for (j, &gv) in g.iter().enumerate() {
                        if neg {
                            db[bb.index(j)] -= gv;
                        } else {
                            db[bb.index(j)] += gv;
                        }
                    }
                }
            }
            Op::Mul(a, b, ba, bb) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    let da = acc_slot(&mut lo[a.0], av.len());
                    for (j, &gv) in g.iter().enumerate() {
                        da[ba.index(j)] += gv * bv[bb.index(j)];
                    }
                }
                if self.rg(*b) {
                    let db = acc_slot(&mut lo[b.0], bv.len());
                    for (j, &gv) in g.iter().enumerate() {
                        db[bb.index(j)] += gv * av[ba.index(j)];
                    }
                }
            }
            Op::Div(a, b, ba, bb) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    let da = acc_slot(&mut lo[a.0], av.len());
                    for (j, &gv) in g.iter().enumerate() {
                        da[ba.index(j)] += gv / bv[bb.index(j)];
                    }
                }
                if self.rg(*b) {
                    let db = acc_slot(&mut lo[b.0], bv.len());
                    for (j, &gv) in g.iter().enumerate() {
                        let y = bv[bb.index(j)];
                        db[bb.index(j)] -= gv * av[ba.index(j)] / (y * y);
                    }
                }
            }
            Op::Scale(a, s) => {
                let da = acc_slot(&mut lo[a.0], g.len());
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv * *s;
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let da = acc_slot(&mut lo[a.0], g.len());
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Unary(a, kind) => {
                let x = self.data(*a);
                let y = node.value.data();
                let da = acc_slot(&mut lo[a.0], g.len());
                for j in 0..g.len() {
                    let (xv, yv) = (x[j], y[j]);
                    let dydx = match kind {
                        Unary::Gelu => kernels::gelu_grad(xv),
                        Unary::Silu => {
                            let s = kernels::sigmoid(xv);
                            s * (T::one() + xv * (T::one() - s))
                        }
                        Unary::Sigmoid => yv * (T::one() - yv),
                        Unary::Tanh => T::one() - yv * yv,
                        Unary::Abs => xv.signum(),
                        Unary::Exp => yv,
                        Unary::Log => T::one() / xv,
                        Unary::Sqrt => T::lit(0.5) / yv,
                        Unary::Square => T::lit(2.0) * xv,
                        Unary::Neg => -T::one(),
                    };
                    da[j] += g[j] * dydx;
                }
            }
            Op::Softmax(a) => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                let da = acc_slot(&mut lo[a.0], g.len());
                kernels::softmax_rows_grad(node.value.data(), g, da, cols);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                if let Some(bt) = beta.filter(|b| self.rg(*b)) {
                    let db = acc_slot(&mut lo[bt.0], cols);
                    for row in g.chunks(cols) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
                if let Some(gm) = gamma.filter(|v| self.rg(*v)) {
                    let dg = acc_slot(&mut lo[gm.0], cols);
                    for (row, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((d, &gv), &xh) in dg.iter_mut().zip(row).zip(xr) {
                            *d += gv * xh;
                        }
                    }
                }
                if self.rg(*x) {
                    let dxhat: Vec<T> = match gamma {
                        Some(gm) => {
                            let gd = self.data(*gm);
                            g.chunks(cols)
                                .flat_map(|row| row.iter().zip(gd).map(|(&a, &b)| a * b).collect::<Vec<_>>())
                                .collect()
                        }
                        None => g.to_vec(),
                    };
                    let dx = acc_slot(&mut lo[x.0], g.len());
                    kernels::layer_norm_rows_grad(xhat, rstd, &dxhat, dx, cols);
                }
            }
            Op::Sum(a) => {
                let n = len_of(*a);
                let da = acc_slot(&mut lo[a.0], n);
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let n = len_of(*a);
                let gv = g[0] / T::lit(n as f64);
                let da = acc_slot(&mut lo[a.0], n);
                for d in da.iter_mut() {
                    *d += gv;
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let da = acc_slot(&mut lo[a.0], r * c);
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let w = node.value.shape()[1];
                let dx = acc_slot(&mut lo[x.0], r * c);
                for i in 0..r {
                    for j in 0..w {
                        dx[i * c + start + j] += g[i * w + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = len_of(*p);
                    if self.rg(*p) {
                        let dp = acc_slot(&mut lo[p.0], n);
                        for (d, &gv) in dp.iter_mut().zip(&g[off..off + n]) {
                            *d += gv;
                        }
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let r = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut c0 = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.rg(*p) {
                        let dp = acc_slot(&mut lo[p.0], r * w);
                        for i in 0..r {
                            for j in 0..w {
                                dp[i * w + j] += g[i * total + c0 + j];
                            }
                        }
                    }
                    c0 += w;
                }
            }
            Op::GatherRows { x, idx } => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let dx = acc_slot(&mut lo[x.0], r * c);
                for (o, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[src * c + j] += g[o * c + j];
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, dim) = self.value(*q).dims2().unwrap();
                let tk = self.shape(*k)[0];
                let mut dq = self.rg(*q).then(|| vec![T::zero(); tq * dim]);
                let mut dk = self.rg(*k).then(|| vec![T::zero(); tk * dim]);
                let mut dv = self.rg(*v).then(|| vec![T::zero(); tk * dim]);
                kernels::attention_grad(
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    probs,
                    g,
                    tq,
                    tk,
                    dim,
                    *heads,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(d) = d {
                        let slot = acc_slot(&mut lo[var.0], d.len());
                        for (s, x) in slot.iter_mut().zip(d) {
                            *s += x;
                        }
                    }
                }
            }
            Op::Rope { x, heads, table } => {
                let (t, dim) = self.value(*x).dims2().unwrap();
                let back = rope_apply(g, t, dim, *heads, table, true);
                let dx = acc_slot(&mut lo[x.0], t * dim);
                for (d, b) in dx.iter_mut().zip(back) {
                    *d += b;
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.data(*logits);
                let n = T::lit(x.len() as f64);
                let dx = acc_slot(&mut lo[logits.0], x.len());
                for j in 0..x.len() {
                    dx[j] += g[0] * (kernels::sigmoid(x[j]) - targets[j]) / n;
                }
            }
        }
    }
}

fn rope_apply<T: Scalar>(x: &[T], t: usize, dim: usize, heads: usize, table: &RopeTable<T>, inverse: bool) -> Vec<T> {
    let dh = dim / heads;
    let mut out = vec![T::zero(); x.len()];
    for tok in 0..t {
        for h in 0..heads {
            for p in 0..table.pairs {
                let c = table.cos[tok * table.pairs + p];
                let mut s = table.sin[tok * table.pairs + p];
                if inverse {
                    s = -s;
                }
                let i0 = tok * dim + h * dh + 2 * p;
                let (a, b) = (x[i0], x[i0 + 1]);
                out[i0] = a * c - b * s;
                out[i0 + 1] = a * s + b * c;
            }
        }
    }
    out
}
