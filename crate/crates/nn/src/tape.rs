//! Reverse-mode autodiff over a recorded list of matrix ops.

use milpmt_core::Scalar;

use crate::loss::{infonce_forward, infonce_grad};
use crate::tensor::Tensor;
use crate::NnError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    LeakyRelu(usize, T),
    Sigmoid(usize),
    GatherRows(usize, Vec<usize>),
    HeadDot {
        x: usize,
        att: usize,
        heads: usize,
    },
    SegmentSoftmax {
        x: usize,
        seg: Vec<usize>,
        num_seg: usize,
    },
    ScatterHeads {
        alpha: usize,
        vals: usize,
        dst: Vec<usize>,
        heads: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaskSelectRows(usize, usize, Vec<bool>),
    MeanRows(usize),
    ConcatCols(usize, usize),
    GroupActivation(usize, Vec<(usize, usize)>),
    InfoNce {
        pred: usize,
        pos: Vec<Vec<T>>,
        neg: Vec<Vec<T>>,
        tau: T,
    },
    Sum(Vec<usize>),
    Scale(usize, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Records a forward computation; [`backward`](Tape::backward) may run once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    freed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn head_width(cols: usize, heads: usize) -> usize {
    assert!(heads > 0 && cols % heads == 0, "{cols} columns not divisible by {heads} heads");
    cols / heads
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            freed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        let mut value = value;
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradients accumulate for it when `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Op::Leaf, &[])
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.push(t, Op::Leaf, &[])
    }

    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let mut t = t.clone();
        t.requires_grad = true;
        self.push(t, Op::Leaf, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(k, tb.rows(), "matmul inner dimensions");
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &tb.data[p * c..(p + 1) * c];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push(Tensor::matrix(r, c, out), Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        let c = ta.cols();
        assert_eq!(tb.len(), c, "bias width");
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| v + tb.data[k % c])
            .collect();
        self.push(Tensor::matrix(ta.rows(), c, data), Op::AddBias(a.0, b.0), &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        assert_eq!(ta.shape, tb.shape, "add shapes");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x + y).collect();
        self.push(Tensor::matrix(ta.rows(), ta.cols(), data), Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let slope = T::lit(slope);
        let ta = self.val(a.0);
        let data = ta
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect();
        self.push(Tensor::matrix(ta.rows(), ta.cols(), data), Op::LeakyRelu(a.0, slope), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.val(a.0);
        let data = ta.data.iter().map(|&v| sigmoid(v)).collect();
        self.push(Tensor::matrix(ta.rows(), ta.cols(), data), Op::Sigmoid(a.0), &[a.0])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let ta = self.val(a.0);
        let c = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &r in idx {
            data.extend_from_slice(ta.row(r));
        }
        self.push(
            Tensor::matrix(idx.len(), c, data),
            Op::GatherRows(a.0, idx.to_vec()),
            &[a.0],
        )
    }

    /// `out[e, h] = Σ_{k ∈ head h} x[e, k] · att[k]`.
    pub fn head_dot(&mut self, x: Var, att: Var, heads: usize) -> Var {
        let (tx, ta) = (self.val(x.0), self.val(att.0));
        let c = tx.cols();
        assert_eq!(ta.len(), c, "attention vector width");
        let w = head_width(c, heads);
        let mut out = vec![T::zero(); tx.rows() * heads];
        for e in 0..tx.rows() {
            let row = tx.row(e);
            for h in 0..heads {
                let mut s = T::zero();
                for k in h * w..(h + 1) * w {
                    s += row[k] * ta.data[k];
                }
                out[e * heads + h] = s;
            }
        }
        self.push(
            Tensor::matrix(tx.rows(), heads, out),
            Op::HeadDot {
                x: x.0,
                att: att.0,
                heads,
            },
            &[x.0, att.0],
        )
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize], num_seg: usize) -> Var {
        let tx = self.val(x.0);
        let (rows, c) = (tx.rows(), tx.cols());
        assert_eq!(seg.len(), rows, "segment ids per row");
        let mut max = vec![T::neg_infinity(); num_seg * c];
        for e in 0..rows {
            for h in 0..c {
                let m = &mut max[seg[e] * c + h];
                *m = m.max(tx.data[e * c + h]);
            }
        }
        let mut out = vec![T::zero(); rows * c];
        let mut denom = vec![T::zero(); num_seg * c];
        for e in 0..rows {
            for h in 0..c {
                let v = (tx.data[e * c + h] - max[seg[e] * c + h]).exp();
                out[e * c + h] = v;
                denom[seg[e] * c + h] += v;
            }
        }
        for e in 0..rows {
            for h in 0..c {
                out[e * c + h] /= denom[seg[e] * c + h];
            }
        }
        self.push(
            Tensor::matrix(rows, c, out),
            Op::SegmentSoftmax {
                x: x.0,
                seg: seg.to_vec(),
                num_seg,
            },
            &[x.0],
        )
    }

    /// `out[dst[e], k] += alpha[e, head(k)] · vals[e, k]`.
    pub fn scatter_heads(&mut self, alpha: Var, vals: Var, dst: &[usize], num_dst: usize, heads: usize) -> Var {
        let (ta, tv) = (self.val(alpha.0), self.val(vals.0));
        let c = tv.cols();
        let w = head_width(c, heads);
        assert_eq!(ta.cols(), heads);
        assert_eq!(ta.rows(), tv.rows());
        assert_eq!(dst.len(), tv.rows());
        let mut out = vec![T::zero(); num_dst * c];
        for (e, &d) in dst.iter().enumerate() {
            for k in 0..c {
                out[d * c + k] += ta.data[e * heads + k / w] * tv.data[e * c + k];
            }
        }
        self.push(
            Tensor::matrix(num_dst, c, out),
            Op::ScatterHeads {
                alpha: alpha.0,
                vals: vals.0,
                dst: dst.to_vec(),
                heads,
            },
            &[alpha.0, vals.0],
        )
    }

    /// Per-row normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (tx, tg, tb) = (self.val(x.0), self.val(gamma.0), self.val(beta.0));
        let (rows, c) = (tx.rows(), tx.cols());
        assert_eq!(tg.len(), c);
        assert_eq!(tb.len(), c);
        let nc = T::from_usize_lossy(c);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = vec![T::zero(); rows * c];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * c];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() / nc;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nc;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[r * c + k] = h;
                out[r * c + k] = h * tg.data[k] + tb.data[k];
            }
        }
        self.push(
            Tensor::matrix(rows, c, out),
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        )
    }

    /// Row `r` from `a` where `mask[r]`, else from `b`.
    pub fn mask_select_rows(&mut self, a: Var, b: Var, mask: &[bool]) -> Var {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        assert_eq!(ta.shape, tb.shape);
        assert_eq!(mask.len(), ta.rows());
        let mut data = Vec::with_capacity(ta.len());
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { ta.row(r) } else { tb.row(r) });
        }
        self.push(
            Tensor::matrix(ta.rows(), ta.cols(), data),
            Op::MaskSelectRows(a.0, b.0, mask.to_vec()),
            &[a.0, b.0],
        )
    }

    /// Column means as a `1 × cols` row; zeros for an empty input.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.val(a.0);
        let (rows, c) = (ta.rows(), ta.cols());
        let mut out = vec![T::zero(); c];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        if rows > 0 {
            let nr = T::from_usize_lossy(rows);
            out.iter_mut().for_each(|o| *o /= nr);
        }
        self.push(Tensor::matrix(1, c, out), Op::MeanRows(a.0), &[a.0])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        assert_eq!(ta.rows(), tb.rows());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        self.push(
            Tensor::matrix(ta.rows(), ta.cols() + tb.cols(), data),
            Op::ConcatCols(a.0, b.0),
            &[a.0, b.0],
        )
    }

    /// Softmax over each `(start, len)` column group of every row, sigmoid
    /// on all other columns.
    pub fn group_activation(&mut self, a: Var, groups: &[(usize, usize)]) -> Var {
        let ta = self.val(a.0);
        let c = ta.cols();
        let mut in_group = vec![false; c];
        for &(s, l) in groups {
            in_group[s..s + l].iter_mut().for_each(|g| *g = true);
        }
        let mut out = vec![T::zero(); ta.len()];
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let o = &mut out[r * c..(r + 1) * c];
            for k in 0..c {
                if !in_group[k] {
                    o[k] = sigmoid(row[k]);
                }
            }
            for &(s, l) in groups {
                let m = row[s..s + l].iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in s..s + l {
                    o[k] = (row[k] - m).exp();
                    z += o[k];
                }
                o[s..s + l].iter_mut().for_each(|v| *v /= z);
            }
        }
        self.push(
            Tensor::matrix(ta.rows(), c, out),
            Op::GroupActivation(a.0, groups.to_vec()),
            &[a.0],
        )
    }

    /// Contrastive loss of the flattened prediction against sample vectors.
    pub fn infonce(&mut self, pred: Var, pos: &[Vec<T>], neg: &[Vec<T>], tau: T) -> Result<Var, NnError> {
        let p = &self.val(pred.0).data;
        let loss = infonce_forward(p, pos, neg, tau)?;
        Ok(self.push(
            Tensor::matrix(1, 1, vec![loss]),
            Op::InfoNce {
                pred: pred.0,
                pos: pos.to_vec(),
                neg: neg.to_vec(),
                tau,
            },
            &[pred.0],
        ))
    }

    /// Sum of `1 × 1` values.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut s = T::zero();
        for x in xs {
            assert_eq!(self.val(x.0).len(), 1, "sum takes scalars");
            s += self.val(x.0).data[0];
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        self.push(Tensor::matrix(1, 1, vec![s]), Op::Sum(ids.clone()), &ids)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ta = self.val(a.0);
        let data = ta.data.iter().map(|&v| v * c).collect();
        self.push(Tensor::matrix(ta.rows(), ta.cols(), data), Op::Scale(a.0, c), &[a.0])
    }

    /// Mean of `1 × 1` values.
    pub fn mean(&mut self, xs: &[Var]) -> Var {
        let s = self.sum(xs);
        self.scale(s, T::one() / T::from_usize_lossy(xs.len().max(1)))
    }

    /// Back-propagates from the scalar `loss`. Intermediate values are
    /// released afterwards, so a second call fails with `GraphFreed`.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if self.freed {
            return Err(NnError::GraphFreed);
        }
        if self.val(loss.0).len() != 1 {
            return Err(NnError::DimMismatch("backward needs a scalar loss".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
                node.value.data = Vec::new();
            }
            node.op = Op::Leaf;
        }
        self.grads = grads;
        self.freed = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[j].requires_grad {
                return;
            }
            let buf = grads[j].get_or_insert_with(|| vec![T::zero(); nodes[j].value.len()]);
            f(buf);
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (r, k, c) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |ga| {
                    for row in 0..r {
                        let grow = &g[row * c..(row + 1) * c];
                        for p in 0..k {
                            let brow = &tb.data[p * c..(p + 1) * c];
                            let mut s = T::zero();
                            for (x, y) in grow.iter().zip(brow) {
                                s += *x * *y;
                            }
                            ga[row * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for row in 0..r {
                        let grow = &g[row * c..(row + 1) * c];
                        for p in 0..k {
                            let av = ta.data[row * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for (o, &x) in gb[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *o += av * x;
                            }
                        }
                    }
                });
            }
            Op::AddBias(a, b) => {
                let c = out.cols();
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(*b, &mut |gb| {
                    for (k, &x) in g.iter().enumerate() {
                        gb[k % c] += x;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
            Op::LeakyRelu(a, slope) => {
                let x = &nodes[*a].value.data;
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] += if x[k] > T::zero() { g[k] } else { g[k] * *slope };
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc(*a, &mut |ga| {
                    for k in 0..g.len() {
                        let y = out.data[k];
                        ga[k] += g[k] * y * (T::one() - y);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let c = out.cols();
                acc(*a, &mut |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        for k in 0..c {
                            ga[src * c + k] += g[r * c + k];
                        }
                    }
                });
            }
            Op::HeadDot { x, att, heads } => {
                let (tx, ta) = (&nodes[*x].value, &nodes[*att].value);
                let c = tx.cols();
                let w = c / heads;
                acc(*x, &mut |gx| {
                    for e in 0..tx.rows() {
                        for k in 0..c {
                            gx[e * c + k] += g[e * heads + k / w] * ta.data[k];
                        }
                    }
                });
                acc(*att, &mut |gatt| {
                    for e in 0..tx.rows() {
                        for k in 0..c {
                            gatt[k] += g[e * heads + k / w] * tx.data[e * c + k];
                        }
                    }
                });
            }
            Op::SegmentSoftmax { x, seg, num_seg } => {
                let c = out.cols();
                let mut dot = vec![T::zero(); num_seg * c];
                for (e, &s) in seg.iter().enumerate() {
                    for h in 0..c {
                        dot[s * c + h] += out.data[e * c + h] * g[e * c + h];
                    }
                }
                acc(*x, &mut |gx| {
                    for (e, &s) in seg.iter().enumerate() {
                        for h in 0..c {
                            let y = out.data[e * c + h];
                            gx[e * c + h] += y * (g[e * c + h] - dot[s * c + h]);
                        }
                    }
                });
            }
            Op::ScatterHeads {
                alpha,
                vals,
                dst,
                heads,
            } => {
                let (ta, tv) = (&nodes[*alpha].value, &nodes[*vals].value);
                let c = tv.cols();
                let w = c / heads;
                acc(*alpha, &mut |galpha| {
                    for (e, &d) in dst.iter().enumerate() {
                        for k in 0..c {
                            galpha[e * heads + k / w] += g[d * c + k] * tv.data[e * c + k];
                        }
                    }
                });
                acc(*vals, &mut |gv| {
                    for (e, &d) in dst.iter().enumerate() {
                        for k in 0..c {
                            gv[e * c + k] += g[d * c + k] * ta.data[e * heads + k / w];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let rows = out.rows();
                let tg = &nodes[*gamma].value;
                acc(*gamma, &mut |gg| {
                    for k in 0..g.len() {
                        gg[k % c] += g[k] * xhat[k];
                    }
                });
                acc(*beta, &mut |gb| {
                    for k in 0..g.len() {
                        gb[k % c] += g[k];
                    }
                });
                let nc = T::from_usize_lossy(c);
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for k in 0..c {
                            let d = g[r * c + k] * tg.data[k];
                            s1 += d;
                            s2 += d * xhat[r * c + k];
                        }
                        for k in 0..c {
                            let d = g[r * c + k] * tg.data[k];
                            gx[r * c + k] += inv_std[r] / nc * (nc * d - s1 - xhat[r * c + k] * s2);
                        }
                    }
                });
            }
            Op::MaskSelectRows(a, b, mask) => {
                let c = out.cols();
                acc(*a, &mut |ga| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for k in 0..c {
                                ga[r * c + k] += g[r * c + k];
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (r, &m) in mask.iter().enumerate() {
                        if !m {
                            for k in 0..c {
                                gb[r * c + k] += g[r * c + k];
                            }
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let ta = &nodes[*a].value;
                let (rows, c) = (ta.rows(), ta.cols());
                if rows > 0 {
                    let nr = T::from_usize_lossy(rows);
                    acc(*a, &mut |ga| {
                        for r in 0..rows {
                            for k in 0..c {
                                ga[r * c + k] += g[k] / nr;
                            }
                        }
                    });
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (nodes[*a].value.cols(), nodes[*b].value.cols());
                let c = ca + cb;
                let rows = out.rows();
                acc(*a, &mut |ga| {
                    for r in 0..rows {
                        for k in 0..ca {
                            ga[r * ca + k] += g[r * c + k];
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for r in 0..rows {
                        for k in 0..cb {
                            gb[r * cb + k] += g[r * c + ca + k];
                        }
                    }
                });
            }
            Op::GroupActivation(a, groups) => {
                let c = out.cols();
                let mut in_group = vec![false; c];
                for &(s, l) in groups {
                    in_group[s..s + l].iter_mut().for_each(|v| *v = true);
                }
                acc(*a, &mut |ga| {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        for k in 0..c {
                            if !in_group[k] {
                                ga[r * c + k] += gr[k] * y[k] * (T::one() - y[k]);
                            }
                        }
                        for &(s, l) in groups {
                            let dot: T = (s..s + l).map(|k| y[k] * gr[k]).sum();
                            for k in s..s + l {
                                ga[r * c + k] += y[k] * (gr[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::InfoNce { pred, pos, neg, tau } => {
                let p = &nodes[*pred].value.data;
                let dp = infonce_grad(p, pos, neg, *tau);
                acc(*pred, &mut |gp| {
                    for k in 0..gp.len() {
                        gp[k] += g[0] * dp[k];
                    }
                });
            }
            Op::Sum(xs) => {
                for &x in xs {
                    acc(x, &mut |gx| gx[0] += g[0]);
                }
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x * *c));
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
