//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value; node inputs
//! always precede the node, so a single reverse sweep visits each node once.

use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Additive attention mask for hidden key positions.
pub const MASK_NEG: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Tanh(Var),
    Gelu(Var),
    AddRowBias(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MaskCols(Var),
    MeanRowsMasked {
        x: Var,
        keep: Vec<bool>,
        count: usize,
    },
    Sum(Var),
    Cosine {
        u: Var,
        v: Var,
        denom: T,
        clamped: bool,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `target`'s stored gradient.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => {
                if target.requires_grad() && target.grad().is_none() {
                    target.accumulate_grad(&vec![T::zero(); target.len()])?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / cols, cols)
}

fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let s = c * (x + a * x * x * x);
    let t = s.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::of(3.0) * a * x * x);
    (y, dy)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(shape, value, op, needs_grad))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape shapes are valid")
    }

    /// Records a leaf; it participates in differentiation iff the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o = *o + x * y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("matmul", vec![m, n], out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[2]));
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let v = self.value(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(a), ng))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        self.push_checked(name, shape, out, op, ng)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push_checked(name, shape, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, |x| x.abs(), Op::Abs(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, |x| gelu(x).0, Op::Gelu(a))
    }

    /// `x[i, :] + b` for every row `i`; the only broadcast supported.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, cols) = split_last(self.shape(x));
        if self.shape(b) != [cols] {
            return Err(Error::dim("add_row_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bv).map(|(&p, &q)| p + q))
            .collect();
        let ng = self.ng(x) || self.ng(b);
        let shape = self.shape(x).to_vec();
        self.push_checked("add_row_bias", shape, out, Op::AddRowBias(x, b), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = split_last(self.shape(x));
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        self.push_checked("softmax_rows", shape, out, Op::SoftmaxRows(x), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (rows, d) = split_last(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        if eps <= T::zero() {
            return Err(Error::input("layer_norm eps must be positive"));
        }
        let dn = T::from_usize(d).expect("small int");
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let shape = self.shape(x).to_vec();
        self.push_checked(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Row lookup `table[ids[i], :]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", s, &[2]));
        }
        let (rows, cols) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(Error::input("gather_rows needs at least one id"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::input(format!("row id {bad} out of range for {rows} rows")));
        }
        let tv = self.value(table);
        let out = ids
            .iter()
            .flat_map(|&i| tv[i * cols..(i + 1) * cols].iter().copied())
            .collect();
        let ng = self.ng(table);
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = split_last(self.shape(x));
        if width == 0 || start + width > cols {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, width]));
        }
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|r| r[start..start + width].iter().copied())
            .collect();
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("non-empty") = width;
        let _ = rows;
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::SliceCols { x, start }, ng))
    }

    /// Concatenation along the last dimension; leading dimensions must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::input("concat_cols needs at least one input"))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::dim("concat_cols", self.shape(first), s));
            }
        }
        let (rows, _) = split_last(self.shape(first));
        let widths: Vec<usize> = parts.iter().map(|&p| split_last(self.shape(p)).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(shape, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Adds a large negative constant to every column whose `keep` flag is false.
    pub fn mask_cols(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (_, cols) = split_last(self.shape(x));
        if keep.len() != cols {
            return Err(Error::dim("mask_cols", self.shape(x), &[keep.len()]));
        }
        let neg = T::of(MASK_NEG);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|r| r.iter().zip(keep).map(move |(&v, &k)| if k { v } else { v + neg }))
            .collect();
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        self.push_checked("mask_cols", shape, out, Op::MaskCols(x), ng)
    }

    /// Mean of the rows whose `keep` flag is set; output is a vector.
    pub fn mean_rows_masked(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || keep.len() != s[0] {
            return Err(Error::dim("mean_rows_masked", s, &[keep.len()]));
        }
        let cols = s[1];
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::input("cannot pool: every position is masked"));
        }
        let n = T::from_usize(count).expect("small int");
        let mut out = vec![T::zero(); cols];
        for (row, _) in self.value(x).chunks(cols).zip(keep).filter(|(_, &k)| k) {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
        }
        out.iter_mut().for_each(|o| *o = *o / n);
        let ng = self.ng(x);
        Ok(self.push(
            vec![cols],
            out,
            Op::MeanRowsMasked {
                x,
                keep: keep.to_vec(),
                count,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum::<T>();
        let ng = self.ng(x);
        self.push_checked("sum", vec![1], vec![s], Op::Sum(x), ng)
    }

    /// Cosine similarity `u·v / max(|u||v|, 1e-8)` as a one-element tensor.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        if self.shape(u) != self.shape(v) {
            return Err(Error::dim("cosine", self.shape(u), self.shape(v)));
        }
        let (c, denom, clamped) = cosine_parts(self.value(u), self.value(v));
        let ng = self.ng(u) || self.ng(v);
        self.push_checked("cosine", vec![1], vec![c], Op::Cosine { u, v, denom, clamped }, ng)
    }

    /// Log-sum-exp stabilized cross entropy of a single logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if label >= z.len() {
            return Err(Error::input(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let loss = max + total.ln() - z[label];
        let probs = exps.into_iter().map(|e| e / total).collect();
        let ng = self.ng(logits);
        self.push_checked(
            "cross_entropy",
            vec![1],
            vec![loss.max(T::zero())],
            Op::CrossEntropy { logits, label, probs },
            ng,
        )
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::dim("mse", self.shape(pred), self.shape(target)));
        }
        let n = T::from_usize(self.value(pred).len()).expect("small int");
        let s = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let ng = self.ng(pred) || self.ng(target);
        self.push_checked("mse", vec![1], vec![s], Op::Mse(pred, target), ng)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC · Bᵀ
                acc(*a, &mut |da| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let s: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            da[i * k + p] = da[i * k + p] + s;
                        }
                    }
                });
                // dB = Aᵀ · dC
                acc(*b, &mut |db| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &y) in drow.iter_mut().zip(grow) {
                                *d = *d + x * y;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                acc(*a, &mut |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = da[i * n + j] + g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) | Op::MaskCols(a) => acc(*a, &mut |da| add_into(da, g)),
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &x)| *d = *d - x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |da| {
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + x * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &x), &y) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + x * y;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x * *c)),
            Op::Abs(a) => {
                let av = self.value(*a);
                acc(*a, &mut |da| {
                    for ((d, &x), &v) in da.iter_mut().zip(g).zip(av) {
                        // subgradient 0 at 0
                        let s = if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *d = *d + x * s;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |da| {
                    for ((d, &x), &t) in da.iter_mut().zip(g).zip(y) {
                        *d = *d + x * (T::one() - t * t);
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |da| {
                    for ((d, &x), &v) in da.iter_mut().zip(g).zip(av) {
                        *d = *d + x * gelu(v).1;
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let cols = self.nodes[b.0].value.len();
                acc(*x, &mut |dx| add_into(dx, g));
                acc(*b, &mut |db| {
                    for row in g.chunks(cols) {
                        add_into(db, row);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let (_, cols) = split_last(&node.shape);
                let y = &node.value;
                acc(*x, &mut |dx| {
                    for ((drow, grow), yrow) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((d, &gg), &yy) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + yy * (gg - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.nodes[gain.0].value.len();
                let dn = T::from_usize(d).expect("small int");
                let gv = self.value(*gain);
                acc(*x, &mut |dx| {
                    for (r, ((drow, grow), hrow)) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        let dh: Vec<T> = grow.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / dn;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for ((o, &a), &h) in drow.iter_mut().zip(&dh).zip(hrow) {
                            *o = *o + rstd[r] * (a - mean_dh - h * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, &a), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *o = *o + a * h;
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let cols = self.nodes[table.0].shape[1];
                acc(*table, &mut |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (_, cols) = split_last(&self.nodes[x.0].shape);
                let (_, w) = split_last(&node.shape);
                acc(*x, &mut |dx| {
                    for (drow, grow) in dx.chunks_mut(cols).zip(g.chunks(w)) {
                        add_into(&mut drow[*start..*start + w], grow);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = split_last(&node.shape);
                let mut offset = 0;
                for p in parts {
                    let (_, w) = split_last(&self.nodes[p.0].shape);
                    acc(*p, &mut |dp| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            add_into(&mut dp[r * w..(r + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::MeanRowsMasked { x, keep, count } => {
                let cols = node.value.len();
                let n = T::from_usize(*count).expect("small int");
                acc(*x, &mut |dx| {
                    for (drow, _) in dx.chunks_mut(cols).zip(keep).filter(|(_, &k)| k) {
                        for (d, &gg) in drow.iter_mut().zip(g) {
                            *d = *d + gg / n;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::Cosine { u, v, denom, clamped } => {
                let (uv, vv) = (self.value(*u), self.value(*v));
                let c = node.value[0];
                let nu: T = uv.iter().map(|&a| a * a).sum();
                let nv: T = vv.iter().map(|&a| a * a).sum();
                let go = g[0];
                acc(*u, &mut |du| {
                    for ((d, &a), &b) in du.iter_mut().zip(uv).zip(vv) {
                        let mut grad = b / *denom;
                        if !*clamped && nu > T::zero() {
                            grad = grad - c * a / nu;
                        }
                        *d = *d + go * grad;
                    }
                });
                acc(*v, &mut |dv| {
                    for ((d, &a), &b) in dv.iter_mut().zip(vv).zip(uv) {
                        let mut grad = b / *denom;
                        if !*clamped && nv > T::zero() {
                            grad = grad - c * a / nv;
                        }
                        *d = *d + go * grad;
                    }
                });
            }
            Op::CrossEntropy { logits, label, probs } => acc(*logits, &mut |dz| {
                for (j, (d, &p)) in dz.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *label { T::one() } else { T::zero() };
                    *d = *d + g[0] * (p - onehot);
                }
            }),
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = T::from_usize(av.len()).expect("small int");
                let two = T::of(2.0);
                acc(*a, &mut |da| {
                    for ((d, &x), &y) in da.iter_mut().zip(av).zip(bv) {
                        *d = *d + g[0] * two * (x - y) / n;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &x), &y) in db.iter_mut().zip(av).zip(bv) {
                        *d = *d - g[0] * two * (x - y) / n;
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

/// `(cosine, denominator, clamped)`; the norm product is formed as
/// `sqrt(|u|²|v|²)` so that `cosine(u, u)` is exactly one.
pub(crate) fn cosine_parts<T: Scalar>(u: &[T], v: &[T]) -> (T, T, bool) {
    let eps = T::of(1e-8);
    let dot: T = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let nu: T = u.iter().map(|&a| a * a).sum();
    let nv: T = v.iter().map(|&a| a * a).sum();
    let raw = (nu * nv).sqrt();
    let (denom, clamped) = if raw > eps { (raw, false) } else { (eps, true) };
    (dot / denom, denom, clamped)
}

/// Plain cosine similarity with the same conventions as [`Tape::cosine`].
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> T {
    cosine_parts(u, v).0
}
