//! Reverse-mode differentiation over a dynamically recorded graph of
//! rank-2 tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation pushes a
//! node holding its output value and the indices of its inputs; nodes are
//! appended in evaluation order, so a single reverse sweep visits every node
//! after all of its consumers. Parameters enter as named leaves and their
//! gradients are written back into a [`ParamStore`] after the sweep.

use std::collections::HashMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[n, m] + [1, m]`
    AddRow(Var, Var),
    /// `[n, m] * [n, 1]`
    MulCol(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant tensor (dropout masks).
    MulConst(Var, Tensor),
    Silu(Var),
    Sqrt(Var),
    RowSum(Var),
    SumAll(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, ctx: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape2(a), self.shape2(b));
        if sa != sb {
            return Err(Error::shape(ctx, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape2(a);
        let (r, m2) = self.shape2(row);
        if r != 1 || m != m2 {
            return Err(Error::shape("row broadcast add", format!("(1, {m})"), format!("({r}, {m2})")));
        }
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend(av[i * m..(i + 1) * m].iter().zip(rv).map(|(x, b)| x + b));
        }
        let out = Tensor::from_parts(vec![n, m], out);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.shape2(a);
        let (n2, c) = self.shape2(col);
        if c != 1 || n != n2 {
            return Err(Error::shape("column broadcast mul", format!("({n}, 1)"), format!("({n2}, {c})")));
        }
        let av = self.value(a).data();
        let cv = self.value(col).data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend(av[i * m..(i + 1) * m].iter().map(|x| x * cv[i]));
        }
        let out = Tensor::from_parts(vec![n, m], out);
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::shape(
                "constant mask",
                format!("{:?}", self.value(a).shape()),
                format!("{:?}", c.shape()),
            ));
        }
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0).sqrt());
        self.push(out, Op::Sqrt(a))
    }

    /// `[n, m] -> [n, 1]`
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (n, m) = self.shape2(a);
        let av = self.value(a).data();
        let out: Vec<f64> = (0..n).map(|i| av[i * m..(i + 1) * m].iter().sum()).collect();
        self.push(Tensor::from_parts(vec![n, 1], out), Op::RowSum(a))
    }

    /// Sum of every element as a `[1, 1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.shape2(p).0)
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.shape2(p);
            if r != n {
                return Err(Error::shape("concat rows", n, r));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![n, total], out);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row gather: output row `k` is input row `index[k]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (n, m) = self.shape2(a);
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * m);
        for &i in index {
            if i >= n {
                return Err(Error::shape("gather index", format!("< {n}"), i));
            }
            out.extend_from_slice(&av[i * m..(i + 1) * m]);
        }
        let out = Tensor::from_parts(vec![index.len(), m], out);
        Ok(self.push(out, Op::Gather(a, index.to_vec())))
    }

    /// Row scatter-add into `rows` output rows; input row `k` lands in
    /// `index[k]`. Sums run in input order.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], rows: usize) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if index.len() != n {
            return Err(Error::shape("scatter index length", n, index.len()));
        }
        let av = self.value(a).data();
        let mut out = vec![0.0; rows * m];
        for (k, &i) in index.iter().enumerate() {
            if i >= rows {
                return Err(Error::shape("scatter index", format!("< {rows}"), i));
            }
            for (o, x) in out[i * m..(i + 1) * m].iter_mut().zip(&av[k * m..(k + 1) * m]) {
                *o += x;
            }
        }
        let out = Tensor::from_parts(vec![rows, m], out);
        Ok(self.push(out, Op::ScatterAdd(a, index.to_vec())))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.shape2(a);
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = &av[i * m..(i + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / z));
        }
        self.push(Tensor::from_parts(vec![n, m], out), Op::SoftmaxRows(a))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward output", "1 element", self.value(output).len()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.matmul(&bv.transpose())?;
                    let gb = av.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let (n, m) = (g.rows(), g.cols());
                    let mut gr = vec![0.0; m];
                    for i in 0..n {
                        for (acc, x) in gr.iter_mut().zip(g.row_slice(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *row, Tensor::from_parts(vec![1, m], gr));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let (n, m) = (g.rows(), g.cols());
                    let av = self.value(*a).data();
                    let cv = self.value(*col).data();
                    let mut ga = Vec::with_capacity(n * m);
                    let mut gc = vec![0.0; n];
                    for i in 0..n {
                        let gi = g.row_slice(i);
                        ga.extend(gi.iter().map(|x| x * cv[i]));
                        gc[i] = gi.iter().zip(&av[i * m..(i + 1) * m]).map(|(x, y)| x * y).sum();
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(vec![n, m], ga));
                    accumulate(&mut grads, *col, Tensor::from_parts(vec![n, 1], gc));
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut grads, *a, g.zip_map(c, |x, y| x * y));
                }
                Op::Silu(a) => {
                    let ga = g.zip_map(self.value(*a), |gx, x| {
                        let s = sigmoid(x);
                        gx * (s + x * s * (1.0 - s))
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    // Subgradient 0 at the origin.
                    let ga = g.zip_map(&node.value, |gx, y| if y > 0.0 { gx * 0.5 / y } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowSum(a) => {
                    let (n, m) = self.shape2(*a);
                    let gd = g.data();
                    let mut ga = Vec::with_capacity(n * m);
                    for &gi in gd.iter().take(n) {
                        ga.extend(std::iter::repeat_n(gi, m));
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(vec![n, m], ga));
                }
                Op::SumAll(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.data()[0]));
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose());
                }
                Op::ConcatCols(parts) => {
                    let n = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape2(p).1;
                        let mut gp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            gp.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, Tensor::from_parts(vec![n, w], gp));
                    }
                }
                Op::Gather(a, index) => {
                    let (n, m) = self.shape2(*a);
                    let mut ga = vec![0.0; n * m];
                    for (k, &i) in index.iter().enumerate() {
                        for (o, x) in ga[i * m..(i + 1) * m].iter_mut().zip(g.row_slice(k)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(vec![n, m], ga));
                }
                Op::ScatterAdd(a, index) => {
                    let m = g.cols();
                    let mut ga = Vec::with_capacity(index.len() * m);
                    for &i in index {
                        ga.extend_from_slice(g.row_slice(i));
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(vec![index.len(), m], ga));
                }
                Op::SoftmaxRows(a) => {
                    let (n, m) = (g.rows(), g.cols());
                    let y = &node.value;
                    let mut ga = Vec::with_capacity(n * m);
                    for i in 0..n {
                        let yi = y.row_slice(i);
                        let gi = g.row_slice(i);
                        let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
                        ga.extend(yi.iter().zip(gi).map(|(y, g)| y * (g - dot)));
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(vec![n, m], ga));
                }
            }
        }

        Ok(Gradients { grads })
    }

    /// Runs the reverse sweep and adds `scale * dL/dp` into every bound
    /// parameter's accumulator.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore, scale: f64) -> Result<()> {
        let grads = self.backward(output)?;
        let mut bound: Vec<(&String, &Var)> = self.params.iter().collect();
        bound.sort();
        for (name, var) in bound {
            if let Some(g) = grads.get(*var) {
                store.accumulate_grad(name, g, scale)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse sweep; only leaves retain their gradients.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
