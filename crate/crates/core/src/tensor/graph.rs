use std::collections::HashMap;

use super::{matmul_into, softmax_slice, ParamId, ParamStore, Tensor, LAYER_NORM_EPS, LOG_FLOOR};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Powf(usize, f64),
    Transpose(usize),
    Concat { parts: Vec<usize>, axis: usize },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    Gather { x: usize, rows: Vec<usize> },
    Sum { x: usize, axis: Option<usize> },
    Mean { x: usize, axis: Option<usize> },
    Log(usize),
    Exp(usize),
    Sigmoid(usize),
    Relu(usize),
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, inv_std: Vec<f64> },
    Attention(Box<AttentionCache>),
}

#[derive(Debug)]
struct AttentionCache {
    q: usize,
    k: usize,
    v: usize,
    heads: usize,
    key_mask: Option<Vec<bool>>,
    /// `heads × n_query × n_key`, zero at masked keys.
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A tape of operations. Nodes are appended in evaluation order, so the tape
/// is its own topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar output with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the
    /// output (or does not require gradients).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Shape {
            op,
            lhs: vec![a.0, a.1],
            rhs: vec![b.0, b.1],
        }),
    }
}

#[inline]
fn bidx(r: usize, c: usize, rows: usize, cols: usize) -> usize {
    (if rows == 1 { 0 } else { r }) * cols + if cols == 1 { 0 } else { c }
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    fn dims(&self, v: usize) -> (usize, usize) {
        let n = &self.nodes[v];
        (n.rows, n.cols)
    }

    /// Records a tensor. It participates in differentiation only if its
    /// `requires_grad` flag is set.
    pub fn tensor(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant shape");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    /// Records a differentiable input (gradients will be reported for it).
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "variable shape");
        self.push(rows, cols, data, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(1, 1, vec![v])
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let (r, c) = t.dims2();
        let v = self.push(r, c, t.data().to_vec(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// A constant copy of `v`'s current value (gradient stops here).
    pub fn detach(&mut self, v: Var) -> Var {
        let (r, c) = self.dims(v.0);
        let data = self.nodes[v.0].value.clone();
        self.constant(r, c, data)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v.0)
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v.0);
        Tensor::matrix(r, c, self.nodes[v.0].value.clone()).expect("node shape")
    }

    /// First node holding a non-finite value, by index.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.value.iter().any(|v| !v.is_finite()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a.0);
        let (k2, n) = self.dims(b.0);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut out, m, k, n);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(m, n, out, Op::MatMul(a.0, b.0), rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(usize, usize, Vec<f64>)> {
        let (ra, ca) = self.dims(a.0);
        let (rb, cb) = self.dims(b.0);
        let (r, c) = broadcast_shape(op, (ra, ca), (rb, cb))?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out = if (ra, ca) == (rb, cb) {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(f(av[bidx(i, j, ra, ca)], bv[bidx(i, j, rb, cb)]));
                }
            }
            out
        };
        Ok((r, c, out))
    }

    /// Elementwise sum with row/column/scalar broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(r, c, out, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Elementwise product with row/column/scalar broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.binary("multiply", a, b, |x, y| x * y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(r, c, out, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.dims(x.0);
        let out = self.nodes[x.0].value.iter().map(|v| v * s).collect();
        let rg = self.rg(x.0);
        self.push(r, c, out, Op::Scale(x.0, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let c = self.scalar(s);
        self.add(x, c).expect("scalar broadcast")
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let (r, c) = self.dims(x.0);
        let out = self.nodes[x.0].value.iter().map(|v| v.powf(p)).collect();
        let rg = self.rg(x.0);
        self.push(r, c, out, Op::Powf(x.0, p), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x.0);
        let src = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(x.0);
        self.push(c, r, out, Op::Transpose(x.0), rg)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (r0, c0) = self.dims(first.0);
        let mut rows = 0;
        let mut cols = 0;
        for p in parts {
            let (r, c) = self.dims(p.0);
            match axis {
                0 if c == c0 => rows += r,
                1 if r == r0 => cols += c,
                0 | 1 => {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    })
                }
                _ => return Err(Error::Contract(format!("concat axis {axis}"))),
            }
        }
        let (rows, cols) = if axis == 0 { (rows, c0) } else { (r0, cols) };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for p in parts {
                out.extend_from_slice(&self.nodes[p.0].value);
            }
        } else {
            for i in 0..rows {
                for p in parts {
                    let (_, c) = self.dims(p.0);
                    out.extend_from_slice(&self.nodes[p.0].value[i * c..(i + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        let parts = parts.iter().map(|p| p.0).collect();
        Ok(self.push(rows, cols, out, Op::Concat { parts, axis }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x.0);
        if start >= end || end > r {
            return Err(Error::Contract(format!("row slice {start}..{end} of {r} rows")));
        }
        let out = self.nodes[x.0].value[start * c..end * c].to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(end - start, c, out, Op::SliceRows { x: x.0, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x.0);
        if start >= end || end > c {
            return Err(Error::Contract(format!("column slice {start}..{end} of {c} columns")));
        }
        let src = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let rg = self.rg(x.0);
        Ok(self.push(r, end - start, out, Op::SliceCols { x: x.0, start }, rg))
    }

    /// Row gather (embedding lookup): output row `i` is `x[rows[i]]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x.0);
        if rows.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Contract(format!("gather index {bad} out of {r} rows")));
        }
        let src = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x.0);
        Ok(self.push(rows.len(), c, out, Op::Gather { x: x.0, rows: rows.to_vec() }, rg))
    }

    fn reduce(&self, x: usize, axis: Option<usize>) -> (usize, usize, Vec<f64>) {
        let (r, c) = self.dims(x);
        let v = &self.nodes[x].value;
        match axis {
            None => (1, 1, vec![v.iter().sum()]),
            Some(0) => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, &val) in out.iter_mut().zip(&v[i * c..(i + 1) * c]) {
                        *o += val;
                    }
                }
                (1, c, out)
            }
            Some(_) => (r, 1, v.chunks(c).map(|row| row.iter().sum()).collect()),
        }
    }

    /// Sum over an axis (`None` reduces to a scalar).
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Var {
        let (r, c, out) = self.reduce(x.0, axis);
        let rg = self.rg(x.0);
        self.push(r, c, out, Op::Sum { x: x.0, axis }, rg)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Var {
        let (xr, xc) = self.dims(x.0);
        let n = match axis {
            None => xr * xc,
            Some(0) => xr,
            Some(_) => xc,
        } as f64;
        let (r, c, mut out) = self.reduce(x.0, axis);
        for o in &mut out {
            *o /= n;
        }
        let rg = self.rg(x.0);
        self.push(r, c, out, Op::Mean { x: x.0, axis }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(x.0);
        let out = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        let rg = self.rg(x.0);
        self.push(r, c, out, op, rg)
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(LOG_FLOOR).ln(), Op::Log(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, super::sigmoid, Op::Sigmoid(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.0))
    }

    /// Softmax along `axis` (0 = down columns, 1 = across rows).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let (r, c) = self.dims(x.0);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * c];
        if axis == 1 {
            for i in 0..r {
                softmax_slice(&v[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
            }
        } else {
            let mut col = vec![0.0; r];
            let mut sm = vec![0.0; r];
            for j in 0..c {
                for i in 0..r {
                    col[i] = v[i * c + j];
                }
                softmax_slice(&col, &mut sm);
                for i in 0..r {
                    out[i * c + j] = sm[i];
                }
            }
        }
        let rg = self.rg(x.0);
        self.push(r, c, out, Op::Softmax { x: x.0, axis: axis.min(1) }, rg)
    }

    /// `log Σ exp(x)` along `axis`, shifted by a detached maximum.
    pub fn log_sum_exp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims(x.0);
        let v = &self.nodes[x.0].value;
        let max: Vec<f64> = if axis == 1 {
            v.chunks(c)
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect()
        } else {
            (0..c)
                .map(|j| (0..r).map(|i| v[i * c + j]).fold(f64::NEG_INFINITY, f64::max))
                .collect()
        };
        let shift = if axis == 1 {
            self.constant(r, 1, max)
        } else {
            self.constant(1, c, max)
        };
        let centred = self.sub(x, shift)?;
        let e = self.exp(centred);
        let s = self.sum(e, Some(axis));
        let l = self.log(s);
        self.add(l, shift)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x.0);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x.0);
        self.push(r, c, out, Op::LayerNorm { x: x.0, inv_std }, rg)
    }

    /// Multi-head scaled dot-product attention. Keys whose mask entry is
    /// `false` are excluded from every query's softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: Option<&[bool]>) -> Result<Var> {
        let (nq, d) = self.dims(q.0);
        let (nk, dk) = self.dims(k.0);
        let (nv, dv) = self.dims(v.0);
        if d != dk || nk != nv {
            return Err(Error::Shape {
                op: "attention",
                lhs: vec![nq, d],
                rhs: vec![nk, dk],
            });
        }
        if heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(Error::Contract(format!("{heads} heads do not divide width {d}/{dv}")));
        }
        if let Some(m) = key_mask {
            if m.len() != nk {
                return Err(Error::Shape {
                    op: "attention mask",
                    lhs: vec![nk],
                    rhs: vec![m.len()],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::Contract("attention with every key masked".into()));
            }
        }
        let dh = d / heads;
        let dvh = dv / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let keep = |j: usize| key_mask.map_or(true, |m| m[j]);
        let mut probs = vec![0.0; heads * nq * nk];
        let mut out = vec![0.0; nq * dv];
        let mut scores = vec![f64::NEG_INFINITY; nk];
        for h in 0..heads {
            for i in 0..nq {
                let qi = &qv[i * d + h * dh..i * d + (h + 1) * dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..nk {
                    if !keep(j) {
                        continue;
                    }
                    let kj = &kv[j * d + h * dh..j * d + (h + 1) * dh];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                let p = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let mut sum = 0.0;
                for j in 0..nk {
                    if keep(j) {
                        p[j] = (scores[j] - max).exp();
                        sum += p[j];
                    }
                }
                let orow = &mut out[i * dv + h * dvh..i * dv + (h + 1) * dvh];
                for j in 0..nk {
                    if !keep(j) {
                        continue;
                    }
                    p[j] /= sum;
                    let vj = &vv[j * dv + h * dvh..j * dv + (h + 1) * dvh];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o += p[j] * x;
                    }
                }
            }
        }
        let rg = self.rg(q.0) || self.rg(k.0) || self.rg(v.0);
        let cache = AttentionCache {
            q: q.0,
            k: k.0,
            v: v.0,
            heads,
            key_mask: key_mask.map(<[bool]>::to_vec),
            probs,
        };
        Ok(self.push(nq, dv, out, Op::Attention(Box::new(cache)), rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let (r, c) = self.dims(output.0);
        if r * c != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if !self.rg(output.0) {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        let y = &node.value;
        let needs = |p: usize| self.nodes[p].requires_grad;
        let len = |p: usize| self.nodes[p].value.len();
        macro_rules! acc {
            ($p:expr) => {
                grads[$p].get_or_insert_with(|| vec![0.0; len($p)])
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if needs(*a) {
                    let bv = &self.nodes[*b].value;
                    let ga = acc!(*a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if needs(*b) {
                    let av = &self.nodes[*a].value;
                    let gb = acc!(*b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += a_ip * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if !needs(p) {
                        continue;
                    }
                    let (pr, pc) = self.dims(p);
                    let gp = acc!(p);
                    if (pr, pc) == (rows, cols) {
                        for (o, &x) in gp.iter_mut().zip(g) {
                            *o += x;
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                gp[bidx(r, c, pr, pc)] += g[r * cols + c];
                            }
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                for (&p, &other) in [(a, b), (b, a)] {
                    if !needs(p) {
                        continue;
                    }
                    let (pr, pc) = self.dims(p);
                    let (or, oc) = self.dims(other);
                    let ov = &self.nodes[other].value;
                    let gp = acc!(p);
                    for r in 0..rows {
                        for c in 0..cols {
                            gp[bidx(r, c, pr, pc)] += g[r * cols + c] * ov[bidx(r, c, or, oc)];
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if needs(*x) {
                    for (o, &d) in acc!(*x).iter_mut().zip(g) {
                        *o += d * s;
                    }
                }
            }
            Op::Powf(x, p) => {
                if needs(*x) {
                    let xv = &self.nodes[*x].value;
                    for ((o, &d), &xi) in acc!(*x).iter_mut().zip(g).zip(xv) {
                        *o += d * p * xi.powf(p - 1.0);
                    }
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    // node is cols×rows of x; x is rows' = cols, cols' = rows
                    let gx = acc!(*x);
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[c * rows + r] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    if needs(p) {
                        let gp = acc!(p);
                        if *axis == 0 {
                            for (o, &d) in gp.iter_mut().zip(&g[offset * cols..(offset + pr) * cols]) {
                                *o += d;
                            }
                        } else {
                            for r in 0..rows {
                                for c in 0..pc {
                                    gp[r * pc + c] += g[r * cols + offset + c];
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::SliceRows { x, start } => {
                if needs(*x) {
                    let gx = acc!(*x);
                    for (o, &d) in gx[start * cols..(start + rows) * cols].iter_mut().zip(g) {
                        *o += d;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if needs(*x) {
                    let (_, xc) = self.dims(*x);
                    let gx = acc!(*x);
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * xc + start + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Gather { x, rows: idx } => {
                if needs(*x) {
                    let gx = acc!(*x);
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gx[src * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                if needs(*x) {
                    let (xr, xc) = self.dims(*x);
                    let scale = match (&node.op, axis) {
                        (Op::Sum { .. }, _) => 1.0,
                        (_, None) => 1.0 / (xr * xc) as f64,
                        (_, Some(0)) => 1.0 / xr as f64,
                        _ => 1.0 / xc as f64,
                    };
                    let gx = acc!(*x);
                    for r in 0..xr {
                        for c in 0..xc {
                            let up = match axis {
                                None => g[0],
                                Some(0) => g[c],
                                Some(_) => g[r],
                            };
                            gx[r * xc + c] += up * scale;
                        }
                    }
                }
            }
            Op::Log(x) => {
                if needs(*x) {
                    let xv = &self.nodes[*x].value;
                    for ((o, &d), &xi) in acc!(*x).iter_mut().zip(g).zip(xv) {
                        if xi > LOG_FLOOR {
                            *o += d / xi;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if needs(*x) {
                    for ((o, &d), &yi) in acc!(*x).iter_mut().zip(g).zip(y) {
                        *o += d * yi;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    for ((o, &d), &yi) in acc!(*x).iter_mut().zip(g).zip(y) {
                        *o += d * yi * (1.0 - yi);
                    }
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xv = &self.nodes[*x].value;
                    for ((o, &d), &xi) in acc!(*x).iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *o += d;
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if needs(*x) {
                    let gx = acc!(*x);
                    if *axis == 1 {
                        for r in 0..rows {
                            let s = (0..cols).map(|c| g[r * cols + c] * y[r * cols + c]).sum::<f64>();
                            for c in 0..cols {
                                let k = r * cols + c;
                                gx[k] += y[k] * (g[k] - s);
                            }
                        }
                    } else {
                        for c in 0..cols {
                            let s = (0..rows).map(|r| g[r * cols + c] * y[r * cols + c]).sum::<f64>();
                            for r in 0..rows {
                                let k = r * cols + c;
                                gx[k] += y[k] * (g[k] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if needs(*x) {
                    let gx = acc!(*x);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let mg = gr.iter().sum::<f64>() / n;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..cols {
                            gx[r * cols + c] += inv_std[r] * (gr[c] - mg - yr[c] * mgy);
                        }
                    }
                }
            }
            Op::Attention(cache) => self.attention_backward(cache, g, rows, grads),
        }
    }

    fn attention_backward(&self, cache: &AttentionCache, g: &[f64], nq: usize, grads: &mut [Option<Vec<f64>>]) {
        let AttentionCache {
            q,
            k,
            v,
            heads,
            key_mask,
            probs,
        } = cache;
        let (q, k, v, heads) = (*q, *k, *v, *heads);
        let (_, d) = self.dims(q);
        let (nk, dv) = self.dims(v);
        let dh = d / heads;
        let dvh = dv / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = &self.nodes[q].value;
        let kv = &self.nodes[k].value;
        let vv = &self.nodes[v].value;
        let keep = |j: usize| key_mask.as_ref().map_or(true, |m| m[j]);

        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dvv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; nk];
        for h in 0..heads {
            for i in 0..nq {
                let p = &probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let go = &g[i * dv + h * dvh..i * dv + (h + 1) * dvh];
                let mut s = 0.0;
                for j in 0..nk {
                    if !keep(j) {
                        continue;
                    }
                    let vj = &vv[j * dv + h * dvh..j * dv + (h + 1) * dvh];
                    dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    s += p[j] * dp[j];
                    for (o, &x) in dvv[j * dv + h * dvh..j * dv + (h + 1) * dvh].iter_mut().zip(go) {
                        *o += p[j] * x;
                    }
                }
                for j in 0..nk {
                    if !keep(j) {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + h * dh + c] += ds * kv[j * d + h * dh + c];
                        dk[j * d + h * dh + c] += ds * qv[i * d + h * dh + c];
                    }
                }
            }
        }
        for (p, d) in [(q, dq), (k, dk), (v, dvv)] {
            if !self.nodes[p].requires_grad {
                continue;
            }
            let len = self.nodes[p].value.len();
            let gp = grads[p].get_or_insert_with(|| vec![0.0; len]);
            for (o, x) in gp.iter_mut().zip(d) {
                *o += x;
            }
        }
    }

    /// Gradients for every parameter in `store`, zero where unreachable.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                let shape = store.get(id).shape().to_vec();
                let data = self
                    .params
                    .get(&id)
                    .and_then(|&v| grads.wrt(v))
                    .map_or_else(|| vec![0.0; store.get(id).len()], <[f64]>::to_vec);
                Tensor::new(shape, data).expect("parameter shape")
            })
            .collect()
    }
}
