//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Every recorded node stores its op, the ids of its inputs (always earlier
//! nodes) and its forward value. `backward` walks the tape in reverse and
//! accumulates vector-Jacobian products into per-node gradients.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor before any logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
pub enum Op {
    /// Named trainable leaf.
    Param(String),
    /// Non-trainable leaf (inputs, targets, fixed matrices).
    Constant,
    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    /// Adds a `[n]` vector to every row of an `[m,n]` matrix.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Unary(Unary, Var),
    /// Concatenation along the last axis.
    Concat(Vec<Var>),
    /// Contiguous range of a rank-1 tensor.
    Slice { src: Var, start: usize, len: usize },
    Reshape(Var, Vec<usize>),
    /// `out[i] = src[index[i]]`, or zero where the index is `None`.
    Gather {
        src: Var,
        index: Arc<[Option<usize>]>,
        shape: Vec<usize>,
    },
    /// Softmax over a rank-1 tensor.
    Softmax(Var),
    /// `-sum(target * ln(max(pred, LOG_EPS)))`; the target is not differentiated.
    CrossEntropy { pred: Var, target: Arc<Tensor> },
    Sum(Var),
}

impl Op {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Param(_) | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Binary(_, a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Unary(_, a)
            | Op::Reshape(a, _)
            | Op::Softmax(a)
            | Op::Sum(a) => vec![*a],
            Op::Concat(xs) => xs.clone(),
            Op::Slice { src, .. } | Op::Gather { src, .. } => vec![*src],
            Op::CrossEntropy { pred, .. } => vec![*pred],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Unary(Unary::Tanh, _) => "tanh",
            Op::Unary(Unary::Sigmoid, _) => "sigmoid",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Tape {
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

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        for input in op.inputs() {
            if input.0 >= self.nodes.len() {
                return Err(Error::Contract(format!(
                    "{} references node {} not on this tape",
                    op.name(),
                    input.0
                )));
            }
        }
        let value = eval_op(&op, |v| &self.nodes[v.0].value)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf. Each name is recorded at most once per tape.
    pub fn leaf(&mut self, name: &str, value: Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(name.to_string()),
            value,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Registers the named parameter from `store` (cached per tape).
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        Ok(self.leaf(name, t.clone()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary(Binary::Add, a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary(Binary::Sub, a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary(Binary::Mul, a, b))
    }

    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(m, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(Unary::Tanh, a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Unary(Unary::Sigmoid, a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice { src, start, len })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    pub fn gather(
        &mut self,
        src: Var,
        index: Arc<[Option<usize>]>,
        shape: &[usize],
    ) -> Result<Var> {
        self.push(Op::Gather {
            src,
            index,
            shape: shape.to_vec(),
        })
    }

    /// Rows `ids` of a rank-2 tensor, stacked in order.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::dim("gather_rows", &shape, &[ids.len()]));
        }
        let cols = shape[1];
        if let Some(&bad) = ids.iter().find(|&&i| i >= shape[0]) {
            return Err(Error::Domain(format!(
                "row {bad} out of range for table with {} rows",
                shape[0]
            )));
        }
        let index: Arc<[Option<usize>]> = ids
            .iter()
            .flat_map(|&r| (0..cols).map(move |c| Some(r * cols + c)))
            .collect();
        let out_shape = [ids.len(), cols];
        self.gather(table, index, &out_shape)
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        self.push(Op::Softmax(logits))
    }

    pub fn cross_entropy(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        self.push(Op::CrossEntropy {
            pred,
            target: Arc::new(target),
        })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// Sum of several scalar nodes; `None` when `xs` is empty.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Option<Var>> {
        let mut it = xs.iter();
        let Some(&first) = it.next() else {
            return Ok(None);
        };
        let mut acc = first;
        for &x in it {
            acc = self.add(acc, x)?;
        }
        Ok(Some(acc))
    }

    /// Re-evaluates every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Param(_) | Op::Constant => node.value.clone(),
                ref op => eval_op(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse accumulation of d(loss)/d(node) for every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("loss node {} not on tape", loss.0)));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Param(_) | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.rank() == 1 { 1 } else { bv.shape()[1] };
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * bd[p * n + j];
                            gb[p * n + j] += ad[i * k + p] * gij;
                        }
                    }
                }
                accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
                accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = g.data()[i * c + j];
                    }
                }
                accumulate(grads, *a, Tensor::new(vec![c, r], out)?);
            }
            Op::Binary(kind, a, b) => {
                let (ga, gb) = match kind {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.map(|x| -x)),
                    Binary::Mul => (zip_map(g, val(*b), |x, y| x * y), zip_map(g, val(*a), |x, y| x * y)),
                };
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(m, row) => {
                let cols = g.cols();
                let mut gr = vec![0.0; cols];
                for chunk in g.data().chunks(cols) {
                    for (acc, x) in gr.iter_mut().zip(chunk) {
                        *acc += x;
                    }
                }
                accumulate(grads, *m, g.clone());
                accumulate(grads, *row, Tensor::vector(gr));
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a, _) => accumulate(grads, *a, g.clone()),
            Op::Unary(Unary::Tanh, a) => {
                accumulate(grads, *a, zip_map(g, &node.value, |gx, y| gx * (1.0 - y * y)))
            }
            Op::Unary(Unary::Sigmoid, a) => {
                accumulate(grads, *a, zip_map(g, &node.value, |gx, y| gx * y * (1.0 - y)))
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let outer = g.numel() / total;
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let w = pv.cols();
                    let mut out = Vec::with_capacity(pv.numel());
                    for o in 0..outer {
                        out.extend_from_slice(&g.data()[o * total + offset..o * total + offset + w]);
                    }
                    accumulate(grads, *p, Tensor::new(pv.shape().to_vec(), out)?);
                    offset += w;
                }
            }
            Op::Slice { src, start, .. } => {
                let mut out = vec![0.0; val(*src).numel()];
                out[*start..*start + g.numel()].copy_from_slice(g.data());
                accumulate(grads, *src, Tensor::new(val(*src).shape().to_vec(), out)?);
            }
            Op::Reshape(a, _) => accumulate(grads, *a, g.reshape(val(*a).shape())?),
            Op::Gather { src, index, .. } => {
                let mut out = vec![0.0; val(*src).numel()];
                for (gi, idx) in g.data().iter().zip(index.iter()) {
                    if let Some(j) = idx {
                        out[*j] += gi;
                    }
                }
                accumulate(grads, *src, Tensor::new(val(*src).shape().to_vec(), out)?);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let dot: f64 = g.data().iter().zip(y.data()).map(|(x, y)| x * y).sum();
                accumulate(grads, *a, zip_map(g, y, |gx, yx| yx * (gx - dot)));
            }
            Op::CrossEntropy { pred, target } => {
                let gs = g.item();
                let p = val(*pred);
                let gp = zip_map(p, target, |pi, ti| {
                    if pi >= LOG_EPS {
                        -gs * ti / pi
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *pred, gp);
            }
            Op::Sum(a) => accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item())),
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map preserves shape")
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Forward semantics shared by recording and replay.
fn eval_op<'a>(op: &Op, val: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    match op {
        Op::Param(_) | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => matmul(val(*a), val(*b)),
        Op::Transpose(a) => {
            let a = val(*a);
            if a.rank() != 2 {
                return Err(Error::dim("transpose", a.shape(), &[]));
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], out)
        }
        Op::Binary(kind, a, b) => {
            let (a, b) = (val(*a), val(*b));
            let name = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            same_shape(name, a, b)?;
            Ok(match kind {
                Binary::Add => zip_map(a, b, |x, y| x + y),
                Binary::Sub => zip_map(a, b, |x, y| x - y),
                Binary::Mul => zip_map(a, b, |x, y| x * y),
            })
        }
        Op::AddRow(m, row) => {
            let (m, row) = (val(*m), val(*row));
            if m.rank() != 2 || row.rank() != 1 || m.cols() != row.numel() {
                return Err(Error::dim("add_row", m.shape(), row.shape()));
            }
            let cols = m.cols();
            let data = m
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + row.data()[i % cols])
                .collect();
            Tensor::new(m.shape().to_vec(), data)
        }
        Op::Scale(a, c) => Ok(val(*a).map(|x| x * c)),
        Op::AddScalar(a, c) => Ok(val(*a).map(|x| x + c)),
        Op::Unary(Unary::Tanh, a) => Ok(val(*a).map(f64::tanh)),
        Op::Unary(Unary::Sigmoid, a) => Ok(val(*a).map(sigmoid)),
        Op::Concat(parts) => {
            let tensors: Vec<&Tensor> = parts.iter().map(|&p| val(p)).collect();
            concat_last(&tensors)
        }
        Op::Slice { src, start, len } => {
            let s = val(*src);
            if s.rank() != 1 || *len == 0 || start + len > s.numel() {
                return Err(Error::dim("slice", s.shape(), &[*start, *len]));
            }
            Ok(Tensor::vector(s.data()[*start..start + len].to_vec()))
        }
        Op::Reshape(a, shape) => {
            let a = val(*a);
            if shape.iter().product::<usize>() != a.numel() {
                return Err(Error::dim("reshape", a.shape(), shape));
            }
            a.reshape(shape)
        }
        Op::Gather { src, index, shape } => {
            let s = val(*src);
            if shape.iter().product::<usize>() != index.len() {
                return Err(Error::dim("gather", shape, &[index.len()]));
            }
            let mut out = Vec::with_capacity(index.len());
            for idx in index.iter() {
                match idx {
                    Some(j) if *j >= s.numel() => {
                        return Err(Error::dim("gather", s.shape(), &[*j]));
                    }
                    Some(j) => out.push(s.data()[*j]),
                    None => out.push(0.0),
                }
            }
            Tensor::new(shape.clone(), out)
        }
        Op::Softmax(a) => {
            let a = val(*a);
            if a.rank() != 1 {
                return Err(Error::dim("softmax", a.shape(), &[]));
            }
            Ok(Tensor::vector(softmax(a.data())?))
        }
        Op::CrossEntropy { pred, target } => {
            let p = val(*pred);
            same_shape("cross_entropy", p, target)?;
            Ok(Tensor::scalar(cross_entropy(p.data(), target.data())?))
        }
        Op::Sum(a) => Ok(Tensor::scalar(val(*a).sum())),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Matrix product; a rank-1 right operand is treated as a column vector.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() > 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = if b.rank() == 1 { 1 } else { b.shape()[1] };
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    let shape = if b.rank() == 1 { vec![m] } else { vec![m, n] };
    Tensor::new(shape, out)
}

pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
    let lead = &first.shape()[..first.rank() - 1];
    for p in parts {
        if &p.shape()[..p.rank() - 1] != lead {
            return Err(Error::dim("concat", first.shape(), p.shape()));
        }
    }
    let outer: usize = lead.iter().product();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for p in parts {
            let w = p.cols();
            data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `-sum(target_i * ln(max(pred_i, LOG_EPS)))`.
pub fn cross_entropy(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dim("cross_entropy", &[pred.len()], &[target.len()]));
    }
    Ok(-pred
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.max(LOG_EPS).ln())
        .sum::<f64>())
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Per-node gradients from one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter in `store`; entries the loss never
    /// touched are zero-filled.
    pub fn for_params(&self, tape: &Tape, store: &ParameterStore) -> GradientMap {
        let mut entries = BTreeMap::new();
        for (name, t) in store.iter() {
            let g = tape
                .params
                .get(name)
                .and_then(|&v| self.get(v))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            entries.insert(name.clone(), g);
        }
        GradientMap { entries }
    }
}

/// Parameter name to gradient, shapes mirroring the parameter store.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    entries: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

/// Runs `f` on a fresh tape and returns the loss together with its gradients.
pub fn value_and_grad<F>(store: &ParameterStore, f: F) -> Result<(f64, GradientMap)>
where
    F: FnOnce(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), grads.for_params(&tape, store)))
}
