//! Wengert tape for reverse-mode differentiation over scalar nodes.
//!
//! Every value produced during a forward pass is appended to the tape together
//! with the exact local partial derivatives with respect to its parents. A
//! backward pass walks the records in reverse creation order and accumulates
//! adjoints. Dense layers over a batch are recorded as one fused record that
//! owns a contiguous range of output nodes; its backward pass is the usual
//! matrix form of the chain rule.

use std::cell::RefCell;
use std::fmt;

use super::AdError;

/// Elementary operation that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpTag {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Min,
    Max,
    Clamp,
    Relu,
    Neg,
    Sigmoid,
    /// Identity copy used to gather scattered nodes into a contiguous block.
    Copy,
    /// One output of a fused `W·x + b` record.
    Dense,
}

impl fmt::Display for OpTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Operation request for [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Min,
    Max,
    Clamp { lo: f64, hi: f64 },
    Relu,
    Neg,
    Sigmoid,
}

impl Op {
    pub fn tag(self) -> OpTag {
        match self {
            Op::Add => OpTag::Add,
            Op::Sub => OpTag::Sub,
            Op::Mul => OpTag::Mul,
            Op::Div => OpTag::Div,
            Op::Pow => OpTag::Pow,
            Op::Exp => OpTag::Exp,
            Op::Log => OpTag::Log,
            Op::Sin => OpTag::Sin,
            Op::Cos => OpTag::Cos,
            Op::Tanh => OpTag::Tanh,
            Op::Min => OpTag::Min,
            Op::Max => OpTag::Max,
            Op::Clamp { .. } => OpTag::Clamp,
            Op::Relu => OpTag::Relu,
            Op::Neg => OpTag::Neg,
            Op::Sigmoid => OpTag::Sigmoid,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow | Op::Min | Op::Max => 2,
            _ => 1,
        }
    }
}

/// Elementwise map applied to a whole block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapOp {
    Tanh,
    Sigmoid,
    Relu,
}

/// Handle of a trainable leaf, numbered in creation order on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

#[derive(Debug, Clone, Copy)]
enum Record {
    Leaf,
    Scalar {
        node: u32,
        first_edge: u32,
        n_edges: u32,
    },
    Dense {
        weights: u32,
        bias: u32,
        inputs: u32,
        out: u32,
        batch: u32,
        n_in: u32,
        n_out: u32,
    },
    Map {
        op: MapOp,
        input: u32,
        out: u32,
        len: u32,
    },
}

#[derive(Default)]
struct Inner {
    values: Vec<f64>,
    tags: Vec<OpTag>,
    needs_grad: Vec<bool>,
    edge_range: Vec<(u32, u32)>,
    records: Vec<Record>,
    edges: Vec<Edge>,
    /// node id of every trainable leaf, indexed by `ParamId`
    params: Vec<u32>,
    adjoints: Vec<f64>,
    first_error: Option<AdError>,
}

impl Inner {
    fn push_node(&mut self, value: f64, tag: OpTag, needs_grad: bool) -> u32 {
        let id = self.values.len() as u32;
        self.values.push(value);
        self.tags.push(tag);
        self.needs_grad.push(needs_grad);
        self.edge_range.push((self.edges.len() as u32, 0));
        id
    }

    fn push_scalar(&mut self, value: f64, tag: OpTag, parents: &[(u32, f64)]) -> u32 {
        let first_edge = self.edges.len() as u32;
        let mut needs_grad = false;
        for &(parent, partial) in parents {
            needs_grad |= self.needs_grad[parent as usize];
            self.edges.push(Edge { parent, partial });
        }
        let node = self.push_node(value, tag, needs_grad);
        let n_edges = parents.len() as u32;
        self.edge_range[node as usize] = (first_edge, n_edges);
        self.records.push(Record::Scalar {
            node,
            first_edge,
            n_edges,
        });
        node
    }

    fn note_error(&mut self, err: AdError) {
        if self.first_error.is_none() {
            self.first_error = Some(err);
        }
    }
}

/// Append-only computation graph.
///
/// A tape is single-threaded (interior mutability through `RefCell`); build a
/// fresh one per training step or reuse it through [`Tape::reset`].
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Scalar node handle bound to its tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

/// Contiguous run of nodes, laid out sample-major for batched layers.
#[derive(Clone, Copy)]
pub struct Block<'t> {
    tape: &'t Tape,
    start: u32,
    len: u32,
}

impl fmt::Debug for Block<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Block")
            .field("start", &self.start)
            .field("len", &self.len)
            .finish()
    }
}

impl<'t> Block<'t> {
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn var(&self, i: usize) -> Var<'t> {
        assert!(i < self.len as usize, "block index {i} out of range");
        let id = self.start + i as u32;
        Var {
            tape: self.tape,
            id,
            value: self.tape.inner.borrow().values[id as usize],
        }
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let inner = self.tape.inner.borrow();
        (self.start..self.start + self.len)
            .map(|id| Var {
                tape: self.tape,
                id,
                value: inner.values[id as usize],
            })
            .collect()
    }

    pub fn values(&self) -> Vec<f64> {
        let inner = self.tape.inner.borrow();
        inner.values[self.start as usize..(self.start + self.len) as usize].to_vec()
    }

    /// Sub-range `[offset, offset + len)` of this block.
    pub fn slice(&self, offset: usize, len: usize) -> Block<'t> {
        assert!(offset + len <= self.len as usize, "block slice out of range");
        Block {
            tape: self.tape,
            start: self.start + offset as u32,
            len: len as u32,
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn id(&self) -> usize {
        self.id as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) -> bool {
        std::ptr::eq(self.tape, other.tape)
    }

    pub(crate) fn unary(self, tag: OpTag, value: f64, partial: f64) -> Var<'t> {
        let id = self
            .tape
            .inner
            .borrow_mut()
            .push_scalar(value, tag, &[(self.id, partial)]);
        Var {
            tape: self.tape,
            id,
            value,
        }
    }

    pub(crate) fn binary(self, other: Var<'t>, tag: OpTag, value: f64, da: f64, db: f64) -> Var<'t> {
        assert!(self.same_tape(&other), "operands live on different tapes");
        let id = self.tape.inner.borrow_mut().push_scalar(
            value,
            tag,
            &[(self.id, da), (other.id, db)],
        );
        Var {
            tape: self.tape,
            id,
            value,
        }
    }

    /// Records a domain failure on the tape and yields a NaN node so the
    /// failure surfaces downstream.
    pub(crate) fn poisoned(self, err: AdError, tag: OpTag, parents: &[u32]) -> Var<'t> {
        let mut inner = self.tape.inner.borrow_mut();
        inner.note_error(err);
        let edges: Vec<(u32, f64)> = parents.iter().map(|&p| (p, f64::NAN)).collect();
        let id = inner.push_scalar(f64::NAN, tag, &edges);
        Var {
            tape: self.tape,
            id,
            value: f64::NAN,
        }
    }
}

/// Gradient of a scalar root with respect to the tape's trainable leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
    reached: Vec<bool>,
}

impl Gradients {
    /// Gradient of a trainable leaf, `None` when the root does not depend on it.
    pub fn get(&self, param: ParamId) -> Option<f64> {
        let i = param.0 as usize;
        if i < self.values.len() && self.reached[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn wrt(&self, var: &Var<'_>) -> Option<f64> {
        var.tape().param_id(var).and_then(|p| self.get(p))
    }

    /// Dense gradient vector in `ParamId` order; unreachable leaves read 0.
    pub fn dense(&self) -> &[f64] {
        &self.values
    }

    pub fn into_dense(self) -> Vec<f64> {
        self.values
    }

    /// Number of trainable leaves reachable from the root.
    pub fn len(&self) -> usize {
        self.reached.iter().filter(|r| **r).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.reached)
            .enumerate()
            .filter(|(_, (_, r))| **r)
            .map(|(i, (g, _))| (ParamId(i as u32), *g))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all nodes while keeping allocated capacity.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.values.clear();
        inner.tags.clear();
        inner.needs_grad.clear();
        inner.edge_range.clear();
        inner.records.clear();
        inner.edges.clear();
        inner.params.clear();
        inner.adjoints.clear();
        inner.first_error = None;
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of non-leaf nodes, i.e. elementary operations executed.
    pub fn op_count(&self) -> usize {
        let inner = self.inner.borrow();
        inner.tags.iter().filter(|t| **t != OpTag::Leaf).count()
    }

    pub fn n_params(&self) -> usize {
        self.inner.borrow().params.len()
    }

    /// First domain error recorded by an infallible operator, if any.
    pub fn first_error(&self) -> Option<AdError> {
        self.inner.borrow().first_error.clone()
    }

    pub fn tag(&self, var: &Var<'_>) -> OpTag {
        self.inner.borrow().tags[var.id as usize]
    }

    /// `(parent node id, local derivative)` pairs of a scalar node.
    /// Nodes owned by fused records report their parents implicitly and
    /// return an empty list, as do leaves.
    pub fn parents(&self, var: &Var<'_>) -> Vec<(usize, f64)> {
        let inner = self.inner.borrow();
        let (first, n) = inner.edge_range[var.id as usize];
        inner.edges[first as usize..(first + n) as usize]
            .iter()
            .map(|e| (e.parent as usize, e.partial))
            .collect()
    }

    /// Adjoint left by the most recent backward pass (0 before any).
    pub fn adjoint(&self, var: &Var<'_>) -> f64 {
        self.inner
            .borrow()
            .adjoints
            .get(var.id as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn param_id(&self, var: &Var<'_>) -> Option<ParamId> {
        if !std::ptr::eq(self, var.tape) {
            return None;
        }
        let inner = self.inner.borrow();
        inner
            .params
            .binary_search(&var.id)
            .ok()
            .map(|i| ParamId(i as u32))
    }

    /// Creates a leaf; trainable leaves receive gradients in [`Tape::backward`].
    pub fn leaf(&self, value: f64, trainable: bool) -> Result<Var<'_>, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFiniteLeaf { value });
        }
        Ok(self.leaf_unchecked(value, trainable))
    }

    fn leaf_unchecked(&self, value: f64, trainable: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.push_node(value, OpTag::Leaf, trainable);
        inner.records.push(Record::Leaf);
        if trainable {
            inner.params.push(id);
        }
        Var {
            tape: self,
            id,
            value,
        }
    }

    /// Trainable leaf. Panics on a non-finite value; use [`Tape::leaf`] to
    /// get an error instead.
    pub fn param(&self, value: f64) -> Var<'_> {
        self.leaf(value, true).expect("parameter value must be finite")
    }

    /// Constant leaf excluded from the gradient map.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf_unchecked(value, false)
    }

    fn leaf_block(&self, values: &[f64], trainable: bool) -> Result<Block<'_>, AdError> {
        if let Some(&value) = values.iter().find(|v| !v.is_finite()) {
            return Err(AdError::NonFiniteLeaf { value });
        }
        let mut inner = self.inner.borrow_mut();
        let start = inner.values.len() as u32;
        for &v in values {
            let id = inner.push_node(v, OpTag::Leaf, trainable);
            inner.records.push(Record::Leaf);
            if trainable {
                inner.params.push(id);
            }
        }
        Ok(Block {
            tape: self,
            start,
            len: values.len() as u32,
        })
    }

    /// Contiguous block of trainable leaves.
    pub fn param_block(&self, values: &[f64]) -> Result<Block<'_>, AdError> {
        self.leaf_block(values, true)
    }

    /// Contiguous block of constant leaves.
    pub fn constant_block(&self, values: &[f64]) -> Result<Block<'_>, AdError> {
        self.leaf_block(values, false)
    }

    /// Gathers arbitrary nodes into a fresh contiguous block of copies.
    pub fn stack<'t>(&'t self, vars: &[Var<'t>]) -> Block<'t> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.values.len() as u32;
        for v in vars {
            assert!(std::ptr::eq(self, v.tape), "stacked var from another tape");
            inner.push_scalar(v.value, OpTag::Copy, &[(v.id, 1.0)]);
        }
        Block {
            tape: self,
            start,
            len: vars.len() as u32,
        }
    }

    /// Batched affine map `out[s] = W · x[s] + b`.
    ///
    /// `weights` is row-major `n_out × n_in`, `inputs` is `batch × n_in`
    /// sample-major; the result is `batch × n_out` sample-major.
    pub fn dense<'t>(
        &'t self,
        weights: Block<'t>,
        bias: Block<'t>,
        inputs: Block<'t>,
        n_in: usize,
        n_out: usize,
    ) -> Result<Block<'t>, AdError> {
        if weights.len() != n_in * n_out || bias.len() != n_out || n_in == 0 {
            return Err(AdError::Shape {
                what: "dense weights/bias",
                expected: n_in * n_out,
                found: weights.len(),
            });
        }
        if inputs.len() % n_in != 0 {
            return Err(AdError::Shape {
                what: "dense inputs",
                expected: n_in,
                found: inputs.len(),
            });
        }
        let batch = inputs.len() / n_in;
        let mut inner = self.inner.borrow_mut();
        let start = inner.values.len() as u32;
        let w0 = weights.start as usize;
        let b0 = bias.start as usize;
        let x0 = inputs.start as usize;
        let needs_grad = inner.needs_grad[w0..w0 + n_in * n_out].iter().any(|g| *g)
            || inner.needs_grad[b0..b0 + n_out].iter().any(|g| *g)
            || inner.needs_grad[x0..x0 + batch * n_in].iter().any(|g| *g);
        let mut out = vec![0.0; batch * n_out];
        {
            let values = &inner.values;
            let w = &values[w0..w0 + n_in * n_out];
            let b = &values[b0..b0 + n_out];
            for s in 0..batch {
                let x = &values[x0 + s * n_in..x0 + (s + 1) * n_in];
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let mut acc = b[o];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    out[s * n_out + o] = acc;
                }
            }
        }
        for v in out {
            inner.push_node(v, OpTag::Dense, needs_grad);
        }
        inner.records.push(Record::Dense {
            weights: weights.start,
            bias: bias.start,
            inputs: inputs.start,
            out: start,
            batch: batch as u32,
            n_in: n_in as u32,
            n_out: n_out as u32,
        });
        Ok(Block {
            tape: self,
            start,
            len: (batch * n_out) as u32,
        })
    }

    /// Elementwise activation over a block.
    pub fn map<'t>(&'t self, op: MapOp, input: Block<'t>) -> Block<'t> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.values.len() as u32;
        let tag = match op {
            MapOp::Tanh => OpTag::Tanh,
            MapOp::Sigmoid => OpTag::Sigmoid,
            MapOp::Relu => OpTag::Relu,
        };
        for i in 0..input.len as usize {
            let idx = input.start as usize + i;
            let x = inner.values[idx];
            let g = inner.needs_grad[idx];
            let y = match op {
                MapOp::Tanh => x.tanh(),
                MapOp::Sigmoid => sigmoid(x),
                MapOp::Relu => x.max(0.0),
            };
            inner.push_node(y, tag, g);
        }
        inner.records.push(Record::Map {
            op,
            input: input.start,
            out: start,
            len: input.len,
        });
        Block {
            tape: self,
            start,
            len: input.len,
        }
    }

    /// Strict elementary operation: arity and domain are checked and
    /// violations are returned instead of poisoning the tape.
    pub fn apply<'t>(&'t self, op: Op, args: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        if args.len() != op.arity() {
            return Err(AdError::Arity {
                op: op.tag(),
                expected: op.arity(),
                found: args.len(),
            });
        }
        for a in args {
            if !std::ptr::eq(self, a.tape) {
                return Err(AdError::ForeignNode);
            }
        }
        let vals: Vec<f64> = args.iter().map(|a| a.value).collect();
        if let Some(err) = domain_error(op, &vals) {
            return Err(err);
        }
        let out = match op {
            Op::Add => args[0] + args[1],
            Op::Sub => args[0] - args[1],
            Op::Mul => args[0] * args[1],
            Op::Div => args[0] / args[1],
            Op::Pow => args[0].pow(args[1]),
            Op::Exp => args[0].exp(),
            Op::Log => args[0].ln(),
            Op::Sin => args[0].sin(),
            Op::Cos => args[0].cos(),
            Op::Tanh => args[0].tanh(),
            Op::Min => args[0].min(args[1]),
            Op::Max => args[0].max(args[1]),
            Op::Clamp { lo, hi } => args[0].clamp(lo, hi),
            Op::Relu => args[0].relu(),
            Op::Neg => -args[0],
            Op::Sigmoid => args[0].sigmoid(),
        };
        if !out.value.is_finite() {
            return Err(AdError::NonFinite {
                op: op.tag(),
                args: vals,
            });
        }
        Ok(out)
    }

    /// Reverse accumulation from a scalar root.
    ///
    /// Records are visited in strict reverse creation order. The returned map
    /// holds exactly the trainable leaves the root depends on.
    pub fn backward(&self, root: &Var<'_>) -> Result<Gradients, AdError> {
        if !std::ptr::eq(self, root.tape) {
            return Err(AdError::ForeignNode);
        }
        let mut guard = self.inner.borrow_mut();
        let inner = &mut *guard;
        let n = inner.values.len();
        if root.id as usize >= n {
            return Err(AdError::ForeignNode);
        }
        let mut adj = std::mem::take(&mut inner.adjoints);
        adj.clear();
        adj.resize(n, 0.0);
        let mut reached = vec![false; n];
        adj[root.id as usize] = 1.0;
        reached[root.id as usize] = true;

        let values = &inner.values;
        let needs_grad = &inner.needs_grad;
        let edges = &inner.edges;

        for rec in inner.records.iter().rev() {
            match *rec {
                Record::Leaf => {}
                Record::Scalar {
                    node,
                    first_edge,
                    n_edges,
                } => {
                    let node = node as usize;
                    if !reached[node] || !needs_grad[node] {
                        continue;
                    }
                    let a = adj[node];
                    for e in &edges[first_edge as usize..(first_edge + n_edges) as usize] {
                        let p = e.parent as usize;
                        adj[p] += a * e.partial;
                        reached[p] = true;
                    }
                }
                Record::Dense {
                    weights,
                    bias,
                    inputs,
                    out,
                    batch,
                    n_in,
                    n_out,
                } => {
                    let (w0, b0, x0, o0) = (
                        weights as usize,
                        bias as usize,
                        inputs as usize,
                        out as usize,
                    );
                    let (batch, n_in, n_out) = (batch as usize, n_in as usize, n_out as usize);
                    if !needs_grad[o0] || !reached[o0..o0 + batch * n_out].iter().any(|r| *r) {
                        continue;
                    }
                    let x_grad = needs_grad[x0..x0 + batch * n_in].iter().any(|g| *g);
                    for s in 0..batch {
                        for o in 0..n_out {
                            let a = adj[o0 + s * n_out + o];
                            if a == 0.0 {
                                continue;
                            }
                            adj[b0 + o] += a;
                            let wrow = w0 + o * n_in;
                            let xrow = x0 + s * n_in;
                            for i in 0..n_in {
                                adj[wrow + i] += a * values[xrow + i];
                            }
                            if x_grad {
                                for i in 0..n_in {
                                    adj[xrow + i] += a * values[wrow + i];
                                }
                            }
                        }
                    }
                    reached[w0..w0 + n_in * n_out].fill(true);
                    reached[b0..b0 + n_out].fill(true);
                    reached[x0..x0 + batch * n_in].fill(true);
                }
                Record::Map { op, input, out, len } => {
                    let (i0, o0, len) = (input as usize, out as usize, len as usize);
                    for k in 0..len {
                        if !reached[o0 + k] || !needs_grad[o0 + k] {
                            continue;
                        }
                        let y = values[o0 + k];
                        let d = match op {
                            MapOp::Tanh => 1.0 - y * y,
                            MapOp::Sigmoid => y * (1.0 - y),
                            MapOp::Relu => {
                                if values[i0 + k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        adj[i0 + k] += adj[o0 + k] * d;
                        reached[i0 + k] = true;
                    }
                }
            }
        }

        let mut grads = Vec::with_capacity(inner.params.len());
        let mut hit = Vec::with_capacity(inner.params.len());
        for &node in &inner.params {
            grads.push(adj[node as usize]);
            hit.push(reached[node as usize]);
        }
        inner.adjoints = adj;
        Ok(Gradients {
            values: grads,
            reached: hit,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Domain precondition of an elementary op, `None` when satisfied.
pub(crate) fn domain_error(op: Op, args: &[f64]) -> Option<AdError> {
    let bad = match op {
        Op::Log => args[0] <= 0.0,
        Op::Div => args[1] == 0.0,
        Op::Pow => args[0] <= 0.0,
        Op::Clamp { lo, hi } => !(lo <= hi),
        _ => false,
    };
    if bad || args.iter().any(|a| !a.is_finite()) {
        Some(AdError::Domain {
            op: op.tag(),
            args: args.to_vec(),
        })
    } else {
        None
    }
}
