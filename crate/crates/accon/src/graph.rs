//! Reverse-mode autodiff on an append-only operation tape.
//!
//! Nodes are appended in evaluation order, so node ids are already a
//! topological order and `backward` is a single reverse sweep. Everything is
//! f64. Forward values are cached on the node; gradients live in optional
//! buffers that accumulate across `backward` calls until `zero_grad`.

use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

/// Rows whose L2 norm falls below this are scaled by the floor instead, so a
/// zero row maps to a zero row rather than NaN.
pub const NORM_FLOOR: f64 = 1e-12;

/// Additive mask for entries excluded from a row softmax. Large enough that
/// exp(x - rowmax) underflows to exactly 0.0 for any finite unmasked rowmax.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("matmul shape mismatch: {lhs:?} x {rhs:?}")]
    MatmulShape { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: cannot broadcast {lhs:?} with {rhs:?}")]
    Broadcast {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NonScalarTarget { shape: Vec<usize> },
    #[error("reshape {from:?} -> {to:?} changes the element count")]
    ReshapeCount { from: Vec<usize>, to: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Sqrt,
    Abs,
    Exp,
    Log,
    Cos,
    Sin,
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZipKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// How the smaller operand of a binary op lines up with the larger one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Equal,
    ScalarLhs,
    ScalarRhs,
    RowLhs,
    RowRhs,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Map(MapKind, NodeId),
    Zip(ZipKind, Broadcast, NodeId, NodeId),
    Scale(NodeId, f64),
    RowNormalize(NodeId),
    LogSumExpRows(NodeId),
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    degenerate_rows: u64,
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

    /// Rows that hit the normalization floor since construction.
    pub fn degenerate_rows(&self) -> u64 {
        self.degenerate_rows
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Clone of the node's value with its current gradient attached.
    pub fn value_with_grad(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        let mut t = node.value.clone();
        if let Some(g) = &node.grad {
            t.set_grad(g.clone()).expect("node grad length matches value");
        }
        t
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    // ── forward ops ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(GraphError::MatmulShape {
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (av, bv) = (ta.values(), tb.values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * bv[p * n + j];
                }
            }
        }
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 2 {
            return Err(GraphError::NotMatrix {
                op: "transpose",
                shape: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let av = ta.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let value = Tensor::new([n, m], out)?;
        Ok(self.push(Op::Transpose(a), value))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != ta.len() {
            return Err(GraphError::ReshapeCount {
                from: ta.shape().to_vec(),
                to: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), ta.values().to_vec())?;
        Ok(self.push(Op::Reshape(a), value))
    }

    pub fn map(&mut self, kind: MapKind, a: NodeId) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        let f = |x: f64| match kind {
            MapKind::Sqrt => x.sqrt(),
            MapKind::Abs => x.abs(),
            MapKind::Exp => x.exp(),
            MapKind::Log => x.ln(),
            MapKind::Cos => x.cos(),
            MapKind::Sin => x.sin(),
            MapKind::Relu => x.max(0.0),
            MapKind::Tanh => x.tanh(),
        };
        let value = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| f(x)).collect())?;
        Ok(self.push(Op::Map(kind, a), value))
    }

    pub fn zip(&mut self, kind: ZipKind, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bc = broadcast_of(ta, tb).ok_or_else(|| GraphError::Broadcast {
            op: zip_name(kind),
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })?;
        let f = |x: f64, y: f64| match kind {
            ZipKind::Add => x + y,
            ZipKind::Sub => x - y,
            ZipKind::Mul => x * y,
            ZipKind::Div => x / y,
        };
        let (av, bv) = (ta.values(), tb.values());
        let value = match bc {
            Broadcast::Equal => Tensor::new(
                ta.shape().to_vec(),
                av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            )?,
            Broadcast::ScalarRhs => {
                let s = bv[0];
                Tensor::new(ta.shape().to_vec(), av.iter().map(|&x| f(x, s)).collect())?
            }
            Broadcast::ScalarLhs => {
                let s = av[0];
                Tensor::new(tb.shape().to_vec(), bv.iter().map(|&y| f(s, y)).collect())?
            }
            Broadcast::RowRhs => {
                let cols = tb.cols();
                Tensor::new(
                    ta.shape().to_vec(),
                    av.iter()
                        .enumerate()
                        .map(|(i, &x)| f(x, bv[i % cols]))
                        .collect(),
                )?
            }
            Broadcast::RowLhs => {
                let cols = ta.cols();
                Tensor::new(
                    tb.shape().to_vec(),
                    bv.iter()
                        .enumerate()
                        .map(|(i, &y)| f(av[i % cols], y))
                        .collect(),
                )?
            }
        };
        Ok(self.push(Op::Zip(kind, bc, a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(ZipKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(ZipKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(ZipKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(ZipKind::Div, a, b)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        let value = Tensor::new(
            ta.shape().to_vec(),
            ta.values().iter().map(|&x| c * x).collect(),
        )?;
        Ok(self.push(Op::Scale(a, c), value))
    }

    /// Divide each row by its L2 norm; norms below `NORM_FLOOR` are replaced
    /// by the floor (and counted), so zero rows stay zero.
    pub fn rowwise_l2_normalize(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() > 2 {
            return Err(GraphError::NotMatrix {
                op: "rowwise_l2_normalize",
                shape: ta.shape().to_vec(),
            });
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let av = ta.values();
        let mut out = vec![0.0; rows * cols];
        let mut floored = 0;
        for i in 0..rows {
            let row = &av[i * cols..(i + 1) * cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = if norm < NORM_FLOOR {
                floored += 1;
                NORM_FLOOR
            } else {
                norm
            };
            for j in 0..cols {
                out[i * cols + j] = row[j] / denom;
            }
        }
        self.degenerate_rows += floored;
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(Op::RowNormalize(a), value))
    }

    /// log(sum(exp(row))) per row with max subtraction, shape [rows].
    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() > 2 {
            return Err(GraphError::NotMatrix {
                op: "logsumexp_rows",
                shape: ta.shape().to_vec(),
            });
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let av = ta.values();
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            out[i] = logsumexp(&av[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new([rows], out)?;
        Ok(self.push(Op::LogSumExpRows(a), value))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let ta = &self.nodes[a.0].value;
        let value = Tensor::scalar(ta.values().iter().sum());
        Ok(self.push(Op::Sum(a), value))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar target. Each call computes one full
    /// gradient pass in scratch buffers, then adds it into every node's grad
    /// slot, so repeated calls accumulate and `zero_grad` resets.
    pub fn backward(&mut self, target: NodeId) -> Result<(), GraphError> {
        let t = &self.nodes[target.0].value;
        if !t.is_scalar() {
            return Err(GraphError::NonScalarTarget {
                shape: t.shape().to_vec(),
            });
        }
        let mut local: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        local[target.0] = Some(vec![1.0]);

        for id in (0..=target.0).rev() {
            // Inputs always precede their consumer, so taking this buffer out
            // cannot conflict with the writes below.
            let Some(g) = local[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut local);
            local[id] = Some(g);
        }

        for (node, l) in self.nodes.iter_mut().zip(local) {
            if let Some(l) = l {
                let slot = accum(&mut node.grad, l.len());
                for (d, s) in slot.iter_mut().zip(&l) {
                    *d += s;
                }
            }
        }
        Ok(())
    }

    /// Push `g`, the gradient at node `id`, one step to its inputs.
    fn propagate(&self, id: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let k = self.nodes[a.0].value.shape()[1];
                let av = self.nodes[a.0].value.values();
                let bv = self.nodes[b.0].value.values();
                {
                    let ga = accum(&mut local[a.0], m * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * bv[p * n + j];
                            }
                        }
                    }
                }
                let gb = accum(&mut local[b.0], k * n);
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                let ga = accum(&mut local[a.0], m * n);
                for i in 0..n {
                    for j in 0..m {
                        ga[j * n + i] += g[i * m + j];
                    }
                }
            }
            Op::Reshape(a) => {
                let ga = accum(&mut local[a.0], g.len());
                for (d, s) in ga.iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Map(kind, a) => {
                let x = self.nodes[a.0].value.values();
                let y = node.value.values();
                let ga = accum(&mut local[a.0], x.len());
                for i in 0..x.len() {
                    let d = match kind {
                        MapKind::Sqrt => 0.5 / y[i],
                        // Subgradient 0 at the kink.
                        MapKind::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        MapKind::Exp => y[i],
                        MapKind::Log => 1.0 / x[i],
                        MapKind::Cos => -x[i].sin(),
                        MapKind::Sin => x[i].cos(),
                        // Subgradient 0 at the kink.
                        MapKind::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        MapKind::Tanh => 1.0 - y[i] * y[i],
                    };
                    ga[i] += g[i] * d;
                }
            }
            Op::Zip(kind, bc, a, b) => {
                let av = self.nodes[a.0].value.values();
                let bv = self.nodes[b.0].value.values();
                zip_backward(kind, bc, av, bv, a, b, local, g);
            }
            Op::Scale(a, c) => {
                let ga = accum(&mut local[a.0], g.len());
                for i in 0..g.len() {
                    ga[i] += c * g[i];
                }
            }
            Op::RowNormalize(a) => {
                let x = self.nodes[a.0].value.values();
                let y = node.value.values();
                let cols = node.value.cols();
                let rows = node.value.rows();
                let ga = accum(&mut local[a.0], x.len());
                for i in 0..rows {
                    let xr = &x[i * cols..(i + 1) * cols];
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < NORM_FLOOR {
                        // Floored branch is the linear map x / NORM_FLOOR.
                        for j in 0..cols {
                            ga[i * cols + j] += gr[j] / NORM_FLOOR;
                        }
                    } else {
                        let dot: f64 = gr.iter().zip(yr).map(|(&gv, &yv)| gv * yv).sum();
                        for j in 0..cols {
                            ga[i * cols + j] += (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let x = self.nodes[a.0].value.values();
                let cols = self.nodes[a.0].value.cols();
                let y = node.value.values();
                let ga = accum(&mut local[a.0], x.len());
                for i in 0..y.len() {
                    for j in 0..cols {
                        ga[i * cols + j] += g[i] * (x[i * cols + j] - y[i]).exp();
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                let ga = accum(&mut local[a.0], n);
                for v in ga.iter_mut() {
                    *v += g[0];
                }
            }
        }
    }
}

fn accum(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn zip_name(kind: ZipKind) -> &'static str {
    match kind {
        ZipKind::Add => "add",
        ZipKind::Sub => "sub",
        ZipKind::Mul => "mul",
        ZipKind::Div => "div",
    }
}

fn broadcast_of(a: &Tensor, b: &Tensor) -> Option<Broadcast> {
    if a.shape() == b.shape() {
        return Some(Broadcast::Equal);
    }
    if b.is_scalar() {
        return Some(Broadcast::ScalarRhs);
    }
    if a.is_scalar() {
        return Some(Broadcast::ScalarLhs);
    }
    // A row ([n] or [1, n]) against a matrix [m, n].
    if a.rank() == 2 && b.rows() == 1 && b.cols() == a.shape()[1] {
        return Some(Broadcast::RowRhs);
    }
    if b.rank() == 2 && a.rows() == 1 && a.cols() == b.shape()[1] {
        return Some(Broadcast::RowLhs);
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zip_backward(
    kind: ZipKind,
    bc: Broadcast,
    av: &[f64],
    bv: &[f64],
    a: NodeId,
    b: NodeId,
    local: &mut [Option<Vec<f64>>],
    g: &[f64],
) {
    let (alen, blen) = (av.len(), bv.len());
    // Effective operand value at flat output index i.
    let aval = |i: usize| match bc {
        Broadcast::ScalarLhs => av[0],
        Broadcast::RowLhs => av[i % alen],
        _ => av[i],
    };
    let bval = |i: usize| match bc {
        Broadcast::ScalarRhs => bv[0],
        Broadcast::RowRhs => bv[i % blen],
        _ => bv[i],
    };
    // Flat index in the operand receiving the contribution for output index i.
    let aidx = |i: usize| match bc {
        Broadcast::ScalarLhs => 0,
        Broadcast::RowLhs => i % alen,
        _ => i,
    };
    let bidx = |i: usize| match bc {
        Broadcast::ScalarRhs => 0,
        Broadcast::RowRhs => i % blen,
        _ => i,
    };
    {
        let ga = accum(&mut local[a.0], alen);
        for i in 0..g.len() {
            let d = match kind {
                ZipKind::Add | ZipKind::Sub => g[i],
                ZipKind::Mul => g[i] * bval(i),
                ZipKind::Div => g[i] / bval(i),
            };
            ga[aidx(i)] += d;
        }
    }
    let gb = accum(&mut local[b.0], blen);
    for i in 0..g.len() {
        let d = match kind {
            ZipKind::Add => g[i],
            ZipKind::Sub => -g[i],
            ZipKind::Mul => g[i] * aval(i),
            ZipKind::Div => -g[i] * aval(i) / (bval(i) * bval(i)),
        };
        gb[bidx(i)] += d;
    }
}

/// Max-subtracted log(sum(exp(xs))). Entries at or below `MASK_NEG` contribute
/// exactly zero.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
