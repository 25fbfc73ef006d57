//! Reverse-mode automatic differentiation on dense f64 matrices.
//!
//! Define-by-run: a [`Tape`] is built per forward pass, ops record their
//! inputs and a backward rule, and [`Tape::backward`] replays the recording
//! in reverse topological order. The tape is dropped and rebuilt every
//! training iteration, which keeps data-dependent graph structure (masks,
//! targets recomputed from forward values) trivially correct.
//!
//! Gradient accumulation is ordered and sequential, so two identical runs
//! produce bit-identical gradients.

mod tensor;

#[cfg(test)]
mod tests;

pub use tensor::{NodeRef, Tensor};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::dense;
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

type NodeId = usize;

/// How a node was produced; inputs are node ids on the same tape.
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Spmm { m: Arc<PropagationOperator>, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    PowScalar { x: NodeId, p: f64 },
    Log { x: NodeId },
    ClampMin { x: NodeId, floor: f64 },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Tanh { x: NodeId },
    Square { x: NodeId },
    SumAll { x: NodeId },
    RowSoftmax { x: NodeId },
    RowL2Normalize { x: NodeId },
    RowNormalize { x: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    ColSlice { x: NodeId, start: usize },
    ColBroadcastScale { w: NodeId, x: NodeId },
    Transpose { x: NodeId },
}

struct Node {
    rows: usize,
    cols: usize,
    values: Arc<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Tensor {
        let id = self.nodes.len();
        let values = Arc::new(values);
        self.nodes.push(Node {
            rows,
            cols,
            values: Arc::clone(&values),
            op,
            needs_grad,
        });
        Tensor::from_shared(rows, cols, values, Some(NodeRef { tape: self.id, id }))
    }

    fn intern(&mut self, t: &Tensor, needs_grad: bool) -> Tensor {
        let id = self.nodes.len();
        self.nodes.push(Node {
            rows: t.rows(),
            cols: t.cols(),
            values: t.shared_values(),
            op: Op::Leaf,
            needs_grad,
        });
        Tensor::from_shared(
            t.rows(),
            t.cols(),
            t.shared_values(),
            Some(NodeRef { tape: self.id, id }),
        )
    }

    /// Register a differentiable leaf (a parameter).
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        self.intern(t, true)
    }

    /// Register a constant leaf; no gradient is ever computed for it.
    pub fn constant(&mut self, t: &Tensor) -> Tensor {
        self.intern(t, false)
    }

    /// Node id of `t` on this tape, interning foreign/plain tensors as
    /// constants.
    fn node_of(&mut self, t: &Tensor) -> NodeId {
        match t.node() {
            Some(r) if r.tape == self.id => r.id,
            _ => {
                let interned = self.intern(t, false);
                interned.node().unwrap().id
            }
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn vals(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].values
    }

    // ---- ops -----------------------------------------------------------

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols() != b.rows() {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (n, m, p) = (a.rows(), a.cols(), b.cols());
        let values = dense::matmul_nn(a.values(), b.values(), n, m, p);
        let (ia, ib) = (self.node_of(a), self.node_of(b));
        let ng = self.needs(ia) || self.needs(ib);
        Ok(self.push(n, p, values, Op::Matmul { a: ia, b: ib }, ng))
    }

    /// Sparse propagation operator times dense features.
    pub fn spmm(&mut self, m: &Arc<PropagationOperator>, x: &Tensor) -> Result<Tensor> {
        if m.node_count() != x.rows() {
            return Err(Error::shape(
                "spmm",
                (m.node_count(), m.node_count()),
                x.shape(),
            ));
        }
        let values = m.apply(x.values(), x.cols());
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        Ok(self.push(
            x.rows(),
            x.cols(),
            values,
            Op::Spmm {
                m: Arc::clone(m),
                x: ix,
            },
            ng,
        ))
    }

    fn binary_same_shape(
        &mut self,
        opname: &'static str,
        a: &Tensor,
        b: &Tensor,
    ) -> Result<(NodeId, NodeId)> {
        if a.shape() != b.shape() {
            return Err(Error::shape(opname, a.shape(), b.shape()));
        }
        Ok((self.node_of(a), self.node_of(b)))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = self.binary_same_shape("add", a, b)?;
        let values = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
        let ng = self.needs(ia) || self.needs(ib);
        Ok(self.push(a.rows(), a.cols(), values, Op::Add { a: ia, b: ib }, ng))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = self.binary_same_shape("sub", a, b)?;
        let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let ng = self.needs(ia) || self.needs(ib);
        Ok(self.push(a.rows(), a.cols(), values, Op::Sub { a: ia, b: ib }, ng))
    }

    pub fn hadamard(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = self.binary_same_shape("hadamard", a, b)?;
        let values = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
        let ng = self.needs(ia) || self.needs(ib);
        Ok(self.push(a.rows(), a.cols(), values, Op::Hadamard { a: ia, b: ib }, ng))
    }

    pub fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        let values = x.values().iter().map(|v| c * v).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::Scale { x: ix, c }, ng)
    }

    pub fn add_scalar(&mut self, x: &Tensor, c: f64) -> Tensor {
        let values = x.values().iter().map(|v| v + c).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::AddScalar { x: ix }, ng)
    }

    /// Elementwise power with a constant exponent; domain x > 0.
    pub fn pow_scalar(&mut self, x: &Tensor, p: f64) -> Tensor {
        let values = x.values().iter().map(|v| v.powf(p)).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::PowScalar { x: ix, p }, ng)
    }

    /// Elementwise natural log; callers clamp nonpositive inputs first.
    pub fn log(&mut self, x: &Tensor) -> Tensor {
        let values = x.values().iter().map(|v| v.ln()).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::Log { x: ix }, ng)
    }

    pub fn clamp_min(&mut self, x: &Tensor, floor: f64) -> Tensor {
        let values = x.values().iter().map(|v| v.max(floor)).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::ClampMin { x: ix, floor }, ng)
    }

    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        let values = x.values().iter().map(|v| v.max(0.0)).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::Relu { x: ix }, ng)
    }

    /// x if x >= 0 else slope*x; slope in (0,1). Backward uses the same
    /// branch per element.
    pub fn leaky_relu(&mut self, x: &Tensor, slope: f64) -> Tensor {
        debug_assert!(slope > 0.0 && slope < 1.0, "slope must be in (0,1)");
        let values = x
            .values()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::LeakyRelu { x: ix, slope }, ng)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Tensor {
        let values = x.values().iter().map(|v| v.tanh()).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::Tanh { x: ix }, ng)
    }

    pub fn square(&mut self, x: &Tensor) -> Tensor {
        let values = x.values().iter().map(|v| v * v).collect();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(x.rows(), x.cols(), values, Op::Square { x: ix }, ng)
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum_all(&mut self, x: &Tensor) -> Tensor {
        let total: f64 = x.values().iter().sum();
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(1, 1, vec![total], Op::SumAll { x: ix }, ng)
    }

    /// Rowwise softmax, stabilized by subtracting the row maximum.
    pub fn row_softmax(&mut self, x: &Tensor) -> Tensor {
        let (n, c) = x.shape();
        let mut values = vec![0.0; n * c];
        for i in 0..n {
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut values[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(n, c, values, Op::RowSoftmax { x: ix }, ng)
    }

    /// Scale each row to unit Euclidean norm. Errors on an all-zero row.
    pub fn row_l2_normalize(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c) = x.shape();
        let mut values = vec![0.0; n * c];
        for i in 0..n {
            let row = x.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate {
                    op: "row_l2_normalize",
                    msg: format!("row {i} is all zeros"),
                });
            }
            for (o, &v) in values[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v / norm;
            }
        }
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        Ok(self.push(n, c, values, Op::RowL2Normalize { x: ix }, ng))
    }

    /// Divide each row by its sum. Domain: strictly positive row sums.
    pub fn row_normalize(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c) = x.shape();
        let mut values = vec![0.0; n * c];
        for i in 0..n {
            let row = x.row(i);
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::Degenerate {
                    op: "row_normalize",
                    msg: format!("row {i} has nonpositive sum {sum}"),
                });
            }
            for (o, &v) in values[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v / sum;
            }
        }
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        Ok(self.push(n, c, values, Op::RowNormalize { x: ix }, ng))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidParameter(
                "concat_cols needs at least one part".into(),
            ));
        };
        let n = first.rows();
        for p in parts {
            if p.rows() != n {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut values = vec![0.0; n * total];
        let mut offset = 0;
        for p in parts {
            let c = p.cols();
            for i in 0..n {
                values[i * total + offset..i * total + offset + c]
                    .copy_from_slice(p.row(i));
            }
            offset += c;
        }
        let ids: Vec<NodeId> = parts.iter().map(|p| self.node_of(p)).collect();
        let ng = ids.iter().any(|&i| self.needs(i));
        Ok(self.push(n, total, values, Op::ConcatCols { parts: ids }, ng))
    }

    /// Columns [start, start+len) as a new tensor.
    pub fn col_slice(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (n, c) = x.shape();
        if len == 0 || start + len > c {
            return Err(Error::InvalidParameter(format!(
                "col_slice [{start}, {}) out of bounds for width {c}",
                start + len
            )));
        }
        let mut values = Vec::with_capacity(n * len);
        for i in 0..n {
            values.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        Ok(self.push(n, len, values, Op::ColSlice { x: ix, start }, ng))
    }

    /// Row r of the output is w[r] times row r of x; w is a column vector.
    pub fn col_broadcast_scale(&mut self, w: &Tensor, x: &Tensor) -> Result<Tensor> {
        if w.cols() != 1 || w.rows() != x.rows() {
            return Err(Error::shape("col_broadcast_scale", w.shape(), x.shape()));
        }
        let (n, c) = x.shape();
        let mut values = vec![0.0; n * c];
        for i in 0..n {
            let wi = w.at(i, 0);
            for (o, &v) in values[i * c..(i + 1) * c].iter_mut().zip(x.row(i)) {
                *o = wi * v;
            }
        }
        let (iw, ix) = (self.node_of(w), self.node_of(x));
        let ng = self.needs(iw) || self.needs(ix);
        Ok(self.push(n, c, values, Op::ColBroadcastScale { w: iw, x: ix }, ng))
    }

    pub fn transpose(&mut self, x: &Tensor) -> Tensor {
        let (n, c) = x.shape();
        let values = dense::transpose(x.values(), n, c);
        let ix = self.node_of(x);
        let ng = self.needs(ix);
        self.push(c, n, values, Op::Transpose { x: ix }, ng)
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-topological gradient accumulation from a scalar loss.
    ///
    /// Leaves not on a path to the loss read back as zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let node = match loss.node() {
            Some(r) if r.tape == self.id => r.id,
            _ => {
                return Err(Error::Contract {
                    op: "backward",
                    msg: "loss tensor does not belong to this tape".into(),
                })
            }
        };
        if loss.shape() != (1, 1) {
            return Err(Error::Contract {
                op: "backward",
                msg: format!("loss must be scalar (1x1), got {}x{}", loss.rows(), loss.cols()),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[node] = Some(vec![1.0]);

        for id in (0..=node).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.apply_backward(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| (n.rows, n.cols)).collect(),
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, update: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = grads[id]
            .get_or_insert_with(|| vec![0.0; self.nodes[id].rows * self.nodes[id].cols]);
        update(slot);
    }

    fn apply_backward(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (na, ma) = (self.nodes[*a].rows, self.nodes[*a].cols);
                if self.needs(*a) {
                    // dA = g · Bᵀ
                    let da = dense::matmul_nt(g, self.vals(*b), rows, cols, ma);
                    self.accumulate(grads, *a, |s| add_into(s, &da));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · g
                    let db = dense::matmul_tn(self.vals(*a), g, na, ma, cols);
                    self.accumulate(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::Spmm { m, x } => {
                if self.needs(*x) {
                    // operator is symmetric, so the adjoint is itself
                    let dx = m.apply(g, cols);
                    self.accumulate(grads, *x, |s| add_into(s, &dx));
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| {
                    for (o, &gv) in s.iter_mut().zip(g) {
                        *o -= gv;
                    }
                });
            }
            Op::Hadamard { a, b } => {
                if self.needs(*a) {
                    let bv = self.vals(*b);
                    self.accumulate(grads, *a, |s| {
                        for ((o, &gv), &b) in s.iter_mut().zip(g).zip(bv) {
                            *o += gv * b;
                        }
                    });
                }
                if self.needs(*b) {
                    let av = self.vals(*a);
                    self.accumulate(grads, *b, |s| {
                        for ((o, &gv), &a) in s.iter_mut().zip(g).zip(av) {
                            *o += gv * a;
                        }
                    });
                }
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(grads, *x, |s| {
                    for (o, &gv) in s.iter_mut().zip(g) {
                        *o += c * gv;
                    }
                });
            }
            Op::AddScalar { x } => {
                self.accumulate(grads, *x, |s| add_into(s, g));
            }
            Op::PowScalar { x, p } => {
                let p = *p;
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        *o += gv * p * x.powf(p - 1.0);
                    }
                });
            }
            Op::Log { x } => {
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        *o += gv / x;
                    }
                });
            }
            Op::ClampMin { x, floor } => {
                let floor = *floor;
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        if x >= floor {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        if x >= 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        *o += if x >= 0.0 { gv } else { slope * gv };
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = &node.values;
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &y) in s.iter_mut().zip(g).zip(yv.iter()) {
                        *o += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Square { x } => {
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for ((o, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        *o += 2.0 * x * gv;
                    }
                });
            }
            Op::SumAll { x } => {
                let gv = g[0];
                self.accumulate(grads, *x, |s| {
                    for o in s.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::RowSoftmax { x } => {
                let yv = &node.values;
                self.accumulate(grads, *x, |s| {
                    for i in 0..rows {
                        let y = &yv[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                        for ((o, &yj), &gj) in
                            s[i * cols..(i + 1) * cols].iter_mut().zip(y).zip(gr)
                        {
                            *o += yj * (gj - dot);
                        }
                    }
                });
            }
            Op::RowL2Normalize { x } => {
                let yv = &node.values;
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for i in 0..rows {
                        let xr = &xv[i * cols..(i + 1) * cols];
                        let y = &yv[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = y.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                        for ((o, &yj), &gj) in
                            s[i * cols..(i + 1) * cols].iter_mut().zip(y).zip(gr)
                        {
                            *o += (gj - yj * dot) / norm;
                        }
                    }
                });
            }
            Op::RowNormalize { x } => {
                let yv = &node.values;
                let xv = self.vals(*x);
                self.accumulate(grads, *x, |s| {
                    for i in 0..rows {
                        let xr = &xv[i * cols..(i + 1) * cols];
                        let y = &yv[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let sum: f64 = xr.iter().sum();
                        let dot: f64 = y.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                        for (o, &gj) in s[i * cols..(i + 1) * cols].iter_mut().zip(gr) {
                            *o += (gj - dot) / sum;
                        }
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p].cols;
                    if self.needs(p) {
                        let mut dp = vec![0.0; rows * pc];
                        for i in 0..rows {
                            dp[i * pc..(i + 1) * pc].copy_from_slice(
                                &g[i * cols + offset..i * cols + offset + pc],
                            );
                        }
                        self.accumulate(grads, p, |s| add_into(s, &dp));
                    }
                    offset += pc;
                }
            }
            Op::ColSlice { x, start } => {
                let start = *start;
                let xc = self.nodes[*x].cols;
                self.accumulate(grads, *x, |s| {
                    for i in 0..rows {
                        for j in 0..cols {
                            s[i * xc + start + j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::ColBroadcastScale { w, x } => {
                if self.needs(*w) {
                    let xv = self.vals(*x);
                    self.accumulate(grads, *w, |s| {
                        for i in 0..rows {
                            let mut acc = 0.0;
                            for j in 0..cols {
                                acc += g[i * cols + j] * xv[i * cols + j];
                            }
                            s[i] += acc;
                        }
                    });
                }
                if self.needs(*x) {
                    let wv = self.vals(*w);
                    self.accumulate(grads, *x, |s| {
                        for i in 0..rows {
                            let wi = wv[i];
                            for j in 0..cols {
                                s[i * cols + j] += wi * g[i * cols + j];
                            }
                        }
                    });
                }
            }
            Op::Transpose { x } => {
                let dt = dense::transpose(g, rows, cols);
                self.accumulate(grads, *x, |s| add_into(s, &dt));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradient map produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    shapes: Vec<(usize, usize)>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a tensor registered on the originating tape.
    /// Leaves the loss never reached read back as all zeros.
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor> {
        let node = match t.node() {
            Some(r) if r.tape == self.tape => r.id,
            _ => {
                return Err(Error::Contract {
                    op: "gradients",
                    msg: "tensor does not belong to the differentiated tape".into(),
                })
            }
        };
        let (rows, cols) = self.shapes[node];
        match &self.grads[node] {
            Some(g) => Tensor::new(rows, cols, g.clone()),
            None => Ok(Tensor::zeros(rows, cols)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Max relative error between analytic and central-difference gradients.
///
/// `f` must be a pure function of the registered leaves: it is re-run twice
/// per parameter entry with that entry shifted by ±eps.
pub fn grad_check<F>(f: F, at: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    debug_assert!((1e-7..=1e-3).contains(&eps), "eps outside sane range");

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = at.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &leaves)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .map(|l| grads.wrt(l))
        .collect::<Result<_>>()?;

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
        f(&mut tape, &leaves)?.scalar()
    };

    let mut worst: f64 = 0.0;
    for (pi, tensor) in at.iter().enumerate() {
        for e in 0..tensor.values().len() {
            let mut plus: Vec<Tensor> = at.to_vec();
            plus[pi] = tensor.with_perturbed(e, eps);
            let mut minus: Vec<Tensor> = at.to_vec();
            minus[pi] = tensor.with_perturbed(e, -eps);
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[pi].values()[e];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
