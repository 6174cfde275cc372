//! Append-only reverse-mode tape. Nodes are created in topological order, so
//! the backward sweep is a single reverse pass over the node list.
//!
//! Every primitive validates input shapes and checks its output for NaN/Inf;
//! a non-finite value anywhere is an error, not a silent state.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul,
    Add,
    Sub,
    Mul,
    BroadcastAddRow,
    Exp,
    Log,
    Tanh,
    Square,
    Neg,
    Scale(f64),
    AddScalar,
    Clamp { lo: f64, hi: f64 },
    SumAll,
    MeanAll,
    SumAxis(usize),
    LogSumExpAxis(usize),
    SliceCols { start: usize, end: usize },
    GaussPairwiseLogPdf,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::BroadcastAddRow => "broadcast_add",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Square => "square",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Clamp { .. } => "clamp",
            Op::SumAll => "sum_all",
            Op::MeanAll => "mean_all",
            Op::SumAxis(_) => "sum_axis",
            Op::LogSumExpAxis(_) => "logsumexp_axis",
            Op::SliceCols { .. } => "slice_cols",
            Op::GaussPairwiseLogPdf => "gauss_pairwise_logpdf",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    parents: Vec<NodeId>,
    requires_grad: bool,
    trainable_leaf: bool,
}

/// Gradients of a scalar root with respect to tape nodes. Trainable leaves
/// always have an entry (zeros when unreachable from the root).
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name(), detail: None });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            parents: parents.to_vec(),
            requires_grad,
            trainable_leaf: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a leaf holding `value`. Trainable leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf", detail: None });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            parents: vec![],
            requires_grad: trainable,
            trainable_leaf: trainable,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, false)
    }

    // ── primitives ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(m, k, n, ta.data(), tb.data(), out.data_mut(), false);
        self.push(out, Op::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("mul", Op::Mul, a, b, |x, y| x * y)
    }

    fn zip(
        &mut self,
        name: &'static str,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(self.mismatch(name, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        self.push(out, op, &[a, b])
    }

    /// `[m,n] + [n]`: add a bias row to every row of a matrix.
    pub fn broadcast_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if tx.rank() != 2 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(self.mismatch("broadcast_add", x, bias));
        }
        let (m, n) = (tx.shape()[0], tx.shape()[1]);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (j, &b) in tb.data().iter().enumerate() {
                data.push(tx.data()[i * n + j] + b);
            }
        }
        let out = Tensor::from_vec(&[m, n], data)?;
        self.push(out, Op::BroadcastAddRow, &[x, bias])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(f64::exp);
        self.push(out, Op::Exp, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(f64::ln);
        self.push(out, Op::Log, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(f64::tanh);
        self.push(out, Op::Tanh, &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| v * v);
        self.push(out, Op::Square, &[x])
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| -v);
        self.push(out, Op::Neg, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| c * v);
        self.push(out, Op::Scale(c), &[x])
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| v + c);
        self.push(out, Op::AddScalar, &[x])
    }

    /// Elementwise clamp. Gradient passes through strictly interior entries
    /// and is zero at saturated ones.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { lo, hi }, &[x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll, &[x])
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.nodes[x.0].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll, &[x])
    }

    /// Sum a matrix over `axis` (0 → column sums `[n]`, 1 → row sums `[m]`).
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 || axis > 1 {
            return Err(Error::InvalidArgument {
                context: "sum_axis",
                message: format!("rank-2 tensor and axis 0|1 required, got {:?} axis {axis}", t.shape()),
            });
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let out = if axis == 1 {
            Tensor::vector((0..m).map(|i| t.row(i).iter().sum()).collect())
        } else {
            let mut acc = vec![0.0; n];
            for i in 0..m {
                for (j, &v) in t.row(i).iter().enumerate() {
                    acc[j] += v;
                }
            }
            Tensor::vector(acc)
        };
        self.push(out, Op::SumAxis(axis), &[x])
    }

    /// Numerically stable log-sum-exp of a matrix over `axis`.
    pub fn logsumexp_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 || axis > 1 {
            return Err(Error::InvalidArgument {
                context: "logsumexp_axis",
                message: format!("rank-2 tensor and axis 0|1 required, got {:?} axis {axis}", t.shape()),
            });
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let (outer, inner) = if axis == 1 { (m, n) } else { (n, m) };
        let at = |o: usize, i: usize| {
            if axis == 1 {
                t.data()[o * n + i]
            } else {
                t.data()[i * n + o]
            }
        };
        let mut out = Vec::with_capacity(outer);
        for o in 0..outer {
            let mx = (0..inner).map(|i| at(o, i)).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..inner).map(|i| (at(o, i) - mx).exp()).sum();
            out.push(mx + s.ln());
        }
        self.push(Tensor::vector(out), Op::LogSumExpAxis(axis), &[x])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = &self.nodes[x.0].value;
        if t.rank() != 2 || start >= end || end > t.shape()[1] {
            return Err(Error::InvalidArgument {
                context: "slice_cols",
                message: format!("range {start}..{end} invalid for shape {:?}", t.shape()),
            });
        }
        let m = t.shape()[0];
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::from_vec(&[m, end - start], data)?;
        self.push(out, Op::SliceCols { start, end }, &[x])
    }

    /// Pairwise diagonal-Gaussian log-densities: `out[n,k] = log N(z_n; mu_k,
    /// exp(log_std_k)²)`. Fused so mixture-prior terms stay O(B·K·d_z) on the
    /// tape instead of K slice/concat round trips.
    pub fn gauss_pairwise_logpdf(
        &mut self,
        z: NodeId,
        mu: NodeId,
        log_std: NodeId,
    ) -> Result<NodeId> {
        let (tz, tm, ts) =
            (&self.nodes[z.0].value, &self.nodes[mu.0].value, &self.nodes[log_std.0].value);
        let ok = tz.rank() == 2
            && tm.rank() == 2
            && tm.shape() == ts.shape()
            && tz.shape()[1] == tm.shape()[1];
        if !ok {
            return Err(self.mismatch("gauss_pairwise_logpdf", z, mu));
        }
        let (b, dz, kk) = (tz.shape()[0], tz.shape()[1], tm.shape()[0]);
        let mut inv_var = vec![0.0; kk * dz];
        let mut row_const = vec![0.0; kk];
        for k in 0..kk {
            for j in 0..dz {
                let s = ts.data()[k * dz + j];
                inv_var[k * dz + j] = (-2.0 * s).exp();
                row_const[k] += 2.0 * s + LN_2PI;
            }
        }
        let mut out = Vec::with_capacity(b * kk);
        for n in 0..b {
            let zr = tz.row(n);
            for k in 0..kk {
                let mut q = 0.0;
                for j in 0..dz {
                    let diff = zr[j] - tm.data()[k * dz + j];
                    q += diff * diff * inv_var[k * dz + j];
                }
                out.push(-0.5 * (q + row_const[k]));
            }
        }
        let out = Tensor::from_vec(&[b, kk], out)?;
        self.push(out, Op::GaussPairwiseLogPdf, &[z, mu, log_std])
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Returns gradients for every
    /// trainable leaf (zeros when the leaf does not reach the root).
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        let root_val = &self.nodes[root.0].value;
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot { shape: root_val.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_val.shape(), 1.0));

        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if self.nodes[id].trainable_leaf {
                grads[id] = Some(g);
            }
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.trainable_leaf {
                match &grads[id] {
                    None => grads[id] = Some(Tensor::zeros(node.value.shape())),
                    Some(g) if !g.all_finite() => {
                        return Err(Error::NonFinite { op: "backward", detail: None })
                    }
                    _ => {}
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let wants: Vec<bool> =
            node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
        let parent = |i: usize| &self.nodes[node.parents[i].0].value;
        // Ensures the accumulator exists, then applies `f` to it.
        macro_rules! into_parent {
            ($i:expr, $f:expr) => {
                if wants[$i] {
                    let slot = &mut grads[node.parents[$i].0];
                    let acc =
                        slot.get_or_insert_with(|| Tensor::zeros(parent($i).shape()));
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(acc);
                }
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let (a, b) = (parent(0), parent(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                into_parent!(0, |acc: &mut Tensor| {
                    gemm_nt(m, n, k, g.data(), b.data(), acc.data_mut(), true)
                });
                into_parent!(1, |acc: &mut Tensor| {
                    gemm_tn(k, m, n, a.data(), g.data(), acc.data_mut(), true)
                });
            }
            Op::Add => {
                into_parent!(0, |acc: &mut Tensor| acc.add_assign(g));
                into_parent!(1, |acc: &mut Tensor| acc.add_assign(g));
            }
            Op::Sub => {
                into_parent!(0, |acc: &mut Tensor| acc.add_assign(g));
                into_parent!(1, |acc: &mut Tensor| {
                    for (a, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a -= gv;
                    }
                });
            }
            Op::Mul => {
                let (a, b) = (parent(0), parent(1));
                into_parent!(0, |acc: &mut Tensor| {
                    for ((ac, &gv), &bv) in acc.data_mut().iter_mut().zip(g.data()).zip(b.data()) {
                        *ac += gv * bv;
                    }
                });
                into_parent!(1, |acc: &mut Tensor| {
                    for ((ac, &gv), &av) in acc.data_mut().iter_mut().zip(g.data()).zip(a.data()) {
                        *ac += gv * av;
                    }
                });
            }
            Op::BroadcastAddRow => {
                let n = parent(0).shape()[1];
                into_parent!(0, |acc: &mut Tensor| acc.add_assign(g));
                into_parent!(1, |acc: &mut Tensor| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        acc.data_mut()[i % n] += gv;
                    }
                });
            }
            Op::Exp => {
                let y = &node.value;
                into_parent!(0, |acc: &mut Tensor| {
                    for ((ac, &gv), &yv) in acc.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *ac += gv * yv;
                    }
                });
            }
            Op::Log => {
                let x = parent(0);
                into_parent!(0, |acc: &mut Tensor| {
                    for ((ac, &gv), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *ac += gv / xv;
                    }
                });
            }
            Op::Tanh => {
                let y = &node.value;
                into_parent!(0, |acc: &mut Tensor| {
                    for ((ac, &gv), &yv) in acc.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *ac += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Square => {
                let x = parent(0);
                into_parent!(0, |acc: &mut Tensor| {
                    for ((ac, &gv), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *ac += 2.0 * gv * xv;
                    }
                });
            }
            Op::Neg => {
                into_parent!(0, |acc: &mut Tensor| {
                    for (ac, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *ac -= gv;
                    }
                });
            }
            Op::Scale(c) => {
                let c = *c;
                into_parent!(0, |acc: &mut Tensor| {
                    for (ac, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *ac += c * gv;
                    }
                });
            }
            Op::AddScalar => {
                into_parent!(0, |acc: &mut Tensor| acc.add_assign(g));
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let x = parent(0);
                into_parent!(0, |acc: &mut Tensor| {
                    for ((ac, &gv), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if xv > lo && xv < hi {
                            *ac += gv;
                        }
                    }
                });
            }
            Op::SumAll => {
                let gv = g.item();
                into_parent!(0, |acc: &mut Tensor| {
                    for ac in acc.data_mut() {
                        *ac += gv;
                    }
                });
            }
            Op::MeanAll => {
                let gv = g.item() / parent(0).len() as f64;
                into_parent!(0, |acc: &mut Tensor| {
                    for ac in acc.data_mut() {
                        *ac += gv;
                    }
                });
            }
            Op::SumAxis(axis) => {
                let axis = *axis;
                let n = parent(0).shape()[1];
                into_parent!(0, |acc: &mut Tensor| {
                    for (idx, ac) in acc.data_mut().iter_mut().enumerate() {
                        let o = if axis == 1 { idx / n } else { idx % n };
                        *ac += g.data()[o];
                    }
                });
            }
            Op::LogSumExpAxis(axis) => {
                let axis = *axis;
                let x = parent(0);
                let n = x.shape()[1];
                let y = &node.value;
                into_parent!(0, |acc: &mut Tensor| {
                    for (idx, ac) in acc.data_mut().iter_mut().enumerate() {
                        let o = if axis == 1 { idx / n } else { idx % n };
                        *ac += g.data()[o] * (x.data()[idx] - y.data()[o]).exp();
                    }
                });
            }
            Op::SliceCols { start, end } => {
                let (start, end) = (*start, *end);
                let n = parent(0).shape()[1];
                let w = end - start;
                into_parent!(0, |acc: &mut Tensor| {
                    for (idx, &gv) in g.data().iter().enumerate() {
                        let (i, j) = (idx / w, idx % w);
                        acc.data_mut()[i * n + start + j] += gv;
                    }
                });
            }
            Op::GaussPairwiseLogPdf => {
                let (z, mu, ls) = (parent(0), parent(1), parent(2));
                let (b, dz, kk) = (z.shape()[0], z.shape()[1], mu.shape()[0]);
                let inv_var: Vec<f64> = ls.data().iter().map(|&s| (-2.0 * s).exp()).collect();
                into_parent!(0, |acc: &mut Tensor| {
                    for n in 0..b {
                        for k in 0..kk {
                            let gv = g.data()[n * kk + k];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..dz {
                                let diff = z.data()[n * dz + j] - mu.data()[k * dz + j];
                                acc.data_mut()[n * dz + j] -= gv * diff * inv_var[k * dz + j];
                            }
                        }
                    }
                });
                into_parent!(1, |acc: &mut Tensor| {
                    for n in 0..b {
                        for k in 0..kk {
                            let gv = g.data()[n * kk + k];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..dz {
                                let diff = z.data()[n * dz + j] - mu.data()[k * dz + j];
                                acc.data_mut()[k * dz + j] += gv * diff * inv_var[k * dz + j];
                            }
                        }
                    }
                });
                into_parent!(2, |acc: &mut Tensor| {
                    for n in 0..b {
                        for k in 0..kk {
                            let gv = g.data()[n * kk + k];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..dz {
                                let diff = z.data()[n * dz + j] - mu.data()[k * dz + j];
                                acc.data_mut()[k * dz + j] +=
                                    gv * (diff * diff * inv_var[k * dz + j] - 1.0);
                            }
                        }
                    }
                });
            }
        }
    }
}

// ── GEMM kernels (row-major, backed by matrixmultiply) ──────────────────

/// `c[m×n] = a[m×k]·b[k×n]`, or `+=` when `acc`.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], acc: bool) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    let beta = if acc { 1.0 } else { 0.0 };
    // Bounds asserted above; strides describe dense row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c[m×n] = a[m×k]·bt[n×k]ᵀ`, or `+=` when `acc`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], bt: &[f64], c: &mut [f64], acc: bool) {
    assert!(a.len() == m * k && bt.len() == n * k && c.len() == m * n);
    let beta = if acc { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            bt.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c[m×n] = at[k×m]ᵀ·b[k×n]`, or `+=` when `acc`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, at: &[f64], b: &[f64], c: &mut [f64], acc: bool) {
    assert!(at.len() == k * m && b.len() == k * n && c.len() == m * n);
    let beta = if acc { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            at.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}
