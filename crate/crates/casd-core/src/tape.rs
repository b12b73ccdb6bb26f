//! Reverse-mode autodiff over a recorded operation tape.
//!
//! Values are computed eagerly as nodes are appended, so the tape is always
//! in topological order and a single reverse sweep visits every node exactly
//! once. One tape per training step; parameters are registered as leaves
//! carrying a caller-chosen parameter id and gradients accumulate additively
//! when a node fans out.

use crate::error::{CasdError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    /// Row-broadcast add: x is TxD, bias is 1xD.
    AddRow(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    /// a @ b^T with a: MxK, b: NxK.
    MatmulNt(NodeId, NodeId),
    /// Temporal length-3 convolution, zero-padded: x TxDin, w 3xDinxDout, b 1xDout.
    Conv1dSame(NodeId, NodeId, NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    /// Max-subtracted softmax over each row.
    SoftmaxRows(NodeId),
    /// Mean over rows: TxD -> 1xD.
    MeanRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Broadcast multiply by a 1x1 scalar node.
    ScalarMul(NodeId, NodeId),
    Min2(NodeId, NodeId),
    ClampMin(NodeId, f64),
    /// -log softmax(logits)[label] for a 1xC logits row.
    CrossEntropy(NodeId, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by a backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn grad(&self, n: NodeId) -> Option<&Tensor> {
        self.grads[n.0].as_ref()
    }
}

/// Recorded computation with eagerly evaluated node values.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, NodeId)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    /// Leaf carrying a parameter id for gradient extraction.
    pub fn param(&mut self, id: usize, value: Tensor) -> NodeId {
        let n = self.push(value, Op::Param);
        self.params.push((id, n));
        n
    }

    pub fn value(&self, n: NodeId) -> &Tensor {
        &self.nodes[n.0].value
    }

    pub fn scalar_value(&self, n: NodeId) -> f64 {
        self.nodes[n.0].value.scalar_value()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &[(usize, NodeId)] {
        &self.params
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).same_shape(self.value(b)) {
            Ok(())
        } else {
            Err(CasdError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "div")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 || bv.shape() != [1, xv.cols()] {
            return Err(CasdError::Dimension(format!(
                "add_row: x {:?}, bias {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let (t, d) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            for c in 0..d {
                out[r * d + c] = xv.at2(r, c) + bv.at2(0, c);
            }
        }
        let v = Tensor::new(vec![t, d], out)?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(CasdError::Dimension(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let v = matmul_value(av, bv);
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    /// a @ b^T.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return Err(CasdError::Dimension(format!(
                "matmul_nt: {:?} x {:?}^T",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += av.at2(i, p) * bv.at2(j, p);
                }
                out[i * n + j] = acc;
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatmulNt(a, b)))
    }

    pub fn conv1d_same(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 3 || wv.shape()[0] != 3 {
            return Err(CasdError::Dimension(format!(
                "conv1d_same: x {:?}, w {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (t, d_in) = (xv.rows(), xv.cols());
        let d_out = wv.shape()[2];
        if wv.shape()[1] != d_in || bv.shape() != [1, d_out] {
            return Err(CasdError::Dimension(format!(
                "conv1d_same: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let wd = wv.data();
        let mut out = vec![0.0; t * d_out];
        for ti in 0..t {
            for o in 0..d_out {
                let mut acc = bv.at2(0, o);
                for k in 0..3usize {
                    let s = ti as isize + k as isize - 1;
                    if s < 0 || s >= t as isize {
                        continue;
                    }
                    let s = s as usize;
                    for i in 0..d_in {
                        acc += xv.at2(s, i) * wd[(k * d_in + i) * d_out + o];
                    }
                }
                out[ti * d_out + o] = acc;
            }
        }
        let v = Tensor::new(vec![t, d_out], out)?;
        Ok(self.push(v, Op::Conv1dSame(x, w, b)))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus_stable);
        self.push(v, Op::Softplus(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(CasdError::Dimension(format!(
                "softmax_rows: rank-2 expected, got {:?}",
                av.shape()
            )));
        }
        let v = softmax_rows_value(av);
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    /// Temperature-scaled softmax over each row; temperature must be positive.
    pub fn softmax_temp(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        if !(temperature > 0.0) {
            return Err(CasdError::Config(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let scaled = self.scale(a, 1.0 / temperature);
        self.softmax_rows(scaled)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(CasdError::Dimension(format!(
                "mean_rows: rank-2 expected, got {:?}",
                av.shape()
            )));
        }
        let (t, d) = (av.rows(), av.cols());
        let mut out = vec![0.0; d];
        for r in 0..t {
            for c in 0..d {
                out[c] += av.at2(r, c);
            }
        }
        for v in out.iter_mut() {
            *v /= t as f64;
        }
        Ok(self.push(Tensor::row(out), Op::MeanRows(a)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    /// Broadcast multiply tensor `t` by scalar node `s`.
    pub fn scalar_mul(&mut self, s: NodeId, t: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(CasdError::Dimension(format!(
                "scalar_mul: scalar operand has shape {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.scalar_value(s);
        let v = self.value(t).map(|x| x * sv);
        Ok(self.push(v, Op::ScalarMul(s, t)))
    }

    /// Elementwise minimum; the subgradient follows the smaller input
    /// (ties go to the first argument).
    pub fn min2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "min2")?;
        let v = self.value(a).zip_map(self.value(b), f64::min)?;
        Ok(self.push(v, Op::Min2(a, b)))
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(floor));
        self.push(v, Op::ClampMin(a, floor))
    }

    /// -log softmax(logits)[label]; logits must be a 1xC row.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.rows() != 1 {
            return Err(CasdError::Dimension(format!(
                "cross_entropy: logits must be 1xC, got {:?}",
                lv.shape()
            )));
        }
        let c = lv.cols();
        if label >= c {
            return Err(CasdError::Data(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let row = lv.data();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let v = Tensor::scalar(lse - row[label]);
        Ok(self.push(v, Op::CrossEntropy(logits, label)))
    }

    /// Reverse sweep from a single-element loss node. Every recorded node is
    /// visited exactly once; identical tapes produce bit-identical gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(CasdError::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        )?);

        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_op(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor>], n: NodeId, delta: Tensor) -> Result<()> {
        match &mut grads[n.0] {
            Some(g) => {
                *g = g.zip_map(&delta, |a, b| a + b)?;
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn backward_op(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, a, dy.clone())?;
                Self::accumulate(grads, b, dy.clone())?;
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, a, dy.clone())?;
                Self::accumulate(grads, b, dy.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                Self::accumulate(grads, a, dy.zip_map(self.value(b), |d, bv| d * bv)?)?;
                Self::accumulate(grads, b, dy.zip_map(self.value(a), |d, av| d * av)?)?;
            }
            Op::Div(a, b) => {
                let bv = self.value(b);
                Self::accumulate(grads, a, dy.zip_map(bv, |d, x| d / x)?)?;
                let av = self.value(a);
                let db = dy
                    .zip_map(av, |d, x| d * x)?
                    .zip_map(bv, |n, x| -n / (x * x))?;
                Self::accumulate(grads, b, db)?;
            }
            Op::Scale(a, c) => {
                Self::accumulate(grads, a, dy.map(|v| v * c))?;
            }
            Op::AddConst(a) => {
                Self::accumulate(grads, a, dy.clone())?;
            }
            Op::AddRow(x, bias) => {
                Self::accumulate(grads, x, dy.clone())?;
                let (t, d) = (dy.rows(), dy.cols());
                let mut db = vec![0.0; d];
                for r in 0..t {
                    for c in 0..d {
                        db[c] += dy.at2(r, c);
                    }
                }
                Self::accumulate(grads, bias, Tensor::row(db))?;
            }
            Op::Matmul(a, b) => {
                // dA = dY @ B^T, dB = A^T @ dY
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += dy.at2(i, j) * bv.at2(p, j);
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += av.at2(i, p) * dy.at2(i, j);
                        }
                        db[p * n + j] = acc;
                    }
                }
                Self::accumulate(grads, a, Tensor::new(vec![m, k], da)?)?;
                Self::accumulate(grads, b, Tensor::new(vec![k, n], db)?)?;
            }
            Op::MatmulNt(a, b) => {
                // Y = A @ B^T: dA = dY @ B, dB = dY^T @ A
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += dy.at2(i, j) * bv.at2(j, p);
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; n * k];
                for j in 0..n {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += dy.at2(i, j) * av.at2(i, p);
                        }
                        db[j * k + p] = acc;
                    }
                }
                Self::accumulate(grads, a, Tensor::new(vec![m, k], da)?)?;
                Self::accumulate(grads, b, Tensor::new(vec![n, k], db)?)?;
            }
            Op::Conv1dSame(x, w, b) => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (t, d_in) = (xv.rows(), xv.cols());
                let d_out = wv.shape()[2];
                let wd = wv.data();
                let mut dx = vec![0.0; t * d_in];
                let mut dw = vec![0.0; 3 * d_in * d_out];
                let mut db = vec![0.0; d_out];
                for ti in 0..t {
                    for o in 0..d_out {
                        let g = dy.at2(ti, o);
                        db[o] += g;
                        for k in 0..3usize {
                            let s = ti as isize + k as isize - 1;
                            if s < 0 || s >= t as isize {
                                continue;
                            }
                            let s = s as usize;
                            for i in 0..d_in {
                                dx[s * d_in + i] += g * wd[(k * d_in + i) * d_out + o];
                                dw[(k * d_in + i) * d_out + o] += g * xv.at2(s, i);
                            }
                        }
                    }
                }
                Self::accumulate(grads, x, Tensor::new(vec![t, d_in], dx)?)?;
                Self::accumulate(grads, w, Tensor::new(vec![3, d_in, d_out], dw)?)?;
                Self::accumulate(grads, b, Tensor::row(db))?;
            }
            Op::Softplus(a) => {
                let da = dy.zip_map(self.value(a), |d, x| d * sigmoid_stable(x))?;
                Self::accumulate(grads, a, da)?;
            }
            Op::Log(a) => {
                Self::accumulate(grads, a, dy.zip_map(self.value(a), |d, x| d / x)?)?;
            }
            Op::Sqrt(a) => {
                let da = dy.zip_map(&node.value, |d, y| d * 0.5 / y)?;
                Self::accumulate(grads, a, da)?;
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let (r, c) = (p.rows(), p.cols());
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += dy.at2(i, j) * p.at2(i, j);
                    }
                    for j in 0..c {
                        dx[i * c + j] = p.at2(i, j) * (dy.at2(i, j) - dot);
                    }
                }
                Self::accumulate(grads, a, Tensor::new(vec![r, c], dx)?)?;
            }
            Op::MeanRows(a) => {
                let t = self.value(a).rows();
                let d = self.value(a).cols();
                let inv = 1.0 / t as f64;
                let mut dx = vec![0.0; t * d];
                for r in 0..t {
                    for c in 0..d {
                        dx[r * d + c] = dy.at2(0, c) * inv;
                    }
                }
                Self::accumulate(grads, a, Tensor::new(vec![t, d], dx)?)?;
            }
            Op::Sum(a) => {
                let g = dy.scalar_value();
                Self::accumulate(grads, a, self.value(a).map(|_| g))?;
            }
            Op::Mean(a) => {
                let g = dy.scalar_value() / self.value(a).numel() as f64;
                Self::accumulate(grads, a, self.value(a).map(|_| g))?;
            }
            Op::ScalarMul(s, t) => {
                let sv = self.scalar_value(s);
                Self::accumulate(grads, t, dy.map(|d| d * sv))?;
                let ds: f64 = dy
                    .data()
                    .iter()
                    .zip(self.value(t).data())
                    .map(|(d, x)| d * x)
                    .sum();
                Self::accumulate(grads, s, Tensor::new(self.value(s).shape().to_vec(), vec![ds])?)?;
            }
            Op::Min2(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let mut ga = vec![0.0; dy.numel()];
                let mut gb = vec![0.0; dy.numel()];
                for (i, d) in dy.data().iter().enumerate() {
                    if av.data()[i] <= bv.data()[i] {
                        ga[i] = *d;
                    } else {
                        gb[i] = *d;
                    }
                }
                Self::accumulate(grads, a, Tensor::new(av.shape().to_vec(), ga)?)?;
                Self::accumulate(grads, b, Tensor::new(bv.shape().to_vec(), gb)?)?;
            }
            Op::ClampMin(a, floor) => {
                let da = dy.zip_map(self.value(a), |d, x| if x > floor { d } else { 0.0 })?;
                Self::accumulate(grads, a, da)?;
            }
            Op::CrossEntropy(logits, label) => {
                let lv = self.value(logits);
                let p = softmax_rows_value(lv);
                let g = dy.scalar_value();
                let mut dl = vec![0.0; lv.numel()];
                for j in 0..lv.cols() {
                    let indicator = if j == label { 1.0 } else { 0.0 };
                    dl[j] = g * (p.at2(0, j) - indicator);
                }
                Self::accumulate(grads, logits, Tensor::new(lv.shape().to_vec(), dl)?)?;
            }
        }
        Ok(())
    }
}

/// Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|)).
pub fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Overflow-safe logistic function.
pub fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain-value matmul shared by the forward pass and the backward rules.
pub fn matmul_value(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.at2(i, p);
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b.at2(p, j);
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul output shape")
}

/// Max-subtracted stable softmax over each row of a rank-2 tensor.
pub fn softmax_rows_value(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x.data()[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..c {
            let e = (row[j] - m).exp();
            out[i * c + j] = e;
            s += e;
        }
        for j in 0..c {
            out[i * c + j] /= s;
        }
    }
    Tensor::new(vec![r, c], out).expect("softmax output shape")
}
